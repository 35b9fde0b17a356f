"""Model dimensions and the flat parameter store shared by all sub-networks."""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from .numkernel import Tensor

THETA_KINDS = ("a", "b", "W", "L")


@dataclass(frozen=True)
class ModelConfig:
    n_classes: int = 2
    d_e: int = 64  # dataset embedding width (and encoder hidden width)
    hidden: int = 64
    d_c: int = 15  # column embedding width
    res_blocks: int = 4
    heads: int = 2
    gat_hidden: int = 128  # concatenated over heads
    gat_out: int = 16  # concatenated over heads

    def __post_init__(self):
        if self.n_classes < 2:
            raise ValueError("n_classes must be >= 2")
        if self.gat_hidden % self.heads or self.gat_out % self.heads:
            raise ValueError("GAT widths must be divisible by the head count")
        if self.res_blocks < 1:
            raise ValueError("res_blocks must be >= 1")

    @property
    def label_dim(self):
        # binary labels enter f1 as one scalar, K-class labels one-hot
        return 1 if self.n_classes == 2 else self.n_classes

    @property
    def node_dim(self):
        return self.d_c + 1

    def gat_layers(self):
        """(d_in, d_out_per_head) for each GAT layer."""
        dims = [self.node_dim, self.gat_hidden, self.gat_out]
        return [(dims[i], dims[i + 1] // self.heads) for i in range(2)]

    def decoder_sizes(self):
        """Flattened output width of each generator h_1..h_L."""
        sizes = []
        for d_in, d in self.gat_layers():
            sizes.append(self.heads * (2 * d + d + d * d_in))
        sizes.append(self.n_classes * self.gat_out)
        return sizes

    def to_dict(self):
        return asdict(self)


def param_shapes(cfg: ModelConfig):
    """Ordered (name, shape) list for every trainable array."""
    shapes = []

    def res_mlp(prefix, d_in):
        width = d_in
        for k in range(cfg.res_blocks):
            shapes.append((f"{prefix}.{k}.w", (width, cfg.hidden)))
            shapes.append((f"{prefix}.{k}.b", (cfg.hidden,)))
            width = cfg.hidden

    def mlp2(prefix, d_in, d_out):
        shapes.append((f"{prefix}.0.w", (d_in, cfg.hidden)))
        shapes.append((f"{prefix}.0.b", (cfg.hidden,)))
        shapes.append((f"{prefix}.1.w", (cfg.hidden, d_out)))
        shapes.append((f"{prefix}.1.b", (d_out,)))

    res_mlp("f1", 1 + cfg.label_dim)
    mlp2("f2", cfg.hidden, cfg.hidden)
    res_mlp("f3", cfg.hidden)
    mlp2("g", cfg.hidden, cfg.d_c)
    for i, size in enumerate(cfg.decoder_sizes()):
        shapes.append((f"h{i + 1}", (cfg.d_e, size)))
    shapes.append(("log_theta", (len(THETA_KINDS),)))
    if cfg.hidden != cfg.d_e:
        raise ValueError("encoder hidden width must equal d_e")
    return shapes


class ParamStore:
    """All trainable arrays as named views into one contiguous float64 buffer."""

    def __init__(self, cfg: ModelConfig, flat=None):
        self.cfg = cfg
        self.shapes = param_shapes(cfg)
        total = sum(int(np.prod(s)) for _, s in self.shapes)
        if flat is None:
            flat = np.zeros(total)
        flat = np.ascontiguousarray(flat, dtype=np.float64)
        if flat.shape != (total,):
            raise ValueError(f"parameter buffer has {flat.size} values, config needs {total}")
        self.flat = flat
        self.arrays = {}
        self._slices = {}
        off = 0
        for name, shape in self.shapes:
            n = int(np.prod(shape))
            self._slices[name] = slice(off, off + n)
            self.arrays[name] = flat[off:off + n].reshape(shape)
            off += n

    def __getitem__(self, name):
        return self.arrays[name]

    def __len__(self):
        return self.flat.size

    @property
    def theta(self):
        return dict(zip(THETA_KINDS, np.exp(self.arrays["log_theta"])))

    def copy(self):
        return ParamStore(self.cfg, self.flat.copy())

    def leaves(self, requires_grad=True):
        """Fresh graph leaves sharing memory with the store."""
        return {name: Tensor(arr, requires_grad=requires_grad) for name, arr in self.arrays.items()}

    def grad_buffer(self):
        """Reusable scratch array shaped like the parameter buffer."""
        if getattr(self, "_grad_buf", None) is None:
            self._grad_buf = np.zeros_like(self.flat)
        return self._grad_buf

    def gather_grad(self, leaves, out=None):
        """Leaf gradients packed in buffer order (zeros where a leaf got none)."""
        grad = np.zeros_like(self.flat) if out is None else out
        for name, leaf in leaves.items():
            sl = self._slices[name]
            if leaf.grad is None:
                grad[sl] = 0.0
            else:
                grad[sl] = np.ravel(leaf.grad)
        return grad


def init_params(cfg: ModelConfig, rng, theta=None):
    """Uniform fan-in initialisation; g's output bias starts at zero.

    ``theta`` holds the four initial learnable norms in THETA_KINDS order
    (all 1.0 when omitted).
    """
    store = ParamStore(cfg)
    for name, shape in store.shapes:
        if name == "log_theta":
            continue
        fan_in = shape[0] if len(shape) == 2 else store[name.rsplit(".", 1)[0] + ".w"].shape[0]
        bound = 1.0 / np.sqrt(fan_in)
        store[name][...] = rng.uniform(-bound, bound, size=shape)
    store["g.1.b"][...] = 0.0
    theta = np.ones(len(THETA_KINDS)) if theta is None else np.asarray(theta, dtype=np.float64)
    if theta.shape != (len(THETA_KINDS),) or not np.all(theta > 0):
        raise ValueError(f"initial theta must be {len(THETA_KINDS)} positive values, got {theta}")
    store["log_theta"][...] = np.log(theta)
    return store
