"""Weight decoder: bias-free linear generators with learnable-norm L2 normalisation.

Generator ``h_l`` maps the dataset embedding to a flat vector laid out
kind-major, ``[a heads | b heads | W heads]`` for GAT layers and just the
classifier matrix for the last one. Each (layer, head, kind) block is
scaled to unit L2 norm and multiplied by the shared norm for that kind.
"""

from dataclasses import dataclass

import numpy as np

from . import numkernel as nk
from .model import THETA_KINDS

MIN_BLOCK_NORM = 1e-12


class DegenerateWeightsError(ValueError):
    """A generated block has (numerically) zero norm, so it has no direction."""


@dataclass
class GeneratedWeights:
    """Per-layer head-stacked attention vectors, biases and transforms.

    ``a[l]``: (heads, 2*d), ``b[l]``: (heads, d), ``W[l]``: (heads, d, d_in);
    ``W_L``: (n_classes, gat_out). All entries are graph Tensors.
    """

    a: list
    b: list
    W: list
    W_L: object

    def numpy(self):
        return {
            "a": [t.data.copy() for t in self.a],
            "b": [t.data.copy() for t in self.b],
            "W": [t.data.copy() for t in self.W],
            "W_L": self.W_L.data.copy(),
        }


def theta_tensor(params):
    """Learnable norms as a (4,) Tensor; stored as logs so positivity is structural."""
    return nk.exp(params["log_theta"])


def _scaled_blocks(raw, theta_k, what):
    """raw: (..., blocks, size) -> each block rescaled to norm theta_k."""
    n = nk.norm(raw, axis=-1, keepdims=True)
    if np.any(n.data < MIN_BLOCK_NORM):
        raise DegenerateWeightsError(f"generated {what} block has norm below {MIN_BLOCK_NORM:g}")
    return nk.mul(nk.div(raw, n), theta_k)


def normalize_raw(raws, theta, cfg):
    """Split raw generator outputs into blocks and apply the learnable norms.

    ``raws`` is one Tensor per generator (length ``cfg.decoder_sizes()``);
    ``theta`` is a (4,) Tensor in THETA_KINDS order.
    """
    H = cfg.heads
    th = {k: nk.take(theta, i) for i, k in enumerate(THETA_KINDS)}
    a_list, b_list, w_list = [], [], []
    for l, (d_in, d) in enumerate(cfg.gat_layers()):
        raw = nk.reshape(raws[l], (-1,))
        sa, sb = H * 2 * d, H * d
        a_list.append(_scaled_blocks(nk.reshape(raw[0:sa], (H, 2 * d)), th["a"], f"layer {l + 1} a"))
        b_list.append(_scaled_blocks(nk.reshape(raw[sa:sa + sb], (H, d)), th["b"], f"layer {l + 1} b"))
        w = _scaled_blocks(nk.reshape(raw[sa + sb:], (H, d * d_in)), th["W"], f"layer {l + 1} W")
        w_list.append(nk.reshape(w, (H, d, d_in)))
    raw_l = nk.reshape(raws[-1], (1, -1))
    w_l = nk.reshape(_scaled_blocks(raw_l, th["L"], "classifier W"), (cfg.n_classes, cfg.gat_out))
    return GeneratedWeights(a_list, b_list, w_list, w_l)


def raw_outputs(e, params, cfg):
    e2 = nk.reshape(e, (1, cfg.d_e))
    return [nk.matmul(e2, params[f"h{i + 1}"]) for i in range(len(cfg.decoder_sizes()))]


def generate_weights(e, params, cfg):
    """Dataset embedding -> GeneratedWeights for the target network."""
    e = nk.as_tensor(e)
    if not np.all(np.isfinite(e.data)):
        raise ValueError("dataset embedding contains non-finite values")
    return normalize_raw(raw_outputs(e, params, cfg), theta_tensor(params), cfg)


def generate_weights_batch(es, params, cfg):
    """GeneratedWeights for several embeddings through one generator matmul each.

    Equivalent to calling :func:`generate_weights` per embedding; stacking keeps
    the generator gradient a single (d_e, size) product per step.
    """
    E = nk.concat([nk.reshape(nk.as_tensor(e), (1, cfg.d_e)) for e in es], axis=0)
    if not np.all(np.isfinite(E.data)):
        raise ValueError("dataset embedding contains non-finite values")
    raws = [nk.matmul(E, params[f"h{i + 1}"]) for i in range(len(cfg.decoder_sizes()))]
    theta = theta_tensor(params)
    return [normalize_raw([r[t] for r in raws], theta, cfg) for t in range(len(es))]


def init_theta(mode, value=1.0):
    """Initial learnable norms in THETA_KINDS order.

    ``mode="fixed"`` sets every norm to ``value``; ``mode="recorded"`` reads the
    final norms of a prior run from ``value`` (a Checkpoint, a checkpoint
    path, or a mapping kind -> norm).
    """
    if mode == "fixed":
        v = float(value)
        if not np.isfinite(v) or v <= 0:
            raise ValueError(f"fixed theta must be positive, got {value!r}")
        return np.full(len(THETA_KINDS), v)
    if mode == "recorded":
        if isinstance(value, dict):
            recorded = value
        else:
            from .checkpoint import Checkpoint, load_checkpoint

            ckpt = value if isinstance(value, Checkpoint) else load_checkpoint(value)
            recorded = ckpt.params.theta
        vals = np.array([float(recorded[k]) for k in THETA_KINDS])
        if not np.all(vals > 0):
            raise ValueError(f"recorded theta must be positive, got {vals.tolist()}")
        return vals
    raise ValueError(f"unknown theta init mode {mode!r}; expected 'fixed' or 'recorded'")
