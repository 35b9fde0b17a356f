"""Permutation-invariant dataset encoder and per-column encoder.

Every (row, column) cell of the meta split is paired with its row label and
pushed through ``f1``; averaging over rows gives one pooled vector per
column. ``g`` maps each pooled vector to a column embedding, while ``f2``,
a mean over columns and ``f3`` give the dataset embedding.
"""

import numpy as np

from . import numkernel as nk


def linear(x, params, prefix):
    return nk.bias_add(nk.matmul(x, params[prefix + ".w"]), params[prefix + ".b"])


def residual_mlp(x, params, prefix, blocks):
    """Linear->ReLU blocks; every block after the first adds a skip connection."""
    h = nk.relu(linear(x, params, f"{prefix}.0"))
    for k in range(1, blocks):
        h = nk.add(h, nk.relu(linear(h, params, f"{prefix}.{k}")))
    return h


def mlp2(x, params, prefix):
    return linear(nk.relu(linear(x, params, f"{prefix}.0")), params, f"{prefix}.1")


def label_features(meta_y, n_classes):
    """Binary labels as one {0,1} scalar, K-class labels one-hot."""
    y = np.asarray(meta_y, dtype=np.int64)
    if n_classes == 2:
        return y[:, None].astype(np.float64)
    return np.eye(n_classes)[y]


def cell_inputs(meta_x, meta_y, n_classes):
    """(N_meta, n_cols, 1 + label_dim) array of [x_ij, enc(y_i)]."""
    x = np.asarray(meta_x, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] == 0:
        raise ValueError(f"meta_x must be a nonempty 2-D array, got shape {x.shape}")
    lab = label_features(meta_y, n_classes)
    if lab.shape[0] != x.shape[0]:
        raise ValueError(f"meta_x has {x.shape[0]} rows but meta_y has {lab.shape[0]}")
    n, c = x.shape
    return np.concatenate([x[:, :, None], np.broadcast_to(lab[:, None, :], (n, c, lab.shape[1]))], axis=2)


def pool_rows(meta_x, meta_y, params, cfg):
    """Row-averaged f1 features, one 64-vector per column: (n_cols, hidden)."""
    cells = nk.Tensor(cell_inputs(meta_x, meta_y, cfg.n_classes))
    return nk.mean(residual_mlp(cells, params, "f1", cfg.res_blocks), axis=0)


def encode_dataset(pooled, params, cfg):
    """Dataset embedding e, shape (d_e,)."""
    col_mean = nk.mean(mlp2(pooled, params, "f2"), axis=0, keepdims=True)
    return nk.reshape(residual_mlp(col_mean, params, "f3", cfg.res_blocks), (cfg.d_e,))


def encode_columns(pooled, params, cfg):
    """Column embeddings p, shape (n_cols, d_c); row j depends only on column j."""
    return mlp2(pooled, params, "g")


def encode(meta_x, meta_y, params, cfg):
    pooled = pool_rows(meta_x, meta_y, params, cfg)
    return encode_dataset(pooled, params, cfg), encode_columns(pooled, params, cfg)
