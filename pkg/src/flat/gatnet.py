"""Target network: fully connected multi-head GAT over feature nodes.

Each row of the target split becomes a graph whose nodes are its columns,
node j starting as ``[p_j ++ x_j]``. All rows share the generated weights
and are evaluated in one vectorised pass (rows never interact). Heads are
concatenated at every layer, the bias is added after aggregation, and no
activation sits between layers.
"""

import numpy as np

from . import numkernel as nk


def build_nodes(row_x, p):
    """Initial node states. ``row_x``: (n_cols,) or (rows, n_cols); ``p``: (n_cols, d_c)."""
    p = nk.as_tensor(p)
    x = np.asarray(row_x, dtype=np.float64)
    single = x.ndim == 1
    if single:
        x = x[None, :]
    if p.ndim != 2 or x.shape[1] != p.shape[0]:
        raise ValueError(
            f"column embeddings have {p.shape[0] if p.ndim == 2 else p.shape} rows, features have {x.shape[1]} columns"
        )
    rows, c = x.shape
    nodes = nk.concat([nk.broadcast_to(p, (rows, c, p.shape[1])), nk.Tensor(x[:, :, None])], axis=-1)
    return nodes[0] if single else nodes


def _project(nodes, W):
    # nodes: (R, C, d_in), W: (H, d, d_in) -> (R, H, C, d)
    R, C, d_in = nodes.shape
    return nk.matmul(nk.reshape(nodes, (R, 1, C, d_in)), nk.swapaxes(W, -1, -2))


def _scores(Wh, a):
    # a: (H, 2d); returns src, dst of shape (R, H, C)
    H, two_d = a.shape
    d = two_d // 2
    a_src = nk.reshape(a[:, :d], (H, d, 1))
    a_dst = nk.reshape(a[:, d:], (H, d, 1))
    R, _, C, _ = Wh.shape
    src = nk.reshape(nk.matmul(Wh, a_src), (R, H, C))
    dst = nk.reshape(nk.matmul(Wh, a_dst), (R, H, C))
    return src, dst


def attention_coeffs(nodes, a, W):
    """alpha of shape (R, H, C, C): row j is a softmax over neighbours k (self included).

    Also accepts a single graph (C, d_in) with single-head a (2d,) and W (d, d_in),
    in which case the result is (C, C).
    """
    nodes, a, W = nk.as_tensor(nodes), nk.as_tensor(a), nk.as_tensor(W)
    single = nodes.ndim == 2
    if single:
        nodes = nk.reshape(nodes, (1,) + nodes.shape)
        a = nk.reshape(a, (1, -1))
        W = nk.reshape(W, (1,) + W.shape)
    Wh = _project(nodes, W)
    alpha = nk.attention_softmax(*_scores(Wh, a))
    return alpha[0, 0] if single else alpha


def gat_layer(nodes, a, b, W, return_alpha=False):
    """One GAT layer; heads concatenated. nodes (R, C, d_in) -> (R, C, H*d)."""
    nodes = nk.as_tensor(nodes)
    single = nodes.ndim == 2
    if single:
        nodes = nk.reshape(nodes, (1,) + nodes.shape)
    H, d, d_in = W.shape
    if nodes.shape[-1] != d_in or a.shape != (H, 2 * d) or b.shape != (H, d):
        raise ValueError(
            f"gat_layer: nodes {nodes.shape}, a {a.shape}, b {b.shape}, W {W.shape} are inconsistent"
        )
    Wh = _project(nodes, W)
    alpha = nk.attention_softmax(*_scores(Wh, a))
    agg = nk.add(nk.matmul(alpha, Wh), nk.reshape(b, (H, 1, d)))
    R, _, C, _ = agg.shape
    out = nk.reshape(nk.swapaxes(agg, 1, 2), (R, C, H * d))
    if single:
        out = out[0]
    return (out, alpha) if return_alpha else out


def forward_logits(target_x, p, gw, alphas=None):
    """Unnormalised class scores, shape (rows, n_classes)."""
    h = build_nodes(target_x, p)
    if h.ndim == 2:
        h = nk.reshape(h, (1,) + h.shape)
    for l in range(len(gw.W)):
        if alphas is None:
            h = gat_layer(h, gw.a[l], gw.b[l], gw.W[l])
        else:
            h, alpha = gat_layer(h, gw.a[l], gw.b[l], gw.W[l], return_alpha=True)
            alphas.append(alpha)
    pooled = nk.mean(h, axis=1)
    if pooled.shape[-1] != gw.W_L.shape[1]:
        raise ValueError(f"pooled width {pooled.shape[-1]} does not match classifier {gw.W_L.shape}")
    return nk.matmul(pooled, nk.swapaxes(gw.W_L, 0, 1))


def predict(target_x, p, gw):
    """Class probabilities, shape (rows, n_classes); every row sums to 1."""
    return nk.softmax(forward_logits(target_x, p, gw), axis=-1)
