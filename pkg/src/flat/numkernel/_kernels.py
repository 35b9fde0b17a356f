"""Hot inner loops: fused GAT attention softmax and the Adam/AdamW update.

Each kernel has a numba ``@njit`` version and a pure-numpy version with
identical semantics. The numba path is used when numba imports and the
environment variable ``FLAT_DISABLE_NUMBA`` is unset or ``0``. Both
implementations are importable directly (``numpy_impl`` / ``numba_impl``)
so they can be compared side by side.
"""

import os
from types import SimpleNamespace

import numpy as np


def _np_attention_forward(s, t, slope):
    # s, t: (B, n) source/target scores; returns alpha (B, n, n), rows sum to 1
    z = s[:, :, None] + t[:, None, :]
    z = np.where(z > 0.0, z, slope * z)
    z -= z.max(axis=2, keepdims=True)
    np.exp(z, out=z)
    z /= z.sum(axis=2, keepdims=True)
    return z


def _np_attention_backward(s, t, alpha, galpha, slope):
    dz = alpha * (galpha - (galpha * alpha).sum(axis=2, keepdims=True))
    pre = s[:, :, None] + t[:, None, :]
    dz = np.where(pre > 0.0, dz, slope * dz)
    return dz.sum(axis=2), dz.sum(axis=1)


def _np_adam_update(p, g, m, v, lr, beta1, beta2, eps, decay, bc1, bc2):
    # in place; decay is the decoupled factor lr * weight_decay
    if decay != 0.0:
        p *= 1.0 - decay
    m *= beta1
    m += (1.0 - beta1) * g
    v *= beta2
    v += (1.0 - beta2) * (g * g)
    p -= lr * (m / bc1) / (np.sqrt(v / bc2) + eps)


numpy_impl = SimpleNamespace(
    name="numpy",
    attention_forward=_np_attention_forward,
    attention_backward=_np_attention_backward,
    adam_update=_np_adam_update,
)


def _build_numba_impl():
    from numba import njit

    @njit(cache=True)
    def attention_forward(s, t, slope):
        B, n = s.shape
        out = np.empty((B, n, n))
        for b in range(B):
            for j in range(n):
                mx = -np.inf
                for k in range(n):
                    z = s[b, j] + t[b, k]
                    if z <= 0.0:
                        z = slope * z
                    out[b, j, k] = z
                    if z > mx:
                        mx = z
                tot = 0.0
                for k in range(n):
                    ez = np.exp(out[b, j, k] - mx)
                    out[b, j, k] = ez
                    tot += ez
                for k in range(n):
                    out[b, j, k] /= tot
        return out

    @njit(cache=True)
    def attention_backward(s, t, alpha, galpha, slope):
        B, n = s.shape
        ds = np.zeros((B, n))
        dt = np.zeros((B, n))
        for b in range(B):
            for j in range(n):
                dot = 0.0
                for k in range(n):
                    dot += galpha[b, j, k] * alpha[b, j, k]
                for k in range(n):
                    dz = alpha[b, j, k] * (galpha[b, j, k] - dot)
                    if s[b, j] + t[b, k] <= 0.0:
                        dz = slope * dz
                    ds[b, j] += dz
                    dt[b, k] += dz
        return ds, dt

    @njit(cache=True)
    def adam_update(p, g, m, v, lr, beta1, beta2, eps, decay, bc1, bc2):
        keep = 1.0 - decay
        c1 = 1.0 - beta1
        c2 = 1.0 - beta2
        pf = p.ravel()
        gf = g.ravel()
        mf = m.ravel()
        vf = v.ravel()
        for i in range(pf.size):
            if decay != 0.0:
                pf[i] = pf[i] * keep
            gi = gf[i]
            mf[i] = mf[i] * beta1 + c1 * gi
            vf[i] = vf[i] * beta2 + c2 * (gi * gi)
            pf[i] -= lr * (mf[i] / bc1) / (np.sqrt(vf[i] / bc2) + eps)

    return SimpleNamespace(
        name="numba",
        attention_forward=attention_forward,
        attention_backward=attention_backward,
        adam_update=adam_update,
    )


try:
    numba_impl = _build_numba_impl()
except ImportError:  # pragma: no cover - numba is an optional accelerator
    numba_impl = None


def _select():
    flag = os.environ.get("FLAT_DISABLE_NUMBA", "0").strip().lower()
    if flag not in ("", "0", "false", "no") or numba_impl is None:
        return numpy_impl
    return numba_impl


active = _select()
