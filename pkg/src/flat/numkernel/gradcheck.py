"""Central finite-difference check of reverse-mode gradients."""

import numpy as np

from .tensor import Tensor


def relative_error(analytic, numeric):
    scale = np.maximum(1.0, np.maximum(np.abs(analytic), np.abs(numeric)))
    return np.abs(analytic - numeric) / scale


def finite_diff_check(f, params, step=1e-5, max_coords=None, rng=None):
    """Max relative error between backprop gradients and central differences.

    ``f`` maps a dict of Tensors (same keys as ``params``) to a scalar Tensor.
    ``max_coords`` caps how many coordinates per array are probed; chosen
    uniformly with ``rng`` when the array is larger.
    """
    leaves = {k: Tensor(np.array(v, dtype=np.float64), requires_grad=True) for k, v in params.items()}
    f(leaves).backward()
    rng = rng if rng is not None else np.random.default_rng(0)

    worst = 0.0
    for name, base in params.items():
        base = np.array(base, dtype=np.float64)
        analytic = leaves[name].grad
        analytic = np.zeros_like(base) if analytic is None else np.asarray(analytic)
        flat_idx = np.arange(base.size)
        if max_coords is not None and base.size > max_coords:
            flat_idx = rng.choice(base.size, size=max_coords, replace=False)
        for i in flat_idx:
            idx = np.unravel_index(i, base.shape)
            vals = []
            for sign in (1.0, -1.0):
                bumped = {k: Tensor(np.array(v, dtype=np.float64)) for k, v in params.items()}
                bumped[name].data[idx] = base[idx] + sign * step
                vals.append(float(f(bumped).data))
            numeric = (vals[0] - vals[1]) / (2.0 * step)
            worst = max(worst, float(relative_error(analytic[idx], numeric)))
    return worst
