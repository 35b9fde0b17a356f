"""Rule-based synthetic tabular datasets for desk-scale training and tests."""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .data import DatasetTable

FAMILIES = ("sign", "linear", "diagonal", "xor")


def _latent(rng, rows, cols):
    return rng.standard_normal((rows, cols))


def rule_from_info(info):
    """Rebuild the labelling function on features (not latents) from a dataset's info."""
    shift, scale = np.asarray(info["shift"]), np.asarray(info["scale"])
    fam, cols = info["family"], info["cols"]

    def label(x):
        z = (np.asarray(x, dtype=np.float64) - shift) / scale
        if fam == "sign":
            return (info["sign"] * z[:, cols[0]] > 0).astype(np.int64)
        a, b = z[:, cols[0]], z[:, cols[1]]
        if fam == "linear":
            return (info["w"][0] * a + info["w"][1] * b > 0).astype(np.int64)
        if fam == "diagonal":
            return (a > b).astype(np.int64)
        return ((a > 0) ^ (b > 0)).astype(np.int64)

    return label


def make_rule(family, n_cols, rng):
    """Return (rule_fn, description); rule_fn maps latent z (rows, cols) -> {0,1} labels."""
    if n_cols < 2:
        raise ValueError("rules need at least 2 columns")
    a, b = (int(v) for v in rng.choice(n_cols, size=2, replace=False))
    if family == "sign":
        s = float(rng.choice([-1.0, 1.0]))
        return (lambda z: (s * z[:, a] > 0).astype(np.int64)), {"family": family, "cols": [a], "sign": s}
    if family == "linear":
        angle = rng.uniform(0, 2 * np.pi)
        w = np.array([np.cos(angle), np.sin(angle)])
        return (lambda z: (w[0] * z[:, a] + w[1] * z[:, b] > 0).astype(np.int64)), {
            "family": family, "cols": [a, b], "w": w.tolist()}
    if family == "diagonal":
        return (lambda z: (z[:, a] > z[:, b]).astype(np.int64)), {"family": family, "cols": [a, b]}
    if family == "xor":
        return (lambda z: ((z[:, a] > 0) ^ (z[:, b] > 0)).astype(np.int64)), {"family": family, "cols": [a, b]}
    raise ValueError(f"unknown rule family {family!r}; choose from {FAMILIES}")


def make_dataset(name, family, rows, cols, rng, label_noise=0.0):
    """One dataset: latent N(0,1) columns under a random affine rescale, labelled by a rule.

    ``info`` records the rule and the per-column ``shift``/``scale``, so the
    latent values (and hence the labels) can be recovered from the features.
    """
    z = _latent(rng, rows, cols)
    rule, info = make_rule(family, cols, rng)
    y = rule(z)
    if label_noise > 0:
        flip = rng.random(rows) < label_noise
        y = np.where(flip, 1 - y, y)
    shift = rng.uniform(-5, 5, size=cols)
    scale = np.exp(rng.uniform(-1.5, 1.5, size=cols))
    x = shift + scale * z
    info = dict(info, rows=rows, n_cols=cols, label_noise=label_noise, shift=shift.tolist(), scale=scale.tolist())
    return DatasetTable(name, x, y, 2), rule, info


def perturbed_grid(rng, size=4, jitter=0.15):
    """A size x size grid in [-1.5, 1.5]^2 with uniform jitter, labelled 1 where x1 > x2."""
    g = np.linspace(-1.5, 1.5, size)
    xx, yy = np.meshgrid(g, g, indexing="ij")
    pts = np.stack([xx.ravel(), yy.ravel()], axis=1)
    pts = pts + rng.uniform(-jitter, jitter, size=pts.shape)
    # diagonal points sit on the boundary; nudge them off it so every label is unambiguous
    on_diag = np.abs(pts[:, 0] - pts[:, 1]) < 1e-3
    pts[on_diag, 0] += 2e-3
    labels = (pts[:, 0] > pts[:, 1]).astype(np.int64)
    return pts, labels


def synth_corpus(family, n_datasets, rows, cols, seed, label_noise=0.0, prefix="synth"):
    """Generate datasets whose labels follow seeded rules.

    ``family`` is one of FAMILIES, ``"mixed"`` (uniform over families) or a
    list of families to draw from. ``cols`` is an int or an inclusive
    ``(low, high)`` range. Returns a list of (DatasetTable, info).
    """
    rng = np.random.default_rng(seed)
    if family == "mixed":
        pool = list(FAMILIES)
    elif isinstance(family, str):
        pool = [family]
    else:
        pool = list(family)
    for f in pool:
        if f not in FAMILIES:
            raise ValueError(f"unknown rule family {f!r}; choose from {FAMILIES}")
    lo, hi = (cols, cols) if np.isscalar(cols) else cols
    if lo < 2 or hi < lo:
        raise ValueError("column counts must satisfy 2 <= low <= high")
    out = []
    for i in range(n_datasets):
        fam = pool[int(rng.integers(len(pool)))]
        c = int(rng.integers(lo, hi + 1))
        d, _, info = make_dataset(f"{prefix}_{i:03d}_{fam}", fam, rows, c, rng, label_noise)
        out.append((d, info))
    return out


def write_csv(d: DatasetTable, path):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    body = np.concatenate([d.features, d.labels[:, None].astype(np.float64)], axis=1)
    fmt = ["%.17g"] * d.n_cols + ["%d"]
    np.savetxt(path, body, delimiter=",", fmt=fmt)
    return path


def write_corpus(datasets, out_dir):
    return [write_csv(d, Path(out_dir) / f"{d.name}.csv") for d, *_ in datasets]
