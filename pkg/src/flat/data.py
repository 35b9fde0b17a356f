"""Tabular datasets, one-vs-all binarisation, joint standardisation and episode sampling."""

from __future__ import annotations

import csv
import logging
import zlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

log = logging.getLogger(__name__)

MAX_RETRIES = 100


class SamplingError(ValueError):
    """A dataset cannot supply the requested episode."""


@dataclass(frozen=True)
class DatasetTable:
    name: str
    features: np.ndarray
    labels: np.ndarray
    n_classes: int

    def __post_init__(self):
        x = np.ascontiguousarray(self.features, dtype=np.float64)
        y = np.asarray(self.labels, dtype=np.int64)
        if x.ndim != 2 or x.shape[0] < 1 or x.shape[1] < 2:
            raise ValueError(f"{self.name}: need >= 1 row and >= 2 feature columns, got shape {x.shape}")
        if y.shape != (x.shape[0],):
            raise ValueError(f"{self.name}: {y.shape[0]} labels for {x.shape[0]} rows")
        if not np.all(np.isfinite(x)):
            raise ValueError(f"{self.name}: non-finite feature values are not supported")
        if y.size and (y.min() < 0 or y.max() >= self.n_classes):
            raise ValueError(f"{self.name}: labels must lie in [0, {self.n_classes})")
        x.setflags(write=False)
        y.setflags(write=False)
        object.__setattr__(self, "features", x)
        object.__setattr__(self, "labels", y)

    @property
    def n_rows(self):
        return self.features.shape[0]

    @property
    def n_cols(self):
        return self.features.shape[1]

    def class_counts(self):
        return np.bincount(self.labels, minlength=self.n_classes)


@dataclass
class Task:
    meta_x: np.ndarray
    meta_y: np.ndarray
    target_x: np.ndarray
    target_y: np.ndarray | None
    column_ids: np.ndarray
    source_name: str = ""
    meta_rows: np.ndarray = field(default=None, repr=False)
    target_rows: np.ndarray = field(default=None, repr=False)

    @property
    def n_cols(self):
        return self.meta_x.shape[1]

    @property
    def n_meta(self):
        return self.meta_x.shape[0]


# ----------------------------------------------------------------------- io

def load_csv(path, label_column="last", has_header=False, name=None):
    """Read a numeric CSV; labels are re-encoded 0..K-1 by first appearance."""
    path = Path(path)
    with open(path, newline="", encoding="utf-8") as fh:
        rows = [r for r in csv.reader(fh) if r and any(cell.strip() for cell in r)]
    if has_header and rows:
        rows = rows[1:]
    if not rows:
        raise ValueError(f"{path}: empty file")
    width = len(rows[0])
    if label_column == "last":
        label_idx = width - 1
    else:
        label_idx = int(label_column)
        if label_idx < 0:
            label_idx += width
    if not 0 <= label_idx < width:
        raise ValueError(f"{path}: label column {label_column} out of range for {width} columns")
    if width - 1 < 2:
        raise ValueError(f"{path}: need at least 2 feature columns, found {width - 1}")

    feats = np.empty((len(rows), width - 1))
    codes = {}
    labels = np.empty(len(rows), dtype=np.int64)
    first_line = 2 if has_header else 1
    for i, row in enumerate(rows):
        if len(row) != width:
            raise ValueError(f"{path}: row {i + first_line} has {len(row)} cells, expected {width}")
        j_out = 0
        for j, cell in enumerate(row):
            if j == label_idx:
                key = cell.strip()
                labels[i] = codes.setdefault(key, len(codes))
                continue
            try:
                feats[i, j_out] = float(cell)
            except ValueError:
                raise ValueError(f"{path}: non-numeric value {cell!r} at row {i + first_line}, column {j + 1}") from None
            j_out += 1
    return DatasetTable(name or path.stem, feats, labels, max(len(codes), 1))


def load_dir(data_dir, label_column="last", has_header=False):
    files = sorted(Path(data_dir).glob("*.csv"))
    if not files:
        raise FileNotFoundError(f"no .csv files under {data_dir}")
    return [load_csv(f, label_column, has_header) for f in files]


def binarize_one_vs_all(d: DatasetTable) -> DatasetTable:
    """Most frequent class -> 1, every other class -> 0 (ties: smaller label wins)."""
    if d.n_classes < 2:
        raise ValueError(f"{d.name}: binarisation needs >= 2 classes")
    top = int(np.argmax(d.class_counts()))  # argmax returns the first maximum
    return DatasetTable(d.name, d.features, (d.labels == top).astype(np.int64), 2)



def reduce_classes(d: DatasetTable, k) -> DatasetTable:
    """Keep rows of the k most frequent classes, relabelled 0..k-1 by frequency (ties: smaller label first)."""
    counts = d.class_counts()
    if np.count_nonzero(counts) < k:
        raise ValueError(f"{d.name}: needs >= {k} classes, has {np.count_nonzero(counts)}")
    order = np.argsort(-counts, kind="stable")[:k]
    remap = np.full(d.n_classes, -1, dtype=np.int64)
    remap[order] = np.arange(k)
    keep = remap[d.labels] >= 0
    return DatasetTable(d.name, d.features[keep], remap[d.labels[keep]], k)

# ------------------------------------------------------------ standardisation

def standardize_joint(meta_x, target_x):
    """Per-column z-scoring with statistics over the stacked meta+target rows.

    Population standard deviation; constant columns become all zeros.
    """
    meta_x = np.asarray(meta_x, dtype=np.float64)
    target_x = np.asarray(target_x, dtype=np.float64)
    if meta_x.shape[1:] != target_x.shape[1:]:
        raise ValueError(f"column counts differ: meta {meta_x.shape}, target {target_x.shape}")
    stacked = np.concatenate([meta_x, target_x], axis=0)
    mu = stacked.mean(axis=0)
    centered = stacked - mu
    sd = np.sqrt((centered * centered).mean(axis=0))
    scale = np.maximum(np.abs(stacked).max(axis=0), 1.0)
    const = sd <= 1e-12 * scale
    out = np.where(const, 0.0, centered / np.where(const, 1.0, sd))
    n = meta_x.shape[0]
    return out[:n], out[n:]


# ------------------------------------------------------------------- sampling

def _draw_counts(n, n_classes, rng, conditioned):
    """Per-class counts for an n-row split; binary uses Binomial(n, 0.5)."""
    while True:
        if n_classes == 2:
            pos = rng.binomial(n, 0.5)
            counts = np.array([n - pos, pos])
        else:
            counts = rng.multinomial(n, np.full(n_classes, 1.0 / n_classes))
        if not conditioned or np.all(counts > 0):
            return counts


def _take_rows(pools, counts, rng):
    picked = []
    for cls, k in enumerate(counts):
        if k:
            chosen = rng.choice(len(pools[cls]), size=k, replace=False)
            picked.append(pools[cls][chosen])
    rows = np.concatenate(picked) if picked else np.empty(0, dtype=np.int64)
    return rng.permutation(rows)


def _class_pools(d):
    return [np.flatnonzero(d.labels == c) for c in range(d.n_classes)]


def _choose_columns(n_cols, rng, column_subsample):
    if not column_subsample:
        return np.arange(n_cols)
    k = int(rng.integers(2, n_cols + 1))
    return np.sort(rng.choice(n_cols, size=k, replace=False))


def _assemble(d, meta_rows, target_rows, cols):
    mx, tx = standardize_joint(d.features[np.ix_(meta_rows, cols)], d.features[np.ix_(target_rows, cols)])
    return Task(
        meta_x=mx,
        meta_y=d.labels[meta_rows].copy(),
        target_x=tx,
        target_y=d.labels[target_rows].copy(),
        column_ids=cols,
        source_name=d.name,
        meta_rows=meta_rows,
        target_rows=target_rows,
    )


def _sample(d, meta_counts_fn, n_target, rng, column_subsample, what):
    pools = _class_pools(d)
    avail = np.array([len(p) for p in pools])
    for _ in range(MAX_RETRIES):
        mc = meta_counts_fn()
        tc = _draw_counts(n_target, d.n_classes, rng, conditioned=False)
        if np.all(mc + tc <= avail):
            break
    else:
        raise SamplingError(
            f"{d.name}: could not sample {what} with {n_target} target rows "
            f"after {MAX_RETRIES} retries (class counts {avail.tolist()})"
        )
    meta_rows = _take_rows(pools, mc, rng)
    rest = [p[~np.isin(p, meta_rows)] for p in pools]
    target_rows = _take_rows(rest, tc, rng)
    cols = _choose_columns(d.n_cols, rng, column_subsample)
    return _assemble(d, meta_rows, target_rows, cols)


def sample_task(d: DatasetTable, n_meta, n_target, rng, column_subsample=False) -> Task:
    """Binomial (multinomial for K > 2) class counts; meta covers every class when n_meta >= K."""
    if n_meta < 1 or n_target < 0:
        raise ValueError("n_meta must be >= 1 and n_target >= 0")
    if d.n_rows < n_meta + n_target:
        raise SamplingError(f"{d.name}: {d.n_rows} rows cannot supply {n_meta} meta + {n_target} target rows")
    conditioned = n_meta >= d.n_classes
    return _sample(
        d,
        lambda: _draw_counts(n_meta, d.n_classes, rng, conditioned),
        n_target,
        rng,
        column_subsample,
        f"{n_meta} meta rows",
    )


def sample_task_counts(d: DatasetTable, meta_counts, n_target, rng, column_subsample=False) -> Task:
    """Meta split with exactly ``meta_counts[c]`` rows of class c; target as in sample_task."""
    mc = np.asarray(meta_counts, dtype=np.int64)
    if mc.shape != (d.n_classes,) or np.any(mc < 0) or mc.sum() < 1:
        raise ValueError(f"meta_counts must be {d.n_classes} nonnegative counts with a positive sum")
    if np.any(mc > d.class_counts()):
        raise SamplingError(f"{d.name}: class counts {d.class_counts().tolist()} cannot supply {mc.tolist()}")
    return _sample(d, lambda: mc, n_target, rng, column_subsample, f"meta counts {mc.tolist()}")


def sample_task_equal(d: DatasetTable, k_shots, n_target, rng, column_subsample=False) -> Task:
    """Classic K-shot: exactly ``k_shots`` meta rows of every class."""
    return sample_task_counts(d, np.full(d.n_classes, k_shots), n_target, rng, column_subsample)


# ---------------------------------------------------------------- folds, eval

@dataclass
class FoldPlan:
    assignment: dict  # dataset name -> fold index
    n_folds: int

    def test_names(self, fold):
        return sorted(n for n, f in self.assignment.items() if f == fold)

    def train_names(self, fold):
        return sorted(n for n, f in self.assignment.items() if f != fold)

    def to_dict(self):
        return {"n_folds": self.n_folds, "assignment": dict(self.assignment)}

    @classmethod
    def from_dict(cls, d):
        return cls({k: int(v) for k, v in d["assignment"].items()}, int(d["n_folds"]))


def make_folds(names, n_folds, rng) -> FoldPlan:
    """Random balanced partition of dataset names into folds."""
    names = list(names)
    if n_folds < 2:
        raise ValueError("need at least 2 folds")
    if n_folds > len(names):
        raise ValueError(f"{n_folds} folds requested for {len(names)} datasets")
    if len(set(names)) != len(names):
        raise ValueError("dataset names must be unique")
    order = rng.permutation(len(names))
    return FoldPlan({names[i]: int(pos % n_folds) for pos, i in enumerate(order)}, n_folds)


def name_seed(seed, name):
    """Stable 32-bit value mixing a seed and a name (independent of PYTHONHASHSEED)."""
    return zlib.crc32(f"{int(seed)}:{name}".encode())


def stream(seed, name):
    """Independent generator for a named purpose under a root seed."""
    return np.random.default_rng(np.random.SeedSequence([int(seed) & 0xFFFFFFFF, name_seed(seed, name)]))


def fixed_eval_tasks(d: DatasetTable, n_meta, n_target, count, seed, meta_counts=None):
    """``count`` reproducible test tasks, seeded by (seed, dataset name).

    Returns ``[]`` (with a logged notice) when the dataset is too small.
    """
    rng = stream(seed, "eval/" + d.name)
    tasks = []
    try:
        for _ in range(count):
            if meta_counts is None:
                tasks.append(sample_task(d, n_meta, n_target, rng))
            else:
                tasks.append(sample_task_counts(d, meta_counts, n_target, rng))
    except SamplingError as err:
        log.info("skipping %s: %s", d.name, err)
        return []
    return tasks


def validation_split(datasets, rng, dataset_frac=0.25, row_frac=0.25):
    """Hold out ``row_frac`` of the rows of a ``dataset_frac`` subset of datasets.

    Returns (validation tables, remaining tables); validation and remaining
    rows of a dataset never overlap.
    """
    datasets = list(datasets)
    n_val = max(1, int(round(dataset_frac * len(datasets))))
    chosen = set(rng.choice(len(datasets), size=n_val, replace=False).tolist())
    val, rest = [], []
    for i, d in enumerate(datasets):
        if i not in chosen:
            rest.append(d)
            continue
        perm = rng.permutation(d.n_rows)
        k = max(1, int(round(row_frac * d.n_rows)))
        vr, rr = np.sort(perm[:k]), np.sort(perm[k:])
        val.append(DatasetTable(d.name, d.features[vr], d.labels[vr], d.n_classes))
        if rr.size:
            rest.append(DatasetTable(d.name, d.features[rr], d.labels[rr], d.n_classes))
    return val, rest
