"""Cross-dataset fold evaluation, LR/KNN reference baselines and inference timing."""

from __future__ import annotations

import csv
import json
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.optimize import minimize
from scipy.stats import rankdata

from .data import DatasetTable, Task, fixed_eval_tasks, standardize_joint, stream
from .trainer import AdaptConfig, flatadapt_infer, infer

log = logging.getLogger(__name__)

KNN_K = 3
LR_L2 = 1.0


class FoldMismatchError(ValueError):
    """A checkpoint was trained on data from the fold it is asked to test."""


# ----------------------------------------------------------------- baselines

def _fit_binary_lr(x, y, l2, max_iter=100, tol=1e-10):
    """Newton's method on sum(logloss) + l2/2 * ||w||^2 (intercept unpenalised)."""
    n, d = x.shape
    X = np.hstack([x, np.ones((n, 1))])
    beta = np.zeros(d + 1)
    reg = np.full(d + 1, l2)
    reg[-1] = 0.0

    def objective(b):
        z = X @ b
        return np.sum(np.logaddexp(0.0, z) - y * z) + 0.5 * np.sum(reg * b * b)

    f = objective(beta)
    for _ in range(max_iter):
        p = 1.0 / (1.0 + np.exp(-(X @ beta)))
        grad = X.T @ (p - y) + reg * beta
        hess = (X * (p * (1 - p))[:, None]).T @ X + np.diag(reg) + 1e-12 * np.eye(d + 1)
        step = np.linalg.solve(hess, grad)
        t = 1.0
        while True:
            cand = beta - t * step
            fc = objective(cand)
            if fc <= f - 1e-4 * t * grad @ step or t < 1e-10:
                break
            t *= 0.5
        beta, f_old, f = cand, f, fc
        if abs(f_old - f) <= tol * max(1.0, abs(f)):
            break
    return beta[:-1], beta[-1]


def _fit_multinomial_lr(x, y, k, l2):
    n, d = x.shape
    X = np.hstack([x, np.ones((n, 1))])
    Y = np.eye(k)[y]
    mask = np.ones((d + 1, k))
    mask[-1] = 0.0

    def fg(flat):
        B = flat.reshape(d + 1, k)
        Z = X @ B
        Z = Z - Z.max(axis=1, keepdims=True)
        logp = Z - np.log(np.exp(Z).sum(axis=1, keepdims=True))
        val = -np.sum(Y * logp) + 0.5 * l2 * np.sum(mask * B * B)
        grad = X.T @ (np.exp(logp) - Y) + l2 * mask * B
        return val, grad.ravel()

    res = minimize(fg, np.zeros((d + 1) * k), jac=True, method="L-BFGS-B", options={"maxiter": 500})
    return res.x.reshape(d + 1, k)


def baseline_lr(task: Task, l2=LR_L2):
    """L2-regularised logistic regression fit on the meta split.

    Returns predicted classes for the target rows, or ``None`` (abstain)
    when the meta split holds a single class.
    """
    y = np.asarray(task.meta_y, dtype=np.int64)
    classes = np.unique(y)
    if classes.size < 2:
        return None
    k = int(max(y.max() + 1, 2))
    if k == 2:
        w, b = _fit_binary_lr(task.meta_x, y.astype(np.float64), l2)
        return (task.target_x @ w + b > 0).astype(np.int64)
    B = _fit_multinomial_lr(task.meta_x, y, k, l2)
    Xt = np.hstack([task.target_x, np.ones((task.target_x.shape[0], 1))])
    return np.argmax(Xt @ B, axis=1)


def baseline_knn(task: Task, k=KNN_K):
    """Euclidean k-NN majority vote; abstains (``None``) on a single-class meta split.

    Distance ties go to the lower meta row index, vote ties to the lower class.
    ``k`` is clipped to the meta size.
    """
    y = np.asarray(task.meta_y, dtype=np.int64)
    if np.unique(y).size < 2:
        return None
    k = min(k, y.size)
    diff = task.target_x[:, None, :] - task.meta_x[None, :, :]
    dist = np.einsum("ijk,ijk->ij", diff, diff)
    nearest = np.argsort(dist, axis=1, kind="stable")[:, :k]
    n_classes = int(y.max() + 1)
    votes = np.zeros((dist.shape[0], n_classes), dtype=np.int64)
    for col in range(k):
        np.add.at(votes, (np.arange(dist.shape[0]), y[nearest[:, col]]), 1)
    return np.argmax(votes, axis=1)


# --------------------------------------------------------------- model zoo

def flat_model(checkpoint):
    return lambda task: infer(task, checkpoint)[0]


def flatadapt_model(checkpoint, adapt: AdaptConfig | None = None):
    return lambda task: flatadapt_infer(task, checkpoint, adapt)[0]


def lr_model(l2=LR_L2):
    return lambda task: baseline_lr(task, l2)


def knn_model(k=KNN_K):
    return lambda task: baseline_knn(task, k)


def task_accuracy(pred, task):
    if pred is None:
        return None
    return float(np.mean(np.asarray(pred) == np.asarray(task.target_y)))


# ------------------------------------------------------------------ reports

@dataclass
class EvalReport:
    rows: list = field(default_factory=list)  # dicts: model, dataset, n_meta, accuracy, stderr, n_tasks

    def add(self, model, dataset, n_meta, accs):
        accs = np.asarray([a for a in accs if a is not None], dtype=np.float64)
        if accs.size == 0:
            return
        std = accs.std(ddof=1) if accs.size > 1 else 0.0
        self.rows.append({
            "model": model,
            "dataset": dataset,
            "n_meta": int(n_meta),
            "accuracy": float(accs.mean()),
            "stderr": float(std / np.sqrt(accs.size)),
            "n_tasks": int(accs.size),
        })

    def models(self):
        return sorted({r["model"] for r in self.rows})

    def summary(self):
        """Per (model, n_meta): mean over datasets and median rank across datasets."""
        out = {}
        for n_meta in sorted({r["n_meta"] for r in self.rows}):
            rows = [r for r in self.rows if r["n_meta"] == n_meta]
            by_ds = {}
            for r in rows:
                by_ds.setdefault(r["dataset"], {})[r["model"]] = r["accuracy"]
            ranks = {}
            for accs in by_ds.values():
                names = sorted(accs)
                rk = rankdata([-accs[m] for m in names], method="average")
                for m, v in zip(names, rk):
                    ranks.setdefault(m, []).append(float(v))
            for model in sorted({r["model"] for r in rows}):
                accs = [r["accuracy"] for r in rows if r["model"] == model]
                out.setdefault(model, {})[str(n_meta)] = {
                    "mean_accuracy": float(np.mean(accs)),
                    "median_rank": float(np.median(ranks[model])),
                    "n_datasets": len(accs),
                }
        return out

    def lookup(self, model, dataset=None, n_meta=None):
        return [
            r for r in self.rows
            if r["model"] == model and (dataset is None or r["dataset"] == dataset)
            and (n_meta is None or r["n_meta"] == n_meta)
        ]

    def write_csv(self, path):
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        cols = ["model", "dataset", "n_meta", "accuracy", "stderr", "n_tasks"]
        with open(path, "w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=cols)
            w.writeheader()
            for r in sorted(self.rows, key=lambda r: (r["model"], r["dataset"], r["n_meta"])):
                w.writerow({**r, "accuracy": repr(r["accuracy"]), "stderr": repr(r["stderr"])})
        return path

    @classmethod
    def read_csv(cls, path):
        rows = []
        with open(path, newline="") as fh:
            for r in csv.DictReader(fh):
                rows.append({
                    "model": r["model"], "dataset": r["dataset"], "n_meta": int(r["n_meta"]),
                    "accuracy": float(r["accuracy"]), "stderr": float(r["stderr"]), "n_tasks": int(r["n_tasks"]),
                })
        return cls(rows)

    def write_json(self, path):
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(self.summary(), indent=2, sort_keys=True))
        return path


def evaluate_models(models, datasets, n_meta, n_target, tasks_per_dataset, seed, report=None, meta_counts=None):
    """Evaluate named models on identical fixed task sequences per dataset.

    ``models``: name -> callable(task) -> predictions, or a list of such
    callables whose per-task accuracies are averaged (several seeds).
    """
    report = report if report is not None else EvalReport()
    for d in datasets:
        tasks = fixed_eval_tasks(d, n_meta, n_target, tasks_per_dataset, seed, meta_counts=meta_counts)
        if not tasks:
            continue
        for name, fn in models.items():
            fns = fn if isinstance(fn, (list, tuple)) else [fn]
            accs = []
            for task in tasks:
                per_seed = [task_accuracy(f(task), task) for f in fns]
                per_seed = [a for a in per_seed if a is not None]
                accs.append(float(np.mean(per_seed)) if per_seed else None)
            report.add(name, d.name, n_meta, accs)
    return report


def check_fold(checkpoint, fold, test_names):
    trained = set(checkpoint.train_config.get("train_datasets", []))
    leak = trained & set(test_names)
    if leak:
        raise FoldMismatchError(f"checkpoint for fold {fold} was trained on test datasets {sorted(leak)}")
    ck_fold = checkpoint.train_config.get("fold")
    if ck_fold is not None and int(ck_fold) != int(fold):
        raise FoldMismatchError(f"checkpoint belongs to fold {ck_fold}, not fold {fold}")


def run_fold_eval(
    all_datasets,
    fold_plan,
    checkpoints,
    n_meta,
    n_target,
    tasks_per_dataset=200,
    seed=0,
    adapt: AdaptConfig | None = None,
    baselines=True,
    knn_k=KNN_K,
    lr_l2=LR_L2,
):
    """Evaluate every fold's checkpoints (one per seed) on its unseen test datasets.

    ``checkpoints``: fold index -> list of Checkpoints. With ``adapt`` given, a
    ``FLATadapt`` entry is added next to ``FLAT``.
    """
    by_name = {d.name: d for d in all_datasets}
    report = EvalReport()
    for fold in range(fold_plan.n_folds):
        test_names = fold_plan.test_names(fold)
        cks = checkpoints.get(fold)
        if not cks:
            raise FoldMismatchError(f"no checkpoint supplied for fold {fold}")
        for ck in cks:
            check_fold(ck, fold, test_names)
        models = {"FLAT": [flat_model(c) for c in cks]}
        if adapt is not None:
            models["FLATadapt"] = [flatadapt_model(c, adapt) for c in cks]
        if baselines:
            models["LR"] = lr_model(lr_l2)
            models["KNN"] = knn_model(knn_k)
        evaluate_models(models, [by_name[n] for n in test_names], n_meta, n_target, tasks_per_dataset, seed, report)
    return report


# ------------------------------------------------------------------- timing

def random_tasks(n_tasks, n_meta, n_target, n_cols, seed=0):
    """Standardised Gaussian tasks with balanced-ish random labels (timing workloads)."""
    rng = stream(seed, f"timing/{n_cols}")
    out = []
    for _ in range(n_tasks):
        mx, tx = standardize_joint(rng.standard_normal((n_meta, n_cols)), rng.standard_normal((n_target, n_cols)))
        my = rng.permutation(np.arange(n_meta) % 2)
        ty = rng.integers(0, 2, size=n_target)
        out.append(Task(mx, my, tx, ty, np.arange(n_cols), "timing"))
    return out


def time_inference(model_fn, n_tasks=200, n_meta=15, n_target=15, n_cols=20, seed=0, tasks=None, warmup=True):
    """Wall seconds to run ``model_fn`` on ``n_tasks`` tasks (task generation excluded).

    One untimed call first so JIT compilation does not land in the measurement.
    """
    tasks = tasks if tasks is not None else random_tasks(n_tasks, n_meta, n_target, n_cols, seed)
    if warmup and tasks:
        model_fn(tasks[0])
    t0 = time.perf_counter()
    for t in tasks:
        model_fn(t)
    return time.perf_counter() - t0


def timing_sweep(models, n_cols_list, n_tasks=200, n_meta=15, n_target=15, seed=0):
    """Rows (model, n_cols, seconds) for every model and column count."""
    rows = []
    for c in n_cols_list:
        tasks = random_tasks(n_tasks, n_meta, n_target, c, seed)
        for name, fn in models.items():
            rows.append({"model": name, "n_cols": int(c), "seconds": time_inference(fn, tasks=tasks)})
    return rows


def write_timing_csv(rows, path):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=["model", "n_cols", "seconds"])
        w.writeheader()
        w.writerows(rows)
    return path
