"""Command-line entry point: ``flat <command> [--config FILE] [flags]``.

Every flag mirrors a key of the flat JSON config file; flags override file
values. Commands: train, eval, adapt-eval, export-embeddings,
export-attention, time, synth.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from dataclasses import MISSING, asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from .checkpoint import load_checkpoint, save_checkpoint
from .data import FoldPlan, binarize_one_vs_all, fixed_eval_tasks, load_dir, make_folds, reduce_classes, stream
from .evaluate import (
    EvalReport,
    flat_model,
    flatadapt_model,
    knn_model,
    lr_model,
    run_fold_eval,
    timing_sweep,
    write_timing_csv,
)
from .gatnet import build_nodes, gat_layer
from .hypernet import generate_weights, init_theta
from .model import ModelConfig
from .synth import synth_corpus, write_corpus
from . import numkernel as nk
from .trainer import AdaptConfig, TrainConfig, embed, train_loop

log = logging.getLogger("flat")

MODES = ("train", "eval", "adapt-eval", "export-embeddings", "export-attention", "time", "synth")


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    mode: str = "train"
    data_dir: str = "data"
    out: str = "runs"
    label_col: str = "last"
    has_header: bool = False
    n_classes: int = 2
    folds: int = 4
    seeds: list = field(default_factory=lambda: [0])
    # training
    steps: int = 62000
    batch_size: int = 3
    lr: float = 5e-4
    eps: float = 3e-4
    weight_decay: float = 1e-4
    n_meta_train: int = 10
    n_target_train: int = 10
    column_subsample: bool = True
    log_every: int = 500
    theta_init: str = "fixed"
    theta_value: float = 1.0
    theta_checkpoint: str = ""
    # evaluation
    n_meta: list = field(default_factory=lambda: [10])
    n_target: int = 10
    tasks_per_dataset: int = 200
    eval_seed: int = 0
    checkpoint_dir: str = ""
    checkpoint: str = ""
    knn_k: int = 3
    lr_l2: float = 1.0
    baselines: bool = True
    # adaptation
    adapt_steps: int = 5
    adapt_lr_columns: float = 1e-3
    adapt_lr_dataset: float = 7.5e-2
    # timing
    n_tasks: int = 200
    n_cols_list: list = field(default_factory=lambda: [10, 20, 40, 80, 160, 400])
    # synthetic corpus
    family: str = "mixed"
    n_datasets: int = 40
    rows: int = 300
    cols_min: int = 2
    cols_max: int = 8
    label_noise: float = 0.0
    synth_seed: int = 0

    def train_config(self, seed):
        return TrainConfig(
            steps=self.steps, batch_size=self.batch_size, lr=self.lr, eps=self.eps,
            weight_decay=self.weight_decay, n_meta_train=self.n_meta_train,
            n_target_train=self.n_target_train, column_subsample=self.column_subsample,
            seed=seed, log_every=self.log_every,
        )

    def adapt_config(self):
        return AdaptConfig(steps=self.adapt_steps, lr_columns=self.adapt_lr_columns, lr_dataset=self.adapt_lr_dataset)

    @property
    def out_dir(self):
        return Path(self.out)

    @property
    def ckpt_dir(self):
        return Path(self.checkpoint_dir) if self.checkpoint_dir else self.out_dir / "checkpoints"


_TYPES = {f.name: f.type for f in fields(RunConfig)}


def _coerce(key, value):
    kind = _TYPES[key]
    if kind == "list":
        if isinstance(value, str):
            value = [v for v in value.split(",") if v.strip()]
        if not isinstance(value, list):
            raise ConfigError(f"{key}: expected a list, got {type(value).__name__}")
        try:
            return [int(v) for v in value]
        except (TypeError, ValueError):
            raise ConfigError(f"{key}: expected integers, got {value!r}") from None
    if kind == "bool":
        if isinstance(value, bool):
            return value
        if isinstance(value, str) and value.lower() in ("1", "true", "yes", "0", "false", "no"):
            return value.lower() in ("1", "true", "yes")
        raise ConfigError(f"{key}: expected a boolean, got {value!r}")
    if kind == "int":
        if isinstance(value, bool) or not isinstance(value, (int, str)):
            raise ConfigError(f"{key}: expected an integer, got {value!r}")
        try:
            return int(value)
        except ValueError:
            raise ConfigError(f"{key}: expected an integer, got {value!r}") from None
    if kind == "float":
        if isinstance(value, bool) or not isinstance(value, (int, float, str)):
            raise ConfigError(f"{key}: expected a number, got {value!r}")
        try:
            return float(value)
        except ValueError:
            raise ConfigError(f"{key}: expected a number, got {value!r}") from None
    if kind == "str":
        if not isinstance(value, (str, int)) or isinstance(value, bool):
            raise ConfigError(f"{key}: expected a string, got {value!r}")
        return str(value)
    raise ConfigError(f"{key}: unsupported type {kind}")  # pragma: no cover


def build_parser():
    parser = argparse.ArgumentParser(prog="flat", description="Few-shot tabular learning with generated GAT weights.")
    sub = parser.add_subparsers(dest="mode", required=True)
    for mode in MODES:
        p = sub.add_parser(mode)
        p.add_argument("--config", help="JSON file with flat keys (flags override it)")
        p.add_argument("-v", "--verbose", action="store_true")
        for f in fields(RunConfig):
            if f.name == "mode":
                continue
            flag = "--" + f.name.replace("_", "-")
            if f.type == "bool":
                p.add_argument(flag, dest=f.name, action=argparse.BooleanOptionalAction, default=None)
            elif f.name == "out":
                p.add_argument(flag, dest=f.name, default=None, metavar="DIR")
            else:
                p.add_argument(flag, dest=f.name, default=None, type=str)
    return parser


def parse_config(argv=None):
    """argv -> RunConfig (file values first, then flag overrides)."""
    args = build_parser().parse_args(argv)
    values = {}
    if args.config:
        path = Path(args.config)
        if not path.exists():
            raise ConfigError(f"config file not found: {path}")
        text = path.read_text().strip()
        raw = json.loads(text) if text else {}
        if not isinstance(raw, dict):
            raise ConfigError("config file must hold a JSON object")
        valid = sorted(k for k in _TYPES if k != "mode")
        unknown = sorted(set(raw) - set(valid))
        if unknown:
            raise ConfigError(f"unknown config keys {unknown}; valid keys: {', '.join(valid)}")
        values.update({k: _coerce(k, v) for k, v in raw.items()})
    for key in _TYPES:
        if key == "mode":
            continue
        v = getattr(args, key, None)
        if v is not None:
            values[key] = _coerce(key, v)
    cfg = RunConfig(mode=args.mode, **values)
    if not cfg.seeds:
        raise ConfigError("seeds must be a nonempty list")
    if cfg.label_col != "last":
        try:
            int(cfg.label_col)
        except ValueError:
            raise ConfigError(f"label_col must be an integer index or 'last', got {cfg.label_col!r}") from None
    return cfg, args.verbose


# -------------------------------------------------------------------- helpers

def load_datasets(cfg: RunConfig):
    if not Path(cfg.data_dir).is_dir():
        raise FileNotFoundError(f"data directory not found: {cfg.data_dir}")
    tables = load_dir(cfg.data_dir, cfg.label_col, cfg.has_header)
    out = []
    for d in tables:
        if cfg.n_classes == 2:
            if d.n_classes < 2:
                log.info("skipping %s: single class", d.name)
                continue
            out.append(binarize_one_vs_all(d) if d.n_classes > 2 else d)
        else:
            if d.n_classes < cfg.n_classes:
                log.info("skipping %s: fewer than %d classes", d.name, cfg.n_classes)
                continue
            out.append(reduce_classes(d, cfg.n_classes))
    if not out:
        raise ValueError(f"no usable datasets under {cfg.data_dir}")
    return out


def _ckpt_path(cfg, fold, seed):
    return cfg.ckpt_dir / f"fold{fold}_seed{seed}.flat"


def _fold_plan_path(cfg):
    return cfg.out_dir / "folds.json"


def _load_fold_checkpoints(cfg, plan):
    cks = {}
    for fold in range(plan.n_folds):
        cks[fold] = []
        for seed in cfg.seeds:
            path = _ckpt_path(cfg, fold, seed)
            if not path.exists():
                raise FileNotFoundError(f"checkpoint not found: {path}")
            cks[fold].append(load_checkpoint(path))
    return cks


def _single_checkpoint(cfg):
    if cfg.checkpoint:
        return load_checkpoint(cfg.checkpoint)
    path = _ckpt_path(cfg, 0, cfg.seeds[0])
    if not path.exists():
        raise FileNotFoundError(f"checkpoint not found: {path} (pass --checkpoint)")
    return load_checkpoint(path)


# ---------------------------------------------------------------- commands

def cmd_train(cfg: RunConfig):
    datasets = load_datasets(cfg)
    plan = make_folds([d.name for d in datasets], cfg.folds, stream(cfg.seeds[0], "folds"))
    cfg.out_dir.mkdir(parents=True, exist_ok=True)
    _fold_plan_path(cfg).write_text(json.dumps(plan.to_dict(), indent=2, sort_keys=True))
    if cfg.theta_init == "recorded":
        theta = init_theta("recorded", cfg.theta_checkpoint)
    else:
        theta = init_theta(cfg.theta_init, cfg.theta_value)
    model_cfg = ModelConfig(n_classes=cfg.n_classes)
    logs = cfg.out_dir / "logs"
    logs.mkdir(parents=True, exist_ok=True)
    for fold in range(plan.n_folds):
        train_names = set(plan.train_names(fold))
        train_sets = [d for d in datasets if d.name in train_names]
        for seed in cfg.seeds:
            with open(logs / f"fold{fold}_seed{seed}.jsonl", "w") as fh:
                ck = train_loop(train_sets, cfg.train_config(seed), model_cfg, theta, log_file=fh)
            ck.train_config.update(fold=fold, train_datasets=sorted(train_names))
            path = save_checkpoint(ck, _ckpt_path(cfg, fold, seed))
            log.info("wrote %s", path)
    return 0


def _eval(cfg: RunConfig, adapt):
    plan_path = _fold_plan_path(cfg)
    if not plan_path.exists():
        raise FileNotFoundError(f"fold plan not found: {plan_path}")
    plan = FoldPlan.from_dict(json.loads(plan_path.read_text()))
    cks = _load_fold_checkpoints(cfg, plan)
    datasets = load_datasets(cfg)
    report = EvalReport()
    for n_meta in cfg.n_meta:
        part = run_fold_eval(
            datasets, plan, cks, n_meta, cfg.n_target, cfg.tasks_per_dataset, cfg.eval_seed,
            adapt=adapt, baselines=cfg.baselines, knn_k=cfg.knn_k, lr_l2=cfg.lr_l2,
        )
        report.rows.extend(part.rows)
    stem = "report_adapt" if adapt is not None else "report"
    report.write_csv(cfg.out_dir / f"{stem}.csv")
    report.write_json(cfg.out_dir / f"{stem}.json")
    for model, per in report.summary().items():
        for n_meta, s in per.items():
            log.info("%s n_meta=%s: accuracy %.4f, median rank %.1f", model, n_meta, s["mean_accuracy"], s["median_rank"])
    return 0


def cmd_eval(cfg):
    return _eval(cfg, None)


def cmd_adapt_eval(cfg):
    return _eval(cfg, cfg.adapt_config())


def _export_tasks(cfg):
    datasets = load_datasets(cfg)
    for d in datasets:
        for i, t in enumerate(fixed_eval_tasks(d, cfg.n_meta[0], cfg.n_target, cfg.tasks_per_dataset, cfg.eval_seed)):
            yield d.name, i, t


def cmd_export_embeddings(cfg):
    ck = _single_checkpoint(cfg)
    d_e = ck.model_config.d_e
    path = cfg.out_dir / "embeddings.csv"
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["source_name", "task_id"] + [f"e_{i}" for i in range(d_e)])
        for name, i, task in _export_tasks(cfg):
            e, _ = embed(task, ck)
            w.writerow([name, i] + [repr(float(v)) for v in e])
    log.info("wrote %s", path)
    return 0


def first_layer_attention(task, ck):
    """Layer-1 attention over the meta rows, averaged over heads and rows: (n_cols, n_cols)."""
    leaves = ck.params.leaves(requires_grad=False)
    e, p = embed(task, ck)
    gw = generate_weights(nk.Tensor(e), leaves, ck.model_config)
    _, alpha = gat_layer(build_nodes(task.meta_x, nk.Tensor(p)), gw.a[0], gw.b[0], gw.W[0], return_alpha=True)
    return alpha.data.mean(axis=(0, 1))


def cmd_export_attention(cfg):
    ck = _single_checkpoint(cfg)
    path = cfg.out_dir / "attention.csv"
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["task_id", "node_j", "node_k", "alpha"])
        for name, i, task in _export_tasks(cfg):
            alpha = first_layer_attention(task, ck)
            cols = task.column_ids
            for j in range(alpha.shape[0]):
                for k in range(alpha.shape[1]):
                    w.writerow([f"{name}/{i}", int(cols[j]), int(cols[k]), repr(float(alpha[j, k]))])
    log.info("wrote %s", path)
    return 0


def cmd_time(cfg):
    ck = _single_checkpoint(cfg)
    models = {"FLAT": flat_model(ck), "FLATadapt": flatadapt_model(ck, cfg.adapt_config())}
    if cfg.baselines:
        models.update(LR=lr_model(cfg.lr_l2), KNN=knn_model(cfg.knn_k))
    n_meta = cfg.n_meta[0] if cfg.n_meta else 15
    rows = timing_sweep(models, cfg.n_cols_list, cfg.n_tasks, n_meta, cfg.n_target, cfg.eval_seed)
    path = write_timing_csv(rows, cfg.out_dir / "timing.csv")
    for r in rows:
        log.info("%s n_cols=%d: %.3fs", r["model"], r["n_cols"], r["seconds"])
    log.info("wrote %s", path)
    return 0


def cmd_synth(cfg):
    corpus = synth_corpus(cfg.family, cfg.n_datasets, cfg.rows, (cfg.cols_min, cfg.cols_max), cfg.synth_seed, cfg.label_noise)
    paths = write_corpus(corpus, cfg.data_dir)
    manifest = Path(cfg.data_dir) / "rules.json"
    manifest.write_text(json.dumps({d.name: info for d, info in corpus}, indent=2, sort_keys=True))
    log.info("wrote %d datasets to %s", len(paths), cfg.data_dir)
    return 0


COMMANDS = {
    "train": cmd_train,
    "eval": cmd_eval,
    "adapt-eval": cmd_adapt_eval,
    "export-embeddings": cmd_export_embeddings,
    "export-attention": cmd_export_attention,
    "time": cmd_time,
    "synth": cmd_synth,
}


def run(cfg: RunConfig):
    """Execute ``cfg.mode``; returns a process exit code."""
    try:
        return COMMANDS[cfg.mode](cfg)
    except Exception as err:  # one-line diagnostic, nonzero exit
        msg = str(err).splitlines()[0] if str(err) else type(err).__name__
        print(f"flat {cfg.mode}: error: {msg}", file=sys.stderr)
        log.debug("traceback", exc_info=True)
        return 1


def main(argv=None):
    try:
        cfg, verbose = parse_config(argv)
    except (ConfigError, json.JSONDecodeError) as err:
        print(f"flat: config error: {err}", file=sys.stderr)
        return 2
    logging.basicConfig(level=logging.DEBUG if verbose else logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    return run(cfg)


if __name__ == "__main__":
    sys.exit(main())
