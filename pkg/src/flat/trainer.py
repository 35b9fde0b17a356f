"""Episodic training, plain inference and inference-time embedding adaptation."""

from __future__ import annotations

import json
import logging
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from . import numkernel as nk
from .checkpoint import Checkpoint
from .data import SamplingError, sample_task, stream
from .encoder import encode
from .gatnet import predict
from .hypernet import generate_weights, generate_weights_batch, init_theta
from .model import ModelConfig, ParamStore, init_params

log = logging.getLogger(__name__)

PROB_FLOOR = 1e-12


@dataclass
class TrainConfig:
    steps: int = 62000
    batch_size: int = 3
    lr: float = 5e-4
    eps: float = 3e-4
    weight_decay: float = 1e-4
    n_meta_train: int = 10
    n_target_train: int = 10
    column_subsample: bool = True
    seed: int = 0
    log_every: int = 500

    def __post_init__(self):
        if self.steps < 0 or self.batch_size < 1:
            raise ValueError("steps must be >= 0 and batch_size >= 1")
        if self.lr < 0 or self.eps <= 0 or self.weight_decay < 0:
            raise ValueError("lr and weight_decay must be >= 0, eps > 0")
        if self.n_meta_train < 1 or self.n_target_train < 1:
            raise ValueError("n_meta_train and n_target_train must be >= 1")


@dataclass
class AdaptConfig:
    steps: int = 5
    lr_columns: float = 1e-3
    lr_dataset: float = 7.5e-2
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    def __post_init__(self):
        if self.steps < 0 or self.lr_columns <= 0 or self.lr_dataset <= 0:
            raise ValueError("adaptation needs steps >= 0 and positive learning rates")


# ------------------------------------------------------------------ forward

def loss(probs, labels):
    """Mean negative log-probability of the true class (probabilities floored at 1e-12)."""
    probs = nk.as_tensor(probs)
    labels = np.asarray(labels, dtype=np.int64)
    picked = nk.take(probs, (np.arange(labels.size), labels))
    return nk.mul(nk.mean(nk.log(nk.clip_min(picked, PROB_FLOOR))), -1.0)


def task_forward(meta_x, meta_y, target_x, leaves, cfg):
    """Encode the meta split, generate weights and predict target rows."""
    e, p = encode(meta_x, meta_y, leaves, cfg)
    gw = generate_weights(e, leaves, cfg)
    return predict(target_x, p, gw)


def task_loss(task, leaves, cfg):
    if task.target_y is None:
        raise ValueError("training needs target labels")
    return loss(task_forward(task.meta_x, task.meta_y, task.target_x, leaves, cfg), task.target_y)


def batch_loss(tasks, leaves, cfg):
    """Mean of the per-task target losses, with the generator evaluated once for the batch."""
    if any(t.target_y is None for t in tasks):
        raise ValueError("training needs target labels")
    encoded = [encode(t.meta_x, t.meta_y, leaves, cfg) for t in tasks]
    gws = generate_weights_batch([e for e, _ in encoded], leaves, cfg)
    total = None
    for t, (_, p), gw in zip(tasks, encoded, gws):
        li = loss(predict(t.target_x, p, gw), t.target_y)
        total = li if total is None else nk.add(total, li)
    return nk.scalar_div(total, float(len(tasks)))


def _check_task(task):
    if task.meta_x.shape[1] < 2:
        raise ValueError(f"tasks need at least 2 columns, got {task.meta_x.shape[1]}")
    if task.target_x.shape[1] != task.meta_x.shape[1]:
        raise ValueError("meta and target splits have different column counts")


# ----------------------------------------------------------------- training

def make_optimizer(config: TrainConfig):
    return nk.OptimizerState(lr=config.lr, eps=config.eps, weight_decay=config.weight_decay)


def train_step(tasks, params: ParamStore, opt_state):
    """One AdamW step on the batch-averaged loss; returns the loss value."""
    if not tasks:
        raise ValueError("empty batch")
    leaves = params.leaves()
    total = batch_loss(tasks, leaves, params.cfg)
    value = float(total.data)
    if not np.isfinite(value):
        log.warning("non-finite loss at step %d; step skipped", opt_state.step + 1)
        return value
    total.backward()
    nk.adamw_step({"flat": params.flat}, {"flat": params.gather_grad(leaves, out=params.grad_buffer())}, opt_state)
    return value


def _usable(datasets, config):
    need = config.n_meta_train + config.n_target_train
    keep = []
    for d in datasets:
        counts = d.class_counts()
        if d.n_rows >= need and np.count_nonzero(counts) >= min(d.n_classes, config.n_meta_train):
            keep.append(d)
        else:
            log.info("training collection: skipping %s (too small)", d.name)
    return keep


def _sample_batch(datasets, config, rng):
    batch = []
    while len(batch) < config.batch_size:
        d = datasets[int(rng.integers(len(datasets)))]
        try:
            batch.append(
                sample_task(d, config.n_meta_train, config.n_target_train, rng, config.column_subsample)
            )
        except SamplingError as err:
            log.debug("resampling after: %s", err)
    return batch


def new_checkpoint(model_cfg: ModelConfig, config: TrainConfig, theta=None):
    params = init_params(model_cfg, stream(config.seed, "init"), theta)
    return Checkpoint(
        model_config=model_cfg,
        params=params,
        train_config=asdict(config),
        step=0,
        rng_state=stream(config.seed, "train").bit_generator.state,
    )


def train_loop(
    train_datasets,
    config: TrainConfig,
    model_cfg: ModelConfig | None = None,
    theta=None,
    resume: Checkpoint | None = None,
    log_file=None,
    stop_at=None,
):
    """Run ``config.steps`` optimizer steps (or up to ``stop_at``) and return a Checkpoint.

    ``theta``: initial learnable norms (see ``hypernet.init_theta``); ignored on resume.
    ``log_file``: open text handle receiving one JSON record per log interval.
    """
    datasets = _usable(list(train_datasets), config)
    if not datasets:
        raise ValueError("no training dataset is large enough for the configured episode size")
    if resume is None:
        model_cfg = model_cfg or ModelConfig(n_classes=max(d.n_classes for d in datasets))
        ckpt = new_checkpoint(model_cfg, config, theta)
    else:
        ckpt = resume
        ckpt.params = ckpt.params.copy()
    params = ckpt.params
    opt = make_optimizer(config)
    opt.step = int(ckpt.optimizer.get("step", 0))
    if ckpt.opt_m is not None:
        opt.m["flat"], opt.v["flat"] = ckpt.opt_m.copy(), ckpt.opt_v.copy()
    rng = np.random.default_rng()
    rng.bit_generator.state = ckpt.rng_state

    end = config.steps if stop_at is None else min(stop_at, config.steps)
    t0 = time.perf_counter()
    window = []
    for step in range(ckpt.step, end):
        batch = _sample_batch(datasets, config, rng)
        window.append(train_step(batch, params, opt))
        if config.log_every and ((step + 1) % config.log_every == 0 or step + 1 == end):
            rec = {"step": step + 1, "loss": float(np.mean(window)), "wall_time": time.perf_counter() - t0}
            log.info("step %(step)d loss %(loss).4f (%(wall_time).1fs)", rec)
            if log_file is not None:
                log_file.write(json.dumps(rec) + "\n")
                log_file.flush()
            window = []
        ckpt.step = step + 1

    ckpt.rng_state = rng.bit_generator.state
    ckpt.optimizer = {
        "lr": opt.lr, "eps": opt.eps, "weight_decay": opt.weight_decay,
        "beta1": opt.beta1, "beta2": opt.beta2, "step": opt.step,
    }
    if "flat" in opt.m:
        ckpt.opt_m, ckpt.opt_v = opt.m["flat"], opt.v["flat"]
    ckpt.train_config = asdict(config)
    return ckpt


# ---------------------------------------------------------------- inference

def _params_of(model):
    return model.params if isinstance(model, Checkpoint) else model


def _decide(probs):
    # np.argmax picks the first maximum: exact ties go to the lower class index
    return np.argmax(probs, axis=1)


def infer(task, model):
    """Plain forward pass; returns (predicted classes, probabilities)."""
    _check_task(task)
    params = _params_of(model)
    leaves = params.leaves(requires_grad=False)
    probs = task_forward(task.meta_x, task.meta_y, task.target_x, leaves, params.cfg).data
    return _decide(probs), probs


def embed(task, model):
    """Dataset embedding e and column embeddings p as numpy arrays."""
    params = _params_of(model)
    e, p = encode(task.meta_x, task.meta_y, params.leaves(requires_grad=False), params.cfg)
    return e.data.copy(), p.data.copy()


def adapt_embeddings(task, model, adapt: AdaptConfig):
    """Refine (e, p) on the meta split with Adam; model weights stay frozen.

    Returns (e, p, meta losses) where losses[i] is the meta loss before step i
    and the last entry is the loss after the final step.
    """
    params = _params_of(model)
    cfg = params.cfg
    frozen = params.leaves(requires_grad=False)
    e0, p0 = encode(task.meta_x, task.meta_y, frozen, cfg)
    e, p = e0.data.copy(), p0.data.copy()
    opt_e = nk.OptimizerState(lr=adapt.lr_dataset, eps=adapt.eps, weight_decay=0.0, beta1=adapt.beta1, beta2=adapt.beta2)
    opt_p = nk.OptimizerState(lr=adapt.lr_columns, eps=adapt.eps, weight_decay=0.0, beta1=adapt.beta1, beta2=adapt.beta2)
    losses = []
    for _ in range(adapt.steps + 1):
        et, pt = nk.Tensor(e, requires_grad=True), nk.Tensor(p, requires_grad=True)
        lt = loss(predict(task.meta_x, pt, generate_weights(et, frozen, cfg)), task.meta_y)
        losses.append(float(lt.data))
        if len(losses) > adapt.steps:
            break
        lt.backward()
        nk.adam_step({"e": e}, {"e": et.grad}, opt_e)
        nk.adam_step({"p": p}, {"p": pt.grad}, opt_p)
    return e, p, losses


def flatadapt_infer(task, model, adapt: AdaptConfig | None = None):
    """Adapt e and p on the meta split, then predict; returns (classes, probabilities)."""
    adapt = adapt or AdaptConfig()
    _check_task(task)
    params = _params_of(model)
    e, p, _ = adapt_embeddings(task, params, adapt)
    frozen = params.leaves(requires_grad=False)
    probs = predict(task.target_x, nk.Tensor(p), generate_weights(nk.Tensor(e), frozen, params.cfg)).data
    return _decide(probs), probs


def recorded_theta(ckpt):
    """Final learnable norms of a finished run, for use as the next run's initial values."""
    return init_theta("recorded", ckpt)
