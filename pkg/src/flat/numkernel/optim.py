"""Adam and AdamW (decoupled weight decay) over dicts of float64 arrays."""

import logging
from dataclasses import dataclass, field

import numpy as np

from . import _kernels

log = logging.getLogger(__name__)


@dataclass
class OptimizerState:
    lr: float = 5e-4
    eps: float = 3e-4
    weight_decay: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)
    skipped: int = 0

    def ensure(self, params):
        for name, p in params.items():
            if name not in self.m:
                self.m[name] = np.zeros_like(p)
                self.v[name] = np.zeros_like(p)
            if not p.flags.c_contiguous:
                raise ValueError(f"parameter {name!r} must be C-contiguous for in-place updates")
            if self.m[name].shape != p.shape:
                raise ValueError(
                    f"optimizer state for {name!r} has shape {self.m[name].shape}, parameter has {p.shape}"
                )


def adamw_step(params, grads, state):
    """One AdamW update, applied in place to ``params``; returns ``params``.

    A step whose gradients contain a non-finite value is rejected: parameters
    and moments stay untouched, but the step counter still advances.
    """
    state.ensure(params)
    state.step += 1
    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            state.skipped += 1
            log.warning("non-finite gradient in %r at step %d; update skipped", name, state.step)
            return params
    bc1 = 1.0 - state.beta1**state.step
    bc2 = 1.0 - state.beta2**state.step
    decay = state.lr * state.weight_decay
    kern = _kernels.active
    for name, p in params.items():
        g = grads.get(name)
        if g is None:
            g = np.zeros_like(p)
        kern.adam_update(
            p, np.ascontiguousarray(g, dtype=np.float64), state.m[name], state.v[name],
            state.lr, state.beta1, state.beta2, state.eps, decay, bc1, bc2,
        )
    return params


def adam_step(params, grads, state):
    """Plain Adam: AdamW with the weight-decay term removed."""
    wd = state.weight_decay
    state.weight_decay = 0.0
    try:
        return adamw_step(params, grads, state)
    finally:
        state.weight_decay = wd
