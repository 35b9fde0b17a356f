"""Compare the numba kernels with the pure-numpy fallback.

    python3 benchmarks/bench_kernels.py [--repeat N]

Times the fused attention forward/backward and the Adam update at sizes the
model actually hits, then one full training step under each backend (the
backend is chosen at import, so that part runs in subprocesses with
FLAT_DISABLE_NUMBA set or unset).
"""

import argparse
import os
import subprocess
import sys
import timeit

import numpy as np

from flat.numkernel import _kernels

STEP_SNIPPET = r"""
import timeit, numpy as np
from flat import numkernel as nk
from flat.synth import synth_corpus
from flat.trainer import TrainConfig, new_checkpoint, make_optimizer, train_step, _sample_batch
from flat.model import ModelConfig
ds = [d for d, _ in synth_corpus("linear", 5, 100, 8, 0)]
cfg = TrainConfig()
ck = new_checkpoint(ModelConfig(), cfg)
opt = make_optimizer(cfg)
rng = np.random.default_rng(0)
batches = [_sample_batch(ds, cfg, rng) for _ in range({n})]
train_step(batches[0], ck.params, opt)
t = timeit.timeit(lambda: [train_step(b, ck.params, opt) for b in batches[1:]], number=1)
print(nk.backend_name(), t / ({n} - 1))
"""


def bench(fn, repeat):
    fn()  # compile / warm caches
    return min(timeit.repeat(fn, number=1, repeat=repeat))


def kernel_table(repeat):
    rng = np.random.default_rng(0)
    impls = [_kernels.numpy_impl] + ([_kernels.numba_impl] if _kernels.numba_impl is not None else [])
    rows = []
    for B, n in [(20, 20), (60, 40), (30, 400)]:
        s, t = rng.normal(size=(B, n)), rng.normal(size=(B, n))
        g = rng.normal(size=(B, n, n))
        for impl in impls:
            alpha = impl.attention_forward(s, t, 0.2)
            fw = bench(lambda: impl.attention_forward(s, t, 0.2), repeat)
            bw = bench(lambda: impl.attention_backward(s, t, alpha, g, 0.2), repeat)
            rows.append((f"attention B={B} n={n}", impl.name, fw, bw))
    size = 334_611  # parameter count of the default model
    for impl in impls:
        p, gr = rng.normal(size=size), rng.normal(size=size)
        m, v = np.zeros(size), np.zeros(size)
        up = bench(lambda: impl.adam_update(p, gr, m, v, 5e-4, 0.9, 0.999, 3e-4, 5e-8, 0.1, 0.001), repeat)
        rows.append((f"adam n={size}", impl.name, up, float("nan")))
    return rows


def step_times(n_steps):
    out = {}
    for disable in ("1", "0"):
        env = dict(os.environ, FLAT_DISABLE_NUMBA=disable)
        res = subprocess.run([sys.executable, "-c", STEP_SNIPPET.format(n=n_steps)], env=env,
                             capture_output=True, text=True, check=True)
        name, secs = res.stdout.split()
        out[name] = float(secs)
    return out


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--repeat", type=int, default=20)
    ap.add_argument("--steps", type=int, default=40, help="training steps timed per backend")
    args = ap.parse_args()

    print(f"{'kernel':28s} {'backend':8s} {'forward ms':>11s} {'backward ms':>12s}")
    for label, name, fw, bw in kernel_table(args.repeat):
        print(f"{label:28s} {name:8s} {fw * 1e3:11.3f} {bw * 1e3:12.3f}")
    print()
    for name, secs in step_times(args.steps).items():
        print(f"train step ({name}): {secs * 1e3:.2f} ms")


if __name__ == "__main__":
    main()
