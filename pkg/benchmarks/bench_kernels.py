#!/usr/bin/env python3
"""Time the compiled kernels against the NumPy fallback.

Runs each kernel on shapes representative of training (attention softmax
rows, activation maps, optimizer updates, KDE grids) and prints per-call
times plus speedup. Also times one forward/backward training step through
whichever backend is active.

    python3 benchmarks/bench_kernels.py [--repeat N]
"""

import argparse
import math
import time

import numpy as np

from dran import kernels
from dran.config import DranConfig
from dran.data import WindowBatch
from dran.model import batch_loss, init_params
from dran.optim import AdamState, adam_step
from dran.tensor import Tensor, unchecked


def timeit(fn, repeat):
    fn()  # warm up
    t0 = time.perf_counter()
    for _ in range(repeat):
        fn()
    return (time.perf_counter() - t0) / repeat


def bench_kernels(repeat):
    r = np.random.default_rng(0)
    softmax_x = r.normal(size=(32, 4, 12, 24, 24))
    softmax_y = kernels.numpy_impls["softmax_lastaxis"](softmax_x)
    softmax_g = r.normal(size=softmax_x.shape)
    act_x = r.normal(size=(32, 12, 8, 160))
    act_y = kernels.numpy_impls["sigmoid"](act_x)
    act_g = r.normal(size=act_x.shape)
    p = r.normal(size=500_000)
    g = r.normal(size=500_000)
    m = np.zeros_like(p)
    v = np.zeros_like(p)
    samples = r.normal(size=10_000)
    grid = np.linspace(-4, 4, 512)
    const = 1.0 / math.sqrt(2 * math.pi)

    cases = [
        ("softmax rows 24x24", "softmax_lastaxis", (softmax_x,)),
        ("softmax backward", "softmax_grad_lastaxis", (softmax_y, softmax_g)),
        ("sigmoid", "sigmoid", (act_x,)),
        ("sigmoid backward", "sigmoid_grad", (act_y, act_g)),
        ("adam update 500k", "adam_update",
         (p, g, m, v, 1e-3, 0.9, 0.999, 1e-8, 1)),
        ("kde 10k x 512", "kde_eval", (samples, grid, 0.1, const)),
    ]

    print(f"active backend: {kernels.backend_name()}")
    print(f"{'kernel':24s} {'numpy':>12s} {'compiled':>12s} {'speedup':>9s}")
    for label, name, args in cases:
        t_np = timeit(lambda: kernels.numpy_impls[name](*args), repeat)
        if kernels.HAVE_EXT:
            t_c = timeit(lambda: getattr(kernels, name)(*args), repeat)
            print(f"{label:24s} {t_np * 1e3:10.3f}ms {t_c * 1e3:10.3f}ms "
                  f"{t_np / t_c:8.2f}x")
        else:
            print(f"{label:24s} {t_np * 1e3:10.3f}ms {'-':>12s} {'-':>9s}")


def bench_train_step(repeat):
    cfg = DranConfig(L=12, H=4, N=8, D_in=1, D_model=32, heads=4,
                     tem_layers=2, spa_layers=2, ffn=64, latent=16,
                     stat_hidden=16, sfl_width=16, C_e=8)
    r = np.random.default_rng(1)
    batch = WindowBatch(Tensor(r.normal(size=(32, cfg.L, cfg.N, cfg.D_in))),
                        Tensor(r.normal(size=(32, cfg.H, cfg.N, cfg.D_in))),
                        np.arange(32))
    params = init_params(cfg, 0)
    state = AdamState(params, lr=cfg.lr)
    rng = np.random.default_rng(2)

    def step():
        with unchecked():
            loss, _, _ = batch_loss(batch, params, cfg, rng)
            loss.backward()
            adam_step(params, state)

    t = timeit(step, max(3, repeat // 10))
    print(f"\nfull train step (B=32, {params.count()} params, "
          f"{kernels.backend_name()} backend): {t * 1e3:.1f}ms")


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--repeat", type=int, default=20)
    args = ap.parse_args()
    bench_kernels(args.repeat)
    bench_train_step(args.repeat)


if __name__ == "__main__":
    main()
