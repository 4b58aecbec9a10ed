"""Adam optimizer over a DranParams store."""

from __future__ import annotations

import numpy as np

from . import kernels
from .params import DranParams


class AdamState:
    """Per-parameter first/second moment buffers plus the shared step count."""

    def __init__(self, params: DranParams, lr: float = 0.001,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.step = 0
        self.m = {path: np.zeros_like(t.data) for path, t in params.items()}
        self.v = {path: np.zeros_like(t.data) for path, t in params.items()}


def adam_step(params: DranParams, state: AdamState,
              clip_norm: float | None = None) -> None:
    """Apply one bias-corrected Adam update and clear all gradients.

    Every parameter must carry a gradient. clip_norm, when given, rescales
    the global gradient vector to at most that L2 norm first.
    """
    missing = [path for path, t in params.items() if t.grad is None]
    if missing:
        raise ValueError(f"adam_step: missing gradient for parameter {missing[0]!r}")

    if clip_norm is not None:
        total = 0.0
        for _, t in params.items():
            g = t.grad
            total += float((g * g).sum())
        norm = np.sqrt(total)
        if norm > clip_norm:
            scale = clip_norm / norm
            for _, t in params.items():
                t.grad = t.grad * scale

    state.step += 1
    for path, t in params.items():
        kernels.adam_update(t.data, t.grad, state.m[path], state.v[path],
                            state.lr, state.beta1, state.beta2,
                            state.eps, state.step)
        t.grad = None
