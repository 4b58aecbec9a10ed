"""Hot numeric kernels with a compiled core and a NumPy fallback.

The inner loops that dominate training time (softmax rows, fused
activations, the Adam update, kernel-density evaluation) exist twice:
once here as plain NumPy, and once in the Cython extension
``dran._ckernels``. The compiled versions are selected at import when the
extension built successfully; set ``STF_DRAN_PURE_PY=1`` to force the
NumPy path. Both implementations are exercised against each other by the
test suite and timed by ``benchmarks/bench_kernels.py``.

All kernels take and return float64 arrays and never touch global state.
"""

from __future__ import annotations

import os

import numpy as np

__all__ = [
    "HAVE_EXT",
    "backend_name",
    "softmax_lastaxis",
    "softmax_grad_lastaxis",
    "sigmoid",
    "sigmoid_grad",
    "softplus",
    "adam_update",
    "kde_eval",
]


# ---------------------------------------------------------------------------
# NumPy reference implementations
# ---------------------------------------------------------------------------

def _np_softmax_lastaxis(x: np.ndarray) -> np.ndarray:
    """Row-stable softmax along the last axis."""
    shifted = x - x.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def _np_softmax_grad_lastaxis(y: np.ndarray, gout: np.ndarray) -> np.ndarray:
    """Backward of softmax given its output y and upstream gradient."""
    dot = (y * gout).sum(axis=-1, keepdims=True)
    return y * (gout - dot)


def _np_sigmoid(x: np.ndarray) -> np.ndarray:
    flat = np.asarray(x, dtype=np.float64).reshape(-1)
    out = np.empty_like(flat)
    pos = flat >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-flat[pos]))
    ex = np.exp(flat[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out.reshape(np.shape(x))


def _np_sigmoid_grad(y: np.ndarray, gout: np.ndarray) -> np.ndarray:
    return gout * y * (1.0 - y)


def _np_softplus(x: np.ndarray) -> np.ndarray:
    # log(1 + e^x) written to avoid overflow for large |x|
    return np.maximum(x, 0.0) + np.log1p(np.exp(-np.abs(x)))


def _np_adam_update(param: np.ndarray, grad: np.ndarray, m: np.ndarray,
                    v: np.ndarray, lr: float, beta1: float, beta2: float,
                    eps: float, step: int) -> None:
    """One bias-corrected Adam step, in place on param/m/v."""
    m *= beta1
    m += (1.0 - beta1) * grad
    v *= beta2
    v += (1.0 - beta2) * grad * grad
    mhat = m / (1.0 - beta1 ** step)
    vhat = v / (1.0 - beta2 ** step)
    param -= lr * mhat / (np.sqrt(vhat) + eps)


def _np_kde_eval(samples: np.ndarray, grid: np.ndarray, h: float,
                 const: float) -> np.ndarray:
    """Sum of Gaussian bumps of width h centred on samples, over grid."""
    u = (grid[:, None] - samples[None, :]) / h
    k = const * np.exp(-0.5 * u * u)
    return k.sum(axis=1) / (samples.size * h)


# ---------------------------------------------------------------------------
# Backend selection
# ---------------------------------------------------------------------------

_ext = None
if not os.environ.get("STF_DRAN_PURE_PY"):
    try:
        from . import _ckernels as _ext  # type: ignore[attr-defined]
    except ImportError:
        _ext = None

HAVE_EXT = _ext is not None


def backend_name() -> str:
    return "cython" if HAVE_EXT else "numpy"


def _c64(x: np.ndarray) -> np.ndarray:
    return np.ascontiguousarray(x, dtype=np.float64)


if HAVE_EXT:

    def softmax_lastaxis(x: np.ndarray) -> np.ndarray:
        return _ext.softmax_lastaxis(_c64(x)).reshape(x.shape)

    def softmax_grad_lastaxis(y: np.ndarray, gout: np.ndarray) -> np.ndarray:
        return _ext.softmax_grad_lastaxis(_c64(y), _c64(gout)).reshape(y.shape)

    def sigmoid(x: np.ndarray) -> np.ndarray:
        return _ext.sigmoid(_c64(x)).reshape(x.shape)

    def sigmoid_grad(y: np.ndarray, gout: np.ndarray) -> np.ndarray:
        return _ext.sigmoid_grad(_c64(y), _c64(gout)).reshape(y.shape)

    # softplus stays on NumPy: its vectorized exp/log1p measured faster
    # than a scalar compiled loop
    softplus = _np_softplus

    def adam_update(param, grad, m, v, lr, beta1, beta2, eps, step) -> None:
        _ext.adam_update(param.reshape(-1), _c64(grad).reshape(-1),
                         m.reshape(-1), v.reshape(-1),
                         lr, beta1, beta2, eps, step)

    def kde_eval(samples, grid, h, const) -> np.ndarray:
        return _ext.kde_eval(_c64(samples), _c64(grid), float(h), float(const))

else:
    softmax_lastaxis = _np_softmax_lastaxis
    softmax_grad_lastaxis = _np_softmax_grad_lastaxis
    sigmoid = _np_sigmoid
    sigmoid_grad = _np_sigmoid_grad
    softplus = _np_softplus
    adam_update = _np_adam_update
    kde_eval = _np_kde_eval


# The NumPy versions stay importable under fixed names so tests and the
# benchmark can compare the two paths inside one process.
numpy_impls = {
    "softmax_lastaxis": _np_softmax_lastaxis,
    "softmax_grad_lastaxis": _np_softmax_grad_lastaxis,
    "sigmoid": _np_sigmoid,
    "sigmoid_grad": _np_sigmoid_grad,
    "softplus": _np_softplus,
    "adam_update": _np_adam_update,
    "kde_eval": _np_kde_eval,
}
