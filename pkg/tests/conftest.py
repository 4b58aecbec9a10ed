"""Shared test helpers: finite-difference gradients and comparison utils."""

from __future__ import annotations

import numpy as np

from dran.tensor import Tensor


def fd_grad(fn, leaf: Tensor, h: float = 1e-5) -> np.ndarray:
    """Central finite-difference gradient of scalar fn() w.r.t. leaf.

    fn must rebuild its forward pass from leaf.data on every call.
    """
    base = leaf.data.copy()
    out = np.zeros_like(base)
    flat = base.reshape(-1)
    gflat = out.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        leaf.data = flat.reshape(base.shape)
        hi = float(fn().data)
        flat[i] = orig - h
        leaf.data = flat.reshape(base.shape)
        lo = float(fn().data)
        flat[i] = orig
        gflat[i] = (hi - lo) / (2.0 * h)
    leaf.data = base
    return out


def rel_err(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-8) -> float:
    """Max elementwise difference scaled by the larger gradient magnitude."""
    scale = max(np.abs(analytic).max(initial=0.0),
                np.abs(numeric).max(initial=0.0), floor)
    return float(np.abs(analytic - numeric).max(initial=0.0) / scale)


def check_grads(make_loss, leaves: list[Tensor], tol: float = 1e-6,
                h: float = 1e-5) -> None:
    """Assert analytic gradients of make_loss() match finite differences."""
    for leaf in leaves:
        leaf.zero_grad()
    loss = make_loss()
    loss.backward()
    for k, leaf in enumerate(leaves):
        assert leaf.grad is not None, f"leaf {k} got no gradient"
        numeric = fd_grad(make_loss, leaf, h=h)
        err = rel_err(leaf.grad, numeric)
        assert err < tol, f"leaf {k}: gradient mismatch rel_err={err:.3g}"
