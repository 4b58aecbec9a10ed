"""Distribution estimation, shift detection, and evaluation metrics.

Densities are univariate Gaussian kernel estimates on a uniform grid;
divergence between two estimates is trapezoidal KL with both densities
floored, so disjoint supports stay finite. MAE/MAPE operate on raw arrays
and serve as the metric oracles for the training loop.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import kernels
from .data import SeriesPanel

GAUSS_NORM = 1.0 / math.sqrt(2.0 * math.pi)
DENSITY_FLOOR = 1e-12


@dataclass
class DensityEstimate:
    """KDE evaluated on a uniform grid spanning the samples +- 3 bandwidths."""

    grid: np.ndarray
    density: np.ndarray
    h: float


@dataclass
class ShiftVerdict:
    kl: float
    delta: float
    shifted: bool


def kde(samples, h: float = 0.1, grid_size: int = 512, *,
        printed_constant: bool = False) -> DensityEstimate:
    """Gaussian kernel density estimate of a 1-D sample set.

    printed_constant swaps the kernel's 1/sqrt(2*pi) for 1/(2*pi); the
    resulting curve no longer integrates to 1 and exists only for
    comparison purposes.
    """
    samples = np.asarray(samples, dtype=np.float64).reshape(-1)
    if samples.size == 0:
        raise ValueError("kde requires at least one sample")
    if h <= 0:
        raise ValueError("bandwidth must be positive")
    lo = samples.min() - 3.0 * h
    hi = samples.max() + 3.0 * h
    grid = np.linspace(lo, hi, grid_size)
    const = (1.0 / (2.0 * math.pi)) if printed_constant else GAUSS_NORM
    density = kernels.kde_eval(samples, grid, h, const)
    return DensityEstimate(grid=grid, density=density, h=h)


def kl_divergence(p: DensityEstimate, q: DensityEstimate) -> float:
    """Trapezoidal integral of p*log(p/q) on p's grid.

    q is resampled onto p's grid by linear interpolation; both curves are
    floored at 1e-12 before the log.
    """
    qd = np.interp(p.grid, q.grid, q.density)
    pd = np.maximum(p.density, DENSITY_FLOOR)
    qd = np.maximum(qd, DENSITY_FLOOR)
    integrand = p.density * (np.log(pd) - np.log(qd))
    return float(np.trapezoid(integrand, p.grid))


def detect_shift(panel: SeriesPanel, node: int,
                 window_a: tuple[int, int], window_b: tuple[int, int],
                 h: float = 0.1, delta: float = 0.1,
                 grid_size: int = 512) -> ShiftVerdict:
    """Compare one node's value distribution across two index windows."""
    if not 0 <= node < panel.n_nodes:
        raise IndexError(f"node {node} out of range for {panel.n_nodes} nodes")
    values = panel.values.data
    segs = []
    for lo, hi in (window_a, window_b):
        if not (0 <= lo < hi <= panel.T):
            raise ValueError(f"window ({lo}, {hi}) outside panel of length {panel.T}")
        seg = values[lo:hi, node, :].reshape(-1)
        if seg.size == 0:
            raise ValueError("empty window")
        segs.append(seg)
    kl = kl_divergence(kde(segs[0], h, grid_size), kde(segs[1], h, grid_size))
    return ShiftVerdict(kl=kl, delta=delta, shifted=kl > delta)


def _to_array(x) -> np.ndarray:
    data = getattr(x, "data", x)
    return np.asarray(data, dtype=np.float64)


def mae(pred, target) -> float:
    p, t = _to_array(pred), _to_array(target)
    if p.shape != t.shape:
        raise ValueError(f"mae: shapes differ, {p.shape} vs {t.shape}")
    return float(np.abs(p - t).mean())


def mape(pred, target, floor: float = 1e-3) -> float:
    """Mean absolute percentage error, skipping targets below floor."""
    p, t = _to_array(pred), _to_array(target)
    if p.shape != t.shape:
        raise ValueError(f"mape: shapes differ, {p.shape} vs {t.shape}")
    mask = np.abs(t) >= floor
    if not mask.any():
        raise ValueError("mape: no valid elements (all targets below floor)")
    return float((np.abs((p[mask] - t[mask]) / t[mask])).mean() * 100.0)
