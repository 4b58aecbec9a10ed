"""Distribution adaptation: frequency filtering, per-window temporal
normalization, de-stationary temporal attention, and the spatial factor
learner that produces the de-normalization factors applied before any
spatial mixing.

Array layout throughout: [B, L, N, D] = (batch, lookback step, node,
feature).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import nn
from . import tensor as T
from .params import DranParams
from .tensor import Tensor, apply_op

SIGMA_FLOOR = 1e-5


@dataclass
class NormStats:
    """Per-window temporal mean and floored standard deviation, [B,1,N,D]."""

    mu: Tensor
    sigma: Tensor


@dataclass
class DestatFactors:
    """Positive rescale tau [B,N,1] and per-key shift delta [B,N,L]."""

    tau: Tensor
    delta: Tensor


@dataclass
class SpatialFactors:
    """De-normalization factors, both [B,1,N,D_model]; sigma_spa positive."""

    mu_spa: Tensor
    sigma_spa: Tensor


def lowpass_filter(x: Tensor, keep_frac: float) -> Tensor:
    """Fourier low-pass along the time axis (axis 1).

    Keeps the ceil(keep_frac * L) lowest-|frequency| bins as a
    conjugate-symmetric set; keep_frac=1 is the identity. The projection is
    orthogonal, so the backward pass applies the same filter.
    """
    if not 0.0 < keep_frac <= 1.0:
        raise ValueError(f"keep_frac must lie in (0, 1], got {keep_frac}")
    L = x.shape[1]
    m = math.ceil(keep_frac * L)
    if m >= L:
        return x

    cutoff = (m - 1) // 2  # highest surviving nonnegative frequency index

    def project(arr):
        spec = np.fft.rfft(arr, axis=1)
        idx = [slice(None)] * arr.ndim
        idx[1] = slice(cutoff + 1, None)
        spec[tuple(idx)] = 0.0
        return np.fft.irfft(spec, n=L, axis=1)

    return apply_op(project(x.data), (x,), lambda g: (project(g),))


def temporal_normalize(x: Tensor, sigma_floor: float = SIGMA_FLOOR):
    """Standardize each (batch, node, feature) series by its own window
    statistics; population std, floored so constant windows map to zeros.
    Returns (x_norm, NormStats)."""
    if x.shape[1] < 2:
        raise ValueError("temporal_normalize needs a lookback of at least 2")
    mu = x.mean(axis=1, keepdims=True)
    centered = x - mu
    var = (centered * centered).mean(axis=1, keepdims=True)
    sigma = T.maximum_const(T.tsqrt(var), sigma_floor)
    return centered / sigma, NormStats(mu=mu, sigma=sigma)


def invert_normalize(x_norm: Tensor, stats: NormStats) -> Tensor:
    """Algebraic inverse of temporal_normalize."""
    return x_norm * stats.sigma + stats.mu


def destat_factors(x_embedded: Tensor, stats: NormStats,
                   params: DranParams) -> DestatFactors:
    """Learn tau/delta from the removed statistics and the embedded window.

    tau is exp of an MLP on (sigma, window) so it stays positive; delta is
    an MLP on (mu, window) giving one shift per key position.
    """
    b, l, n, dm = x_embedded.shape
    flat = T.permute(x_embedded, (0, 2, 1, 3)).reshape(b, n, l * dm)
    sig = stats.sigma.reshape(b, n, stats.sigma.shape[-1])
    mu = stats.mu.reshape(b, n, stats.mu.shape[-1])
    tau = T.texp(nn.mlp(T.concat([sig, flat], axis=-1), params,
                        "destat.tau_mlp", 2))
    delta = nn.mlp(T.concat([mu, flat], axis=-1), params, "destat.delta_mlp", 2)
    return DestatFactors(tau=tau, delta=delta)


def destationary_attention(x_embedded: Tensor, stats: NormStats | None,
                           params: DranParams, n_layers: int, n_heads: int):
    """Stacked per-node temporal attention with de-stationary logits.

    stats=None drops the tau/delta modulation (plain attention). Returns
    (x_tem [B,L,N,D_model], DestatFactors or None).
    """
    b, l, n, dm = x_embedded.shape
    factors = None
    tau = delta = None
    if stats is not None:
        factors = destat_factors(x_embedded, stats, params)
        tau = factors.tau.reshape(b, n, 1, 1, 1)
        delta = factors.delta.reshape(b, n, 1, 1, l)

    h = T.permute(x_embedded, (0, 2, 1, 3))  # [B,N,L,D]: attend over L
    for i in range(n_layers):
        h, _ = nn.encoder_layer(h, params, f"tem.{i}", n_heads,
                                tau=tau, delta=delta)
    return T.permute(h, (0, 2, 1, 3)), factors


def sfl(x_raw: Tensor, x_tem: Tensor, stats: NormStats, params: DranParams,
        d_model: int, sigma_floor: float = SIGMA_FLOOR) -> SpatialFactors:
    """Spatial factor learner.

    Node-wise features of the raw window and of the temporal representation
    come from a circular 1-D convolution whose input channels are the L
    time steps; together with affine maps of the window statistics they
    feed a two-layer MLP that emits mu_spa and a softplus-floored
    sigma_spa.
    """
    b, l, n, d_in = x_raw.shape

    def node_features(x, conv_path, feat_path):
        h = T.permute(x, (0, 2, 1, 3))  # [B,N,L,C]
        c = nn.conv1d_circular(h, params[f"{conv_path}.w"],
                               params[f"{conv_path}.b"])  # [B,N,C]
        return nn.affine(c, params, feat_path)

    f_raw = node_features(x_raw, "sfl.conv_raw", "sfl.feat_raw")
    f_tem = node_features(x_tem, "sfl.conv_tem", "sfl.feat_tem")
    f_mu = nn.affine(stats.mu.reshape(b, n, d_in), params, "sfl.feat_mu")
    f_sigma = nn.affine(stats.sigma.reshape(b, n, d_in), params, "sfl.feat_sigma")

    fused = nn.mlp(T.concat([f_raw, f_tem, f_mu, f_sigma], axis=-1),
                   params, "sfl.fuse", 2)  # [B,N,2*D_model]
    mu_spa = T.narrow(fused, -1, 0, d_model).reshape(b, 1, n, d_model)
    s_raw = T.narrow(fused, -1, d_model, d_model).reshape(b, 1, n, d_model)
    sigma_spa = T.softplus(s_raw) + sigma_floor
    return SpatialFactors(mu_spa=mu_spa, sigma_spa=sigma_spa)


def spatial_denormalize(x_tem: Tensor, f: SpatialFactors,
                        multiply: bool = False) -> Tensor:
    """Restore spatial scale before the relation learner.

    Default divides by sigma_spa (the printed form of the model); multiply
    selects the conventional de-normalization x*sigma + mu.
    """
    if multiply:
        return x_tem * f.sigma_spa + f.mu_spa
    return x_tem / f.sigma_spa + f.mu_spa
