"""Parameter construction, the end-to-end forward pass, and the composite
loss. Ablation switches remove whole stages and their parameters."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import distadapt, dsfl, nn, stochastic
from . import tensor as T
from .config import DranConfig
from .data import WindowBatch
from .params import DranParams
from .tensor import Tensor


def init_params(cfg: DranConfig, rng: np.random.Generator | int) -> DranParams:
    """Create every trainable tensor for the configured variant.

    Creation order is fixed, so a given (config, seed) pair always yields
    the same initialization.
    """
    if isinstance(rng, (int, np.integer)):
        rng = np.random.default_rng(int(rng))
    p = DranParams()
    dm, din, L = cfg.D_model, cfg.D_in, cfg.L

    nn.init_affine(p, "embed", rng, din, dm)

    if not cfg.no_sta:
        stat_in = din + L * dm
        nn.init_mlp(p, "destat.tau_mlp", rng, [stat_in, cfg.stat_hidden, 1])
        nn.init_mlp(p, "destat.delta_mlp", rng, [stat_in, cfg.stat_hidden, L])
    for i in range(cfg.tem_layers):
        nn.init_encoder_layer(p, f"tem.{i}", rng, dm, cfg.ffn)

    if not (cfg.no_sta or cfg.no_sfl):
        w = cfg.sfl_width
        nn.init_conv1d(p, "sfl.conv_raw", rng, L, cfg.kernel_size)
        nn.init_affine(p, "sfl.feat_raw", rng, din, w)
        nn.init_conv1d(p, "sfl.conv_tem", rng, L, cfg.kernel_size)
        nn.init_affine(p, "sfl.feat_tem", rng, dm, w)
        nn.init_affine(p, "sfl.feat_mu", rng, din, w)
        nn.init_affine(p, "sfl.feat_sigma", rng, din, w)
        nn.init_mlp(p, "sfl.fuse", rng, [4 * w, w, 2 * dm])

    for i in range(cfg.spa_layers):
        nn.init_encoder_layer(p, f"dyn.{i}", rng, dm, cfg.ffn)
    if not cfg.no_dsfl:
        dsfl.init_node_embedding(p, rng, L, cfg.N, cfg.C_e)
        bound = 1.0 / np.sqrt(dm)
        p.add("static.W", rng.uniform(-bound, bound, size=(dm, dm)))
        if cfg.no_gate:
            nn.init_affine(p, "fusion.fuse", rng, 2 * dm, dm)
        else:
            nn.init_affine(p, "fusion.gate", rng, 2 * dm, dm)
            nn.init_affine(p, "fusion.fc_dy", rng, dm, dm)
            nn.init_affine(p, "fusion.fc_st", rng, dm, dm)

    if not cfg.no_sto:
        lat = cfg.latent
        nn.init_mlp(p, "sto.b_lat", rng, [dm, lat, lat, 2 * lat])
        nn.init_mlp(p, "sto.f_lat", rng, [dm, lat, lat, 2 * lat])
        nn.init_mlp(p, "sto.b_rec", rng, [lat, lat, lat, dm])
        nn.init_affine(p, "sto.b_out", rng, dm, din)
        nn.init_mlp(p, "sto.f_rec", rng, [lat, lat, lat, dm])

    dec_in = dm if cfg.no_sto else 2 * dm
    nn.init_affine(p, "dec.l0", rng, dec_in, dm)
    nn.init_affine(p, "dec.l1", rng, dm, din)
    nn.init_affine(p, "dec.time", rng, L * din, cfg.H * din)
    return p


@dataclass
class ForwardResult:
    forecast: Tensor
    x_rec: Tensor | None
    latent: stochastic.LatentPair | None
    inter: dict = field(default_factory=dict)


def dran_forward(batch: WindowBatch, params: DranParams, cfg: DranConfig,
                 rng: np.random.Generator | None = None,
                 sample: bool = True) -> ForwardResult:
    """Full pipeline: filter, normalize, temporal attention, factor-learner
    de-normalization, relation fusion, stochastic learner, decoder.

    sample=False (or rng=None) replaces latent draws by their means.
    """
    x = batch.lookback
    inter: dict = {}

    if cfg.keep_frac < 1.0:
        x = distadapt.lowpass_filter(x, cfg.keep_frac)
        inter["x_filt"] = x

    stats = None
    if cfg.no_sta:
        h = x
    else:
        h, stats = distadapt.temporal_normalize(x, cfg.sigma_floor)
        inter["x_norm"], inter["stats"] = h, stats

    embedded = nn.affine(h, params, "embed")
    x_tem, factors = distadapt.destationary_attention(
        embedded, stats, params, cfg.tem_layers, cfg.heads)
    inter["x_tem"], inter["destat"] = x_tem, factors

    if cfg.no_sta or cfg.no_sfl:
        x_spa = x_tem
    else:
        spa_factors = distadapt.sfl(x, x_tem, stats, params, cfg.D_model,
                                    cfg.sigma_floor)
        x_spa = distadapt.spatial_denormalize(x_tem, spa_factors,
                                              cfg.denorm_multiply)
        inter["sfl"] = spa_factors
    inter["x_spa"] = x_spa

    x_dy, a_dy = dsfl.dynamic_branch(x_spa, params, cfg.spa_layers, cfg.heads)
    inter["x_dy"], inter["a_dy"] = x_dy, a_dy
    a_st = None
    if cfg.no_dsfl:
        x_d = x_dy
    else:
        x_st, a_st = dsfl.static_branch(x_spa, params, cfg.a_st_rownorm)
        inter["x_st"], inter["a_st"] = x_st, a_st
        if cfg.no_gate:
            x_d = dsfl.linear_fusion(x_dy, x_st, params)
        else:
            x_d, gate = dsfl.gated_fusion(x_dy, x_st, params)
            inter["z"] = gate
    inter["relations"] = dsfl.RelationPair(a_dy=a_dy, a_st=a_st)
    inter["x_d"] = x_d

    latent = None
    x_rec = None
    x_s = None
    if not cfg.no_sto:
        latent, so = stochastic.stochastic_forward(
            x_d, params, cfg.latent, rng if sample else None,
            rec_from_forward=cfg.eq15_literal)
        x_rec, x_s = so.x_rec, so.x_s

    forecast = stochastic.decode(x_d, x_s, params, cfg.H, cfg.D_in)

    if cfg.no_sfl and not cfg.no_sta:
        # temporal-only normalization: outputs return to data scale through
        # the window statistics instead of the factor learner
        forecast = forecast * stats.sigma + stats.mu
        if x_rec is not None:
            x_rec = x_rec * stats.sigma + stats.mu

    return ForwardResult(forecast=forecast, x_rec=x_rec, latent=latent,
                         inter=inter)


def mae_loss(pred: Tensor, target: Tensor) -> Tensor:
    return T.tabs(pred - target).mean()


def total_loss(forecast: Tensor, horizon: Tensor,
               x_rec: Tensor | None = None, lookback: Tensor | None = None,
               kl: Tensor | None = None, alpha: float = 0.0,
               beta: float = 0.0) -> Tensor:
    """Forecast MAE + alpha * reconstruction MAE + beta * latent KL."""
    loss = mae_loss(forecast, horizon)
    if x_rec is not None:
        loss = loss + mae_loss(x_rec, lookback) * alpha
    if kl is not None:
        loss = loss + kl * beta
    return loss


def batch_loss(batch: WindowBatch, params: DranParams, cfg: DranConfig,
               rng: np.random.Generator | None = None, sample: bool = True):
    """Forward plus composite loss; returns (loss, components, result)."""
    res = dran_forward(batch, params, cfg, rng, sample)
    pred = mae_loss(res.forecast, batch.horizon)
    comps = {"pred": float(pred.data)}
    loss = pred
    if res.x_rec is not None:
        rec = mae_loss(res.x_rec, batch.lookback)
        comps["rec"] = float(rec.data)
        loss = loss + rec * cfg.alpha
    if res.latent is not None:
        kl = stochastic.kl_to_standard_normal(res.latent, cfg.kl_weight_b,
                                              cfg.kl_weight_f)
        comps["kl"] = float(kl.data)
        loss = loss + kl * cfg.beta
    comps["total"] = float(loss.data)
    return loss, comps, res
