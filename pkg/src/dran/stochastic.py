"""Twin variational stochastic learner and the output decoder.

Two latent heads (backward and forward) encode the deterministic features
into diagonal Gaussians; reparameterized samples feed reconstruction heads
producing a lookback reconstruction and stochastic forecast features. At
evaluation time the latent mean replaces the sample.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import nn
from . import tensor as T
from .params import DranParams
from .tensor import Tensor


@dataclass
class LatentPair:
    """Backward/forward latent Gaussians and their (reparameterized) samples."""

    mu_b: Tensor
    sigma_b: Tensor
    mu_f: Tensor
    sigma_f: Tensor
    z_b: Tensor
    z_f: Tensor
    logvar_b: Tensor
    logvar_f: Tensor


@dataclass
class StochOutputs:
    """Lookback reconstruction [B,L,N,D_in], forecast features [B,L,N,D_model]."""

    x_rec: Tensor
    x_s: Tensor


def _latent_head(x_d: Tensor, params: DranParams, path: str, latent: int):
    out = nn.mlp(x_d, params, path, 3)  # [..., 2*latent]
    mu = T.narrow(out, -1, 0, latent)
    logvar = T.narrow(out, -1, latent, latent)
    sigma = T.texp(logvar * 0.5)
    return mu, sigma, logvar


def _sample(mu: Tensor, sigma: Tensor, rng: np.random.Generator | None) -> Tensor:
    if rng is None:
        return mu
    eps = Tensor(rng.standard_normal(size=mu.shape))
    return mu + sigma * eps


def stochastic_forward(x_d: Tensor, params: DranParams, latent: int,
                       rng: np.random.Generator | None,
                       rec_from_forward: bool = False):
    """Run both stochastic learners.

    rng=None disables sampling (z = mu). rec_from_forward feeds the forward
    sample into the backward reconstruction head, reproducing the model
    description's literal wiring; the default reconstructs from the
    backward sample so that path trains its own latent.
    Returns (LatentPair, StochOutputs).
    """
    mu_b, sigma_b, logvar_b = _latent_head(x_d, params, "sto.b_lat", latent)
    mu_f, sigma_f, logvar_f = _latent_head(x_d, params, "sto.f_lat", latent)
    z_b = _sample(mu_b, sigma_b, rng)
    z_f = _sample(mu_f, sigma_f, rng)
    lat = LatentPair(mu_b=mu_b, sigma_b=sigma_b, mu_f=mu_f, sigma_f=sigma_f,
                     z_b=z_b, z_f=z_f, logvar_b=logvar_b, logvar_f=logvar_f)

    rec_in = z_f if rec_from_forward else z_b
    x_rec = nn.affine(nn.mlp(rec_in, params, "sto.b_rec", 3), params, "sto.b_out")
    x_s = nn.mlp(z_f, params, "sto.f_rec", 3)
    return lat, StochOutputs(x_rec=x_rec, x_s=x_s)


def kl_to_standard_normal(lat: LatentPair, weight_b: float = 1.0,
                          weight_f: float = 1.0) -> Tensor:
    """Mean per-element KL to N(0, I), summed over the two latent pairs."""

    def one(mu, logvar):
        return ((mu * mu + T.texp(logvar) - 1.0 - logvar) * 0.5).mean()

    return one(lat.mu_b, lat.logvar_b) * weight_b + \
        one(lat.mu_f, lat.logvar_f) * weight_f


def decode(x_d: Tensor, x_s: Tensor | None, params: DranParams,
           horizon: int, d_in: int) -> Tensor:
    """Map fused features to the forecast [B,H,N,D_in].

    Two affine layers reduce the feature axis to D_in, then one affine map
    per node sends the flattened lookback axis to the horizon.
    """
    feats = x_d if x_s is None else T.concat([x_d, x_s], axis=-1)
    h = T.relu(nn.affine(feats, params, "dec.l0"))
    y = nn.affine(h, params, "dec.l1")  # [B,L,N,D_in]
    b, l, n, _ = y.shape
    flat = T.permute(y, (0, 2, 1, 3)).reshape(b, n, l * d_in)
    out = nn.affine(flat, params, "dec.time").reshape(b, n, horizon, d_in)
    return T.permute(out, (0, 2, 1, 3))
