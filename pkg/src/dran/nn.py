"""Functional network layers over the autodiff engine.

Parameters are plain Tensors owned by a DranParams store; every layer here
is a pure function of (inputs, parameter tensors). Initialization helpers
register parameters under dotted paths so gradient checks can address each
one individually.
"""

from __future__ import annotations

import numpy as np

from . import tensor as T
from .params import DranParams
from .tensor import Tensor, apply_op

LN_EPS = 1e-5


# ---------------------------------------------------------------------------
# initialization
# ---------------------------------------------------------------------------

def init_affine(params: DranParams, path: str, rng: np.random.Generator,
                fan_in: int, fan_out: int) -> None:
    bound = 1.0 / np.sqrt(fan_in)
    params.add(f"{path}.w", rng.uniform(-bound, bound, size=(fan_in, fan_out)))
    params.add(f"{path}.b", rng.uniform(-bound, bound, size=(fan_out,)))


def init_mlp(params: DranParams, path: str, rng: np.random.Generator,
             widths: list[int]) -> None:
    """Chain of affine layers: widths = [in, hidden..., out]."""
    for i, (a, b) in enumerate(zip(widths, widths[1:])):
        init_affine(params, f"{path}.l{i}", rng, a, b)


def init_layernorm(params: DranParams, path: str, dim: int) -> None:
    params.add(f"{path}.gain", np.ones(dim))
    params.add(f"{path}.bias", np.zeros(dim))


def init_conv1d(params: DranParams, path: str, rng: np.random.Generator,
                in_channels: int, kernel: int = 3) -> None:
    bound = 1.0 / np.sqrt(in_channels * kernel)
    params.add(f"{path}.w", rng.uniform(-bound, bound, size=(in_channels, kernel)))
    params.add(f"{path}.b", rng.uniform(-bound, bound, size=()))


def init_encoder_layer(params: DranParams, path: str, rng: np.random.Generator,
                       d_model: int, ffn: int) -> None:
    for name in ("q", "k", "v", "o"):
        init_affine(params, f"{path}.{name}", rng, d_model, d_model)
    init_affine(params, f"{path}.ffn.l0", rng, d_model, ffn)
    init_affine(params, f"{path}.ffn.l1", rng, ffn, d_model)
    init_layernorm(params, f"{path}.ln1", d_model)
    init_layernorm(params, f"{path}.ln2", d_model)


# ---------------------------------------------------------------------------
# layers
# ---------------------------------------------------------------------------

def affine(x: Tensor, params: DranParams, path: str) -> Tensor:
    return T.matmul(x, params[f"{path}.w"]) + params[f"{path}.b"]


def mlp(x: Tensor, params: DranParams, path: str, n_layers: int) -> Tensor:
    """Affine chain with ReLU between layers (none after the last)."""
    out = x
    for i in range(n_layers):
        out = affine(out, params, f"{path}.l{i}")
        if i < n_layers - 1:
            out = T.relu(out)
    return out


def layernorm(x: Tensor, params: DranParams, path: str) -> Tensor:
    mu = x.mean(axis=-1, keepdims=True)
    centered = x - mu
    var = (centered * centered).mean(axis=-1, keepdims=True)
    xn = centered / T.tsqrt(var + LN_EPS)
    return xn * params[f"{path}.gain"] + params[f"{path}.bias"]


def conv1d_circular(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    """Single-output-channel 1-D convolution with circular padding.

    x: [..., C_in, W] (channels second-to-last, kernel slides over the last
    axis), w: [C_in, K], b: scalar. Returns [..., W].
    """
    cin, k = w.shape
    if x.shape[-2] != cin:
        raise T.ShapeError(f"conv1d: x channels {x.shape[-2]} != weight "
                           f"channels {cin}")
    width = x.shape[-1]
    offset = (k - 1) // 2
    xd, wd = x.data, w.data

    rolled = [np.roll(xd, offset - kk, axis=-1) for kk in range(k)]
    out = sum(np.einsum("...lc,l->...c", rolled[kk], wd[:, kk])
              for kk in range(k)) + b.data

    def backward(g):
        gf = g.reshape(-1, width)
        gw = np.stack([np.einsum("bc,blc->l", gf, rolled[kk].reshape(-1, cin, width))
                       for kk in range(k)], axis=1)
        gb = np.asarray(g.sum())
        gx = np.zeros_like(xd)
        for kk in range(k):
            shifted = np.roll(g, kk - offset, axis=-1)
            gx += wd[:, kk].reshape(-1, 1) * shifted[..., None, :]
        return gx, gw, gb

    return apply_op(out, (x, w, b), backward)


def multihead_attention(q: Tensor, k: Tensor, v: Tensor, n_heads: int,
                        scale: float | None = None,
                        tau: Tensor | None = None,
                        delta: Tensor | None = None):
    """Attention over the second-to-last axis of [..., S, D] inputs.

    Logits are (tau * q@k^T) * scale + delta, with tau/delta broadcast over
    head and row axes when given. Returns (output [..., S, D], logits
    [..., heads, S, S] before softmax).
    """
    *lead, s, d = q.shape
    if d % n_heads:
        raise T.ShapeError(f"model width {d} not divisible by {n_heads} heads")
    dh = d // n_heads
    if scale is None:
        scale = 1.0 / np.sqrt(dh)
    nl = len(lead)
    # [..., S, D] -> [..., h, S, dh]
    perm_in = tuple(range(nl)) + (nl + 1, nl, nl + 2)
    perm_out = tuple(range(nl)) + (nl + 1, nl, nl + 2)

    def split(t):
        return T.permute(t.reshape(*lead, s, n_heads, dh), perm_in)

    qh, kh, vh = split(q), split(k), split(v)
    logits = T.matmul(qh, T.transpose(kh))
    if tau is not None:
        logits = logits * tau
    logits = logits * scale
    if delta is not None:
        logits = logits + delta
    weights = T.softmax(logits, axis=-1)
    out = T.matmul(weights, vh)
    out = T.permute(out, perm_out).reshape(*lead, s, d)
    return out, logits


def encoder_layer(x: Tensor, params: DranParams, path: str, n_heads: int,
                  tau: Tensor | None = None, delta: Tensor | None = None):
    """Post-norm transformer block; returns (output, attention logits)."""
    q = affine(x, params, f"{path}.q")
    k = affine(x, params, f"{path}.k")
    v = affine(x, params, f"{path}.v")
    att, logits = multihead_attention(q, k, v, n_heads, tau=tau, delta=delta)
    x = layernorm(x + affine(att, params, f"{path}.o"), params, f"{path}.ln1")
    ff = affine(T.relu(affine(x, params, f"{path}.ffn.l0")), params,
                f"{path}.ffn.l1")
    return layernorm(x + ff, params, f"{path}.ln2"), logits
