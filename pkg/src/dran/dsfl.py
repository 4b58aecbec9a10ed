"""Dynamic-static relation fusion.

The dynamic branch attends over nodes per time step; the static branch
aggregates through the Gram matrix of a trainable per-step node embedding.
A sigmoid gate mixes the two feature sets elementwise.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import nn
from . import tensor as T
from .params import DranParams
from .tensor import Tensor


@dataclass
class RelationPair:
    """Pre-softmax dynamic logits [B,heads,L,N,N] and raw static Gram [L,N,N]."""

    a_dy: Tensor | None
    a_st: Tensor | None


@dataclass
class GateSignal:
    """Elementwise mixing weights in (0,1), [B,L,N,D_model]."""

    z: Tensor


def init_node_embedding(params: DranParams, rng: np.random.Generator,
                        L: int, N: int, c_e: int) -> None:
    bound = 0.5 / np.sqrt(c_e)
    params.add("static.emb", rng.uniform(-bound, bound, size=(L, N, c_e)))


def dynamic_branch(x_spa: Tensor, params: DranParams, n_layers: int,
                   n_heads: int):
    """Per-time-step attention over the node axis.

    Returns (x_dy [B,L,N,D_model], first-layer logits [B,heads,L,N,N]).
    """
    h = x_spa  # [B,L,N,D]: second-to-last axis is already the node axis
    a_dy = None
    for i in range(n_layers):
        h, logits = nn.encoder_layer(h, params, f"dyn.{i}", n_heads)
        if i == 0:
            a_dy = T.permute(logits, (0, 2, 1, 3, 4))  # [B,h,L,N,N]
    return h, a_dy


def static_branch(x_spa: Tensor, params: DranParams,
                  row_normalize: bool = True):
    """Graph aggregation through the embedding Gram matrix.

    Returns (x_st [B,L,N,D_model], raw Gram a_st [L,N,N]). row_normalize
    applies a row softmax before aggregation so activations stay O(1) in
    the node count; the raw symmetric Gram is returned either way.
    """
    emb = params["static.emb"]  # [L,N,C_e]
    gram = T.matmul(emb, T.transpose(emb))  # [L,N,N]
    adj = T.softmax(gram, axis=-1) if row_normalize else gram
    x_st = T.matmul(T.matmul(adj, x_spa), params["static.W"])
    return x_st, gram


def gated_fusion(x_dy: Tensor, x_st: Tensor, params: DranParams):
    """Sigmoid-gated convex mix of projected dynamic and static features."""
    if x_dy.shape != x_st.shape:
        raise T.ShapeError(f"gated_fusion: shapes differ, {x_dy.shape} "
                           f"vs {x_st.shape}")
    cat = T.concat([x_dy, x_st], axis=-1)
    z = T.sigmoid(nn.affine(cat, params, "fusion.gate"))
    x_d = z * nn.affine(x_dy, params, "fusion.fc_dy") + \
        (1.0 - z) * nn.affine(x_st, params, "fusion.fc_st")
    return x_d, GateSignal(z=z)


def linear_fusion(x_dy: Tensor, x_st: Tensor, params: DranParams) -> Tensor:
    """Gate ablation: one affine map on the concatenated features."""
    cat = T.concat([x_dy, x_st], axis=-1)
    return nn.affine(cat, params, "fusion.fuse")
