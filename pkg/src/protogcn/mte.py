"""Input-conditioned topology terms from multi-head query/key projections.

Features ``H`` of shape ``(..., N, T, C)`` are averaged over frames and
projected per head to ``(..., N, C')`` queries and keys with ``C' = C // K``.
The intra term is ``phi(Q K^T)`` per head (an ``N x N`` map broadcast over
that head's ``C'`` channels); the inter term is ``phi(Q_i - K_j)`` for every
joint pair. Heads are concatenated along channels and zero-padded up to ``C``.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .tensor import DimensionError, Tensor


def head_width(channels: int, heads: int) -> int:
    if heads < 1 or channels // heads < 1:
        raise DimensionError(f"cannot split {channels} channels into {heads} heads")
    return channels // heads


@dataclass
class MteParams:
    w_q: list
    w_k: list
    channels: int
    activation: str = "tanh"
    tied: bool = field(default=False)

    @classmethod
    def init(cls, channels, heads, rng, activation="tanh", tied=False, dtype=np.float64):
        width = head_width(channels, heads)
        std = 1.0 / np.sqrt(channels)

        def draw():
            return Tensor(rng.normal(0.0, std, size=(channels, width)).astype(dtype), requires_grad=True)

        w_q = [draw() for _ in range(heads)]
        w_k = w_q if tied else [draw() for _ in range(heads)]
        return cls(w_q, w_k, channels, activation, tied)

    @property
    def heads(self) -> int:
        return len(self.w_q)

    def named_parameters(self, prefix=""):
        out = {f"{prefix}w_q.{h}": w for h, w in enumerate(self.w_q)}
        if not self.tied:
            out.update({f"{prefix}w_k.{h}": w for h, w in enumerate(self.w_k)})
        return out


def project_and_pool(H: Tensor, params: MteParams):
    """Temporal mean followed by per-head projections; returns (queries, keys)."""
    if H.shape[-1] != params.channels:
        raise DimensionError(f"features have {H.shape[-1]} channels, projections expect {params.channels}")
    head_width(params.channels, params.heads)
    pooled = T.mean(H, axis=-2)
    return [pooled @ w for w in params.w_q], [pooled @ w for w in params.w_k]


def _check_pair(hq: Tensor, hk: Tensor):
    if hq.shape != hk.shape or hq.ndim < 2:
        raise DimensionError(f"query/key shapes differ: {hq.shape} vs {hk.shape}")


def intra_topology(hq: Tensor, hk: Tensor, activation: str = "tanh") -> Tensor:
    _check_pair(hq, hk)
    phi = T.ACTIVATIONS[activation]
    scores = phi(hq @ T.swap_last(hk))
    n, width = hq.shape[-2], hq.shape[-1]
    lead = hq.shape[:-2]
    return T.expand(T.reshape(scores, lead + (n, n, 1)), lead + (n, n, width))


def inter_topology(hq: Tensor, hk: Tensor, activation: str = "tanh") -> Tensor:
    _check_pair(hq, hk)
    phi = T.ACTIVATIONS[activation]
    n, width = hq.shape[-2], hq.shape[-1]
    lead = hq.shape[:-2]
    q = T.reshape(hq, lead + (n, 1, width))
    k = T.reshape(hk, lead + (1, n, width))
    return phi(q - k)


def compose_terms(intra_heads, inter_heads, channels: int):
    """Concatenate head slices along channels, zero-padding up to ``channels``."""
    if len(intra_heads) != len(inter_heads) or not intra_heads:
        raise DimensionError("need the same non-zero number of intra and inter heads")
    shapes = {t.shape for t in list(intra_heads) + list(inter_heads)}
    if len(shapes) != 1:
        raise DimensionError(f"inconsistent head shapes {sorted(shapes)}")
    a_intra = T.pad_last(T.concat(intra_heads, axis=-1), channels)
    a_inter = T.pad_last(T.concat(inter_heads, axis=-1), channels)
    return a_intra, a_inter


def topology_terms(H: Tensor, params: MteParams):
    """``(A_intra, A_inter)``, each ``(..., N, N, C)``, for features ``H``."""
    queries, keys = project_and_pool(H, params)
    intra = [intra_topology(q, k, params.activation) for q, k in zip(queries, keys)]
    inter = [inter_topology(q, k, params.activation) for q, k in zip(queries, keys)]
    return compose_terms(intra, inter, params.channels)
