"""Prototype memory addressing and topology reconstruction.

A topology ``A`` of shape ``(..., N, N, C)`` is flattened to ``X`` with
``N*N`` rows, each row is matched against ``W_query`` and the softmax
response ``R`` mixes the rows of ``W_memory``: ``Z = softmax(X W_query^T) W_memory``.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .tensor import DimensionError, Tensor


@dataclass
class PrototypeMemory:
    w_memory: Tensor  # (n_pro, C)
    w_query: Tensor  # (n_pro, C)

    def __post_init__(self):
        if self.w_memory.shape != self.w_query.shape or self.w_memory.ndim != 2:
            raise DimensionError(
                f"memory and query must share a (n_pro, C) shape: {self.w_memory.shape} vs {self.w_query.shape}"
            )

    @classmethod
    def init(cls, n_pro: int, channels: int, rng, dtype=np.float64):
        std = 1.0 / np.sqrt(channels)
        mem = rng.normal(0.0, std, size=(n_pro, channels)).astype(dtype)
        query = rng.normal(0.0, std, size=(n_pro, channels)).astype(dtype)
        return cls(Tensor(mem, requires_grad=True), Tensor(query, requires_grad=True))

    @property
    def n_pro(self) -> int:
        return self.w_memory.shape[0]

    def named_parameters(self, prefix=""):
        return {f"{prefix}w_memory": self.w_memory, f"{prefix}w_query": self.w_query}


def flatten_topology(A: Tensor) -> Tensor:
    """``(..., N, N, C) -> (..., N*N, C)`` with row ``i*N + j`` holding pair (i, j)."""
    if A.ndim < 3 or A.shape[-3] != A.shape[-2]:
        raise DimensionError(f"expected (..., N, N, C) topology, got {A.shape}")
    n = A.shape[-2]
    return T.reshape(A, A.shape[:-3] + (n * n, A.shape[-1]))


def unflatten_topology(X: Tensor, n: int) -> Tensor:
    if X.ndim < 2 or X.shape[-2] != n * n:
        raise DimensionError(f"cannot unflatten {X.shape} to {n}x{n} pairs")
    return T.reshape(X, X.shape[:-2] + (n, n, X.shape[-1]))


def address(X: Tensor, memory: PrototypeMemory) -> Tensor:
    if X.shape[-1] != memory.w_query.shape[1]:
        raise DimensionError(f"topology rows have {X.shape[-1]} channels, memory has {memory.w_query.shape[1]}")
    return T.softmax(X @ T.swap_last(memory.w_query), axis=-1)


def reconstruct(R: Tensor, memory: PrototypeMemory) -> Tensor:
    if R.shape[-1] != memory.n_pro:
        raise DimensionError(f"response has {R.shape[-1]} columns, memory has {memory.n_pro} prototypes")
    return R @ memory.w_memory


def refine_topology(A: Tensor, memory: PrototypeMemory, return_parts: bool = False):
    """Reconstruct ``A`` from prototypes; optionally also return ``(X, R, Z)``."""
    X = flatten_topology(A)
    R = address(X, memory)
    Z = reconstruct(R, memory)
    refined = unflatten_topology(Z, A.shape[-2])
    if return_parts:
        return refined, (X, R, Z)
    return refined
