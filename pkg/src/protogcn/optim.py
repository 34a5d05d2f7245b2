"""SGD with Nesterov momentum and weight decay, plus a cosine learning-rate schedule.

Update per parameter ``theta`` with gradient ``grad``::

    g = grad + wd * theta
    v = mu * v + g
    theta = theta - lr * (g + mu * v)

With ``clip_norm`` set, raw gradients are first rescaled so that their global
L2 norm does not exceed it.
"""
from __future__ import annotations

import math
from typing import Iterable, Mapping, Optional

import numpy as np


def cosine_lr(epoch: float, total_epochs: int, base_lr: float) -> float:
    if total_epochs <= 0:
        raise ValueError("total_epochs must be positive")
    if not 0 <= epoch <= total_epochs:
        raise ValueError(f"epoch {epoch} outside [0, {total_epochs}]")
    return base_lr * 0.5 * (1.0 + math.cos(math.pi * epoch / total_epochs))


class NesterovSGD:
    def __init__(
        self,
        params: Mapping[str, "object"],
        lr: float = 0.1,
        momentum: float = 0.9,
        weight_decay: float = 5e-4,
        nesterov: bool = True,
        no_decay: Iterable[str] = (),
        clip_norm: Optional[float] = None,
    ):
        if lr < 0 or momentum < 0 or weight_decay < 0:
            raise ValueError("lr, momentum and weight_decay must be non-negative")
        if clip_norm is not None and clip_norm <= 0:
            raise ValueError("clip_norm must be positive")
        self.clip_norm = clip_norm
        self.params = dict(params)
        self.lr = lr
        self.momentum = momentum
        self.weight_decay = weight_decay
        self.nesterov = nesterov
        self.no_decay = set(no_decay)
        self.velocity = {name: np.zeros_like(p.data) for name, p in self.params.items()}

    def zero_grad(self):
        for p in self.params.values():
            p.grad = None

    def step(self, lr: Optional[float] = None):
        lr = self.lr if lr is None else lr
        mu = self.momentum
        missing = [name for name, p in self.params.items() if p.grad is None]
        if missing:
            raise ValueError(f"parameter {missing[0]!r} has no gradient")
        scale = 1.0
        if self.clip_norm is not None:
            norm = self.grad_norm()
            if norm > self.clip_norm:
                scale = self.clip_norm / norm
        for name, p in self.params.items():
            g = p.grad * scale if scale != 1.0 else p.grad
            if self.weight_decay and name not in self.no_decay:
                g = g + self.weight_decay * p.data
            v = self.velocity[name]
            v *= mu
            v += g
            update = g + mu * v if self.nesterov else v
            p.data -= lr * update

    def grad_norm(self) -> float:
        return math.sqrt(sum(float(np.sum(p.grad * p.grad)) for p in self.params.values()))

    def state_dict(self) -> dict:
        return {f"velocity.{k}": v for k, v in self.velocity.items()}

    def load_state_dict(self, state: Mapping[str, np.ndarray]):
        for name in self.velocity:
            key = f"velocity.{name}"
            if key in state:
                self.velocity[name] = np.array(state[key], dtype=self.velocity[name].dtype)


def step(params, grads, velocity, lr, momentum=0.9, weight_decay=0.0):
    """Functional form on plain arrays; returns ``(new_params, new_velocity)``."""
    new_p, new_v = [], []
    for theta, grad, v in zip(params, grads, velocity):
        g = grad + weight_decay * theta
        v = momentum * v + g
        new_p.append(theta - lr * (g + momentum * v))
        new_v.append(v)
    return new_p, new_v
