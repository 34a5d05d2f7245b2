"""Central finite-difference gradient auditing."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Mapping, Optional

import numpy as np

from .tensor import NumericError, Tensor, record_kinks


@dataclass
class ParamAudit:
    name: str
    size: int
    checked: int
    skipped_kinks: int
    max_rel_err: float
    max_abs_err: float


@dataclass
class AuditReport:
    eps: float
    params: list = field(default_factory=list)

    @property
    def max_rel_err(self) -> float:
        return max((p.max_rel_err for p in self.params), default=0.0)

    def passed(self, tol: float) -> bool:
        return all(
            p.max_rel_err <= tol and (p.checked > 0 or p.size == 0) for p in self.params
        )

    def lines(self) -> list:
        return [
            f"{p.name:<32} checked={p.checked:<5d} kinks={p.skipped_kinks:<3d} "
            f"rel={p.max_rel_err:.3e} abs={p.max_abs_err:.3e}"
            for p in self.params
        ]


def _evaluate(loss_fn):
    with record_kinks() as kinks:
        value = loss_fn()
    value = float(value.data if isinstance(value, Tensor) else value)
    if not np.isfinite(value):
        raise NumericError(f"loss is not finite: {value}")
    return value, kinks


def _same_kinks(a, b) -> bool:
    return len(a) == len(b) and all(np.array_equal(x, y) for x, y in zip(a, b))


def grad_audit(
    params: Mapping[str, Tensor],
    loss_fn: Callable[[], Tensor],
    eps: float = 1e-3,
    max_checks: Optional[int] = None,
    seed: int = 0,
    retry_scales=(0.1, 0.01),
) -> AuditReport:
    """Compare backprop gradients of ``loss_fn`` with central differences.

    ``loss_fn`` must rebuild the graph from the current parameter data on every
    call. Per parameter tensor, the relative error is the largest absolute
    deviation divided by the largest gradient magnitude in that tensor. A
    coordinate whose +/- eps perturbation flips a relu input sign is retried
    with steps shrunk by ``retry_scales``; if every step straddles a kink
    the coordinate is skipped.
    ``max_checks`` caps the coordinates tested per tensor (random subsample).
    """
    report = AuditReport(eps=eps)
    if not params:
        return report
    for p in params.values():
        if p.dtype != np.float64:
            raise TypeError("gradient audit requires float64 parameters")
        p.grad = None

    loss = loss_fn()
    if not np.isfinite(loss.data).all():
        raise NumericError(f"loss is not finite: {loss.data}")
    loss.backward()
    _, base_kinks = _evaluate(loss_fn)

    rng = np.random.default_rng(seed)
    for name, p in params.items():
        analytic = np.zeros_like(p.data) if p.grad is None else p.grad.copy()
        flat = p.data.reshape(-1)
        coords = np.arange(flat.size)
        if max_checks is not None and flat.size > max_checks:
            coords = np.sort(rng.choice(flat.size, size=max_checks, replace=False))
        numeric, skipped, kept = [], 0, []
        for i in coords:
            orig = flat[i]
            for h in [eps] + [eps * r for r in retry_scales]:
                flat[i] = orig + h
                f_plus, k_plus = _evaluate(loss_fn)
                flat[i] = orig - h
                f_minus, k_minus = _evaluate(loss_fn)
                flat[i] = orig
                if _same_kinks(base_kinks, k_plus) and _same_kinks(base_kinks, k_minus):
                    numeric.append((f_plus - f_minus) / (2 * h))
                    kept.append(i)
                    break
            else:
                skipped += 1
        a = analytic.reshape(-1)[kept]
        n = np.asarray(numeric)
        if len(kept):
            abs_err = float(np.max(np.abs(a - n)))
            denom = max(float(np.max(np.abs(a))), float(np.max(np.abs(n))), 1e-12)
            rel = abs_err / denom if abs_err > 0 else 0.0
        else:
            abs_err = rel = 0.0
        report.params.append(ParamAudit(name, flat.size, len(kept), skipped, rel, abs_err))
    return report
