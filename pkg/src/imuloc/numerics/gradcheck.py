"""Central finite-difference verification of the autodiff engine.

A check takes a loss builder (params -> scalar Tensor), differentiates it
analytically, then perturbs every coordinate by +-eps and compares. The
finite-difference side never touches ``backward``, so the two routes stay
independent.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .tensor import Tensor, backward

LossBuilder = Callable[[dict[str, Tensor]], Tensor]

# Coordinates where both analytic and FD gradients sit below this floor are
# compared absolutely; a relative test is meaningless at zero.
REL_FLOOR = 1e-2


@dataclass
class GradCheckReport:
    max_rel_error: float
    n_checked: int
    tol: float
    failures: list[tuple[str, int, float]] = field(default_factory=list)
    worst: tuple[str, int] | None = None
    finite: bool = True

    @property
    def passed(self) -> bool:
        return self.finite and self.max_rel_error <= self.tol


def finite_difference_check(build_loss: LossBuilder, params: dict[str, Tensor],
                            eps: float = 1e-4, tol: float = 1e-3,
                            max_coords: int | None = None,
                            seed: int = 0) -> GradCheckReport:
    """Compare analytic gradients of ``build_loss`` against central differences.

    ``max_coords`` caps the number of coordinates checked per parameter
    (seeded subsample); None checks all of them.
    """
    report = GradCheckReport(max_rel_error=0.0, n_checked=0, tol=tol)
    loss = build_loss(params)
    if not np.isfinite(loss.data):
        report.finite = False
        return report
    for t in params.values():
        t.grad = None
    backward(loss)
    analytic = {k: (np.zeros_like(t.data) if t.grad is None else t.grad.copy())
                for k, t in params.items()}

    picker = np.random.Generator(np.random.PCG64(seed))
    for name, t in params.items():
        flat = t.data.reshape(-1)
        n = flat.size
        coords = np.arange(n)
        if max_coords is not None and n > max_coords:
            coords = np.sort(picker.choice(n, size=max_coords, replace=False))
        an_flat = analytic[name].reshape(-1)
        for i in coords:
            orig = flat[i]
            flat[i] = orig + eps
            up = float(build_loss(params).data)
            flat[i] = orig - eps
            down = float(build_loss(params).data)
            flat[i] = orig
            if not (np.isfinite(up) and np.isfinite(down)):
                report.finite = False
                return report
            fd = (up - down) / (2.0 * eps)
            an = an_flat[i]
            rel = abs(fd - an) / max(abs(fd), abs(an), REL_FLOOR)
            report.n_checked += 1
            if rel > report.max_rel_error:
                report.max_rel_error = rel
                report.worst = (name, int(i))
            if rel > tol:
                report.failures.append((name, int(i), float(rel)))
    return report


def grad_check(factory: Callable[[int], tuple[dict[str, Tensor], LossBuilder]],
               seed: int, eps: float = 1e-4, tol: float = 1e-3,
               max_coords: int | None = None) -> GradCheckReport:
    """Run a finite-difference check on a seeded network factory.

    ``factory(seed)`` must return (params, loss builder); the loss builder is
    re-evaluated from scratch for every probe, so it must be a pure function
    of the parameter values.
    """
    params, build_loss = factory(seed)
    return finite_difference_check(build_loss, params, eps=eps, tol=tol,
                                   max_coords=max_coords, seed=seed)
