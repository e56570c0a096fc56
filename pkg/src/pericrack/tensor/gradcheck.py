"""Finite-difference validation of tape gradients."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import Tensor


@dataclass
class GradCheckReport:
    error: float
    n_probes: int
    n_skipped: int
    floor: float


def _relative(a: float, n: float, floor: float = 1e-7) -> float:
    return abs(a - n) / max(abs(a), abs(n), floor)


def grad_check_report(f, params: list[Tensor], eps: float = 1e-5, n_samples: int = 20, seed: int = 0,
                      tol: float = 1e-4, kink_guard: bool = False,
                      resolution_floor: bool = False) -> GradCheckReport:
    """Like :func:`grad_check` but also counts probes.

    With ``resolution_floor``, the near-zero floor of the relative error is
    raised to what a central difference can resolve at ``tol``, namely
    ``spacing(|f|) / (eps * tol)``. Components smaller than that (common when
    ``f`` is a sum over many pixels) are then compared in absolute terms.

    With ``kink_guard``, a probe whose central difference disagrees with the
    tape by more than ``tol`` is re-measured at ``eps / 4``. If the two
    differences disagree with each other by more than ``tol`` the probe
    straddles a kink (e.g. a ReLU input crossing zero) and is skipped;
    otherwise the finer difference is the reference. A wrong tape gradient
    still fails, since both differences then agree with each other.
    """
    rng = np.random.default_rng(seed)
    for p in params:
        p.grad = None
    value = f()
    value.backward()
    analytic = [np.zeros_like(p.data) if p.grad is None else p.grad.copy() for p in params]
    floor = 1e-7
    if resolution_floor:
        floor = max(floor, float(np.spacing(abs(float(value.data)))) / (eps * tol))

    def central(flat, k, h):
        old = flat[k]
        flat[k] = old + h
        up = float(f().data)
        flat[k] = old - h
        down = float(f().data)
        flat[k] = old
        return (up - down) / (2 * h)

    worst, probes, skipped = 0.0, 0, 0
    for p, ga in zip(params, analytic):
        flat = p.data.reshape(-1)
        coords = np.arange(flat.size)
        if flat.size > n_samples:
            coords = rng.choice(flat.size, n_samples, replace=False)
        for k in coords:
            probes += 1
            a = float(ga.reshape(-1)[k])
            num = central(flat, k, eps)
            err = _relative(a, num, floor)
            if kink_guard and err > tol:
                fine = central(flat, k, eps / 4)
                if _relative(num, fine, floor) > tol:
                    skipped += 1
                    continue
                err = _relative(a, fine, floor)
            worst = max(worst, err)
    for p in params:
        p.grad = None
    return GradCheckReport(worst, probes, skipped, floor)


def grad_check(f, params: list[Tensor], eps: float = 1e-5, n_samples: int = 20, seed: int = 0) -> float:
    """Max relative error between tape gradients and central differences.

    ``f()`` must rebuild the graph from ``params`` and return a scalar tensor.
    Up to ``n_samples`` coordinates per parameter are probed. Relative error is
    ``|a - n| / max(|a|, |n|, 1e-7)`` so that near-zero gradients compare in
    absolute terms.
    """
    return grad_check_report(f, params, eps, n_samples, seed).error
