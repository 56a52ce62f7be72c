"""Finite-difference gradient checking (64-bit mode)."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .tensor import Tape, Tensor, backward


@dataclass
class GradCheckReport:
    passed: bool
    worst_rel_err: float
    worst_index: tuple[int, ...] | None
    checked: int

    def __bool__(self):
        return self.passed


def _eval(f: Callable[[Tensor], Tensor], data: np.ndarray) -> float:
    out = f(Tensor(data))
    return float(np.asarray(out.data).reshape(()))


def grad_check(
    f: Callable[[Tensor], Tensor],
    x: Tensor,
    eps: float = 1e-4,
    tol: float = 1e-3,
    max_coords: int = 10_000,
    probes: int = 64,
    seed: int = 0,
) -> GradCheckReport:
    """Compare reverse-mode gradients of scalar-valued f against central
    differences, coordinate-wise (or along random probe directions when x
    has more than max_coords entries).  Runs in float64."""
    base = np.asarray(x.data, dtype=np.float64)
    xt = Tensor(base.copy(), requires_grad=True)
    tape = Tape()
    with tape:
        loss = f(xt)
    backward(loss, tape)
    analytic = xt.grad
    if analytic is None:
        analytic = np.zeros_like(base)

    worst = 0.0
    worst_index: tuple[int, ...] | None = None
    checked = 0
    if base.size <= max_coords:
        it = np.nditer(base, flags=["multi_index"])
        while not it.finished:
            idx = it.multi_index
            d = base.copy()
            d[idx] += eps
            up = _eval(f, d)
            d[idx] -= 2 * eps
            down = _eval(f, d)
            numeric = (up - down) / (2 * eps)
            a = float(analytic[idx])
            rel = abs(a - numeric) / max(abs(a), abs(numeric), 1e-3)
            if rel > worst:
                worst, worst_index = rel, idx
            checked += 1
            it.iternext()
    else:
        rng = np.random.default_rng(seed)
        for k in range(probes):
            direction = rng.standard_normal(base.shape)
            direction /= np.linalg.norm(direction)
            up = _eval(f, base + eps * direction)
            down = _eval(f, base - eps * direction)
            numeric = (up - down) / (2 * eps)
            a = float((analytic * direction).sum())
            rel = abs(a - numeric) / max(abs(a), abs(numeric), 1e-3)
            if rel > worst:
                worst, worst_index = rel, (k,)
            checked += 1
    return GradCheckReport(worst <= tol, worst, worst_index, checked)
