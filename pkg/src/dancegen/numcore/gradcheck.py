"""Central finite-difference gradient checking."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .tensor import Tensor, backward


@dataclass
class GradCheckReport:
    max_rel_error: float
    tol: float
    checked: int
    # (param name, flat index, analytic, numeric, relative error)
    failures: list[tuple[str, int, float, float, float]] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return not self.failures


def grad_check(
    f: Callable[[dict[str, Tensor]], Tensor],
    point: dict[str, np.ndarray],
    h: float = 1e-5,
    tol: float = 1e-4,
    floor: float = 1e-6,
    max_coords: int | None = None,
    seed: int = 0,
) -> GradCheckReport:
    """Compare analytic gradients of ``f`` at ``point`` with central differences.

    ``f`` builds a scalar from a dict of leaf tensors. The relative error per
    coordinate is ``|a - n| / max(|a|, |n|, floor)``. With ``max_coords`` set,
    each parameter is checked on a seeded random subset of coordinates.
    """
    if h <= 0:
        raise ValueError("h must be positive")
    leaves = {k: Tensor(np.array(v, dtype=np.float64), requires_grad=True) for k, v in point.items()}
    backward(f(leaves))
    analytic = {
        k: (t.grad if t.grad is not None else np.zeros_like(t.data)) for k, t in leaves.items()
    }

    rng = np.random.default_rng(seed)
    base = {k: np.array(v, dtype=np.float64) for k, v in point.items()}

    def evaluate(arrs):
        return float(f({k: Tensor(a) for k, a in arrs.items()}).data)

    worst = 0.0
    checked = 0
    failures = []
    for name, arr in base.items():
        flat_idx = np.arange(arr.size)
        if max_coords is not None and arr.size > max_coords:
            flat_idx = np.sort(rng.choice(arr.size, size=max_coords, replace=False))
        for i in flat_idx:
            orig = arr.flat[i]
            arr.flat[i] = orig + h
            fp = evaluate(base)
            arr.flat[i] = orig - h
            fm = evaluate(base)
            arr.flat[i] = orig
            num = (fp - fm) / (2.0 * h)
            ana = float(analytic[name].flat[i])
            rel = abs(ana - num) / max(abs(ana), abs(num), floor)
            worst = max(worst, rel)
            checked += 1
            if rel > tol:
                failures.append((name, int(i), ana, num, rel))
    return GradCheckReport(max_rel_error=worst, tol=tol, checked=checked, failures=failures)
