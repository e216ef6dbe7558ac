"""Finite-difference audit of analytic gradients."""

import logging
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from app.tensor.tensor import Tensor, backward, no_grad

logger = logging.getLogger(__name__)

Params = Union[Sequence[Tensor], Dict[str, Tensor]]


@dataclass
class CoordinateCheck:
    name: str
    index: Tuple[int, ...]
    analytic: float
    numeric: float

    @property
    def error(self) -> float:
        return abs(self.analytic - self.numeric) / max(1.0, abs(self.analytic))


@dataclass
class GradcheckReport:
    tolerance: float
    required_fraction: float
    checks: List[CoordinateCheck] = field(default_factory=list)

    @property
    def checked(self) -> int:
        return len(self.checks)

    @property
    def passed(self) -> int:
        return sum(1 for c in self.checks if c.error < self.tolerance)

    @property
    def pass_fraction(self) -> float:
        return self.passed / self.checked if self.checks else 1.0

    @property
    def worst(self) -> Optional[CoordinateCheck]:
        return max(self.checks, key=lambda c: c.error, default=None)

    @property
    def ok(self) -> bool:
        return self.pass_fraction >= self.required_fraction

    def failures(self) -> List[CoordinateCheck]:
        return [c for c in self.checks if c.error >= self.tolerance]

    def summary(self) -> str:
        worst = self.worst
        worst_text = f"{worst.name}{list(worst.index)} err={worst.error:.3e}" if worst else "n/a"
        return (
            f"checked={self.checked} passed={self.passed} "
            f"fraction={self.pass_fraction:.4f} worst={worst_text}"
        )


def _named(params: Params) -> List[Tuple[str, Tensor]]:
    if isinstance(params, dict):
        return list(params.items())
    return [(p.name or f"param{i}", p) for i, p in enumerate(params)]


def gradcheck(
    fn: Callable[[], Tensor],
    params: Params,
    h: float = 1e-3,
    tolerance: float = 1e-3,
    max_coords: Optional[int] = 2000,
    required_fraction: float = 0.999,
    rng: Optional[np.random.Generator] = None,
) -> GradcheckReport:
    """
    Compare backward() against 64-bit central differences.

    Parameters are promoted to float64 for the duration of the check and
    restored afterwards. ``fn`` must rebuild the graph on each call.

    Args:
        fn: Zero-argument closure returning a scalar loss
        params: Tensors (or name → tensor mapping) whose gradients are audited
        h: Finite-difference step
        tolerance: Bound on |analytic − numeric| / max(1, |analytic|)
        max_coords: Number of coordinates sampled across all params (None checks all)
        required_fraction: Fraction of coordinates that must pass
        rng: Generator used to sample coordinates

    Returns:
        GradcheckReport with one entry per audited coordinate
    """
    named = _named(params)
    originals = {id(t): t.data for _, t in named}
    rng = rng or np.random.default_rng(0)
    try:
        for _, tensor in named:
            tensor.data = tensor.data.astype(np.float64)
            tensor.grad = None

        loss = fn()
        backward(loss)
        analytic = {id(t): (np.zeros_like(t.data) if t.grad is None else t.grad.copy()) for _, t in named}

        coordinates = [(name, t, idx) for name, t in named for idx in np.ndindex(*t.shape)]
        if max_coords is not None and len(coordinates) > max_coords:
            picks = rng.choice(len(coordinates), size=max_coords, replace=False)
            coordinates = [coordinates[i] for i in sorted(picks)]

        report = GradcheckReport(tolerance=tolerance, required_fraction=required_fraction)
        with no_grad():
            for name, tensor, idx in coordinates:
                saved = tensor.data[idx]
                tensor.data[idx] = saved + h
                plus = float(fn().data)
                tensor.data[idx] = saved - h
                minus = float(fn().data)
                tensor.data[idx] = saved
                numeric = (plus - minus) / (2.0 * h)
                report.checks.append(CoordinateCheck(name, tuple(idx), float(analytic[id(tensor)][idx]), numeric))
        logger.info("gradcheck %s", report.summary())
        return report
    finally:
        for _, tensor in named:
            tensor.data = originals[id(tensor)]
            tensor.grad = None
