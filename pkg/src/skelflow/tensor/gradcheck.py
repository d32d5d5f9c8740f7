"""Central finite-difference gradient checking."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from ..errors import CheckFailedError, InvalidArgumentError
from .core import Tensor

# (offset, weight) pairs and the denominator, in units of eps
_STENCILS = {
    2: (((1, 1.0), (-1, -1.0)), 2.0),
    4: (((-2, 1.0), (-1, -8.0), (1, 8.0), (2, -1.0)), 12.0),
}


def relative_error(analytic: float, numeric: float, floor: float = 1e-10) -> float:
    """|a - n| / (|a| + |n|), with the denominator floored at ``floor``.

    A gradient reported as twice the true value scores exactly 1/3.
    """
    return abs(analytic - numeric) / max(abs(analytic) + abs(numeric), floor)


@dataclass
class GradCheckResult:
    max_relative_error: float
    worst: Optional[tuple[str, tuple[int, ...]]] = None
    checked: int = 0
    per_param: dict[str, float] = field(default_factory=dict)

    def __float__(self) -> float:
        return self.max_relative_error


def grad_check(
    loss_fn: Callable[[], Tensor],
    params: Sequence[Tensor],
    eps: float = 1e-5,
    names: Optional[Sequence[str]] = None,
    max_coords: Optional[int] = None,
    seed: int = 0,
    floor: float = 1e-10,
    analytic: Optional[Sequence[np.ndarray]] = None,
    order: int = 2,
) -> GradCheckResult:
    """Compare analytic gradients with central differences.

    ``loss_fn`` is called with no arguments and must rebuild the graph from
    the current parameter values each time (so any randomness inside it has
    to be seeded). When ``max_coords`` is given, that many coordinates per
    parameter are drawn without replacement; otherwise every coordinate is
    checked. ``analytic`` overrides the back-propagated gradients, which is
    how a deliberately wrong gradient can be fed in.

    ``order`` picks the stencil: 2 is the usual two-point central difference,
    4 the five-point one whose truncation error falls as ``eps**4``, which
    allows a wider step (less round-off) on strongly curved losses.
    """
    if order not in _STENCILS:
        raise InvalidArgumentError(f"order must be 2 or 4, got {order}")
    stencil, denom = _STENCILS[order]
    names = list(names) if names is not None else [p.name or f"param{i}" for i, p in enumerate(params)]
    for p in params:
        p.zero_grad()
    loss = loss_fn()
    if not np.isfinite(loss.values).all():
        raise CheckFailedError("loss is not finite at the base point")
    if analytic is None:
        loss.backward()
        analytic = [p.grad.copy() for p in params]
    for p in params:
        p.zero_grad()

    rng = np.random.default_rng(seed)
    result = GradCheckResult(0.0)
    for p, name, ga in zip(params, names, analytic):
        if not p.values.flags.c_contiguous:
            p.values = np.ascontiguousarray(p.values)
        flat = p.values.reshape(-1)
        if max_coords is None or max_coords >= flat.size:
            coords = np.arange(flat.size)
        else:
            coords = np.sort(rng.choice(flat.size, size=max_coords, replace=False))
        worst_here = 0.0
        for idx in coords:
            orig = flat[idx]
            total = 0.0
            for step, weight in stencil:
                flat[idx] = orig + step * eps
                value = loss_fn().item()
                if not np.isfinite(value):
                    flat[idx] = orig
                    raise CheckFailedError(f"loss is not finite when perturbing {name}[{idx}]")
                total += weight * value
            flat[idx] = orig
            numeric = total / (denom * eps)
            err = relative_error(float(ga.reshape(-1)[idx]), numeric, floor)
            result.checked += 1
            if err > worst_here:
                worst_here = err
            if err > result.max_relative_error:
                result.max_relative_error = err
                result.worst = (name, tuple(int(i) for i in np.unravel_index(idx, p.shape)))
        result.per_param[name] = worst_here
    return result
