"""Numeric tools for the forgetting-bound recursion eps' = rho / (1 - eps)."""
import math
import typing as T
from dataclasses import dataclass, field

import pandas as pd

from .errors import DomainError


@dataclass
class EpsilonTrace:
    """Iterates of the recursion.

    Every value in ``trace`` lies in [0, 1); when an iterate reaches 1
    the run stops, ``diverged`` is set and ``diverged_at`` holds the
    iteration that produced it.
    """
    rho: float
    eps0: float
    trace: T.List[float] = field(default_factory=list)
    diverged: bool = False
    diverged_at: T.Optional[int] = None

    @property
    def last(self) -> float:
        return self.trace[-1]


def iterate_epsilon(rho: float, eps0: float, steps: int) -> EpsilonTrace:
    """Iterate ``eps[i+1] = rho / (1 - eps[i])`` starting from ``eps0``.

    Args:
        rho: Non-negative coupling constant.
        eps0: Starting value in [0, 1).
        steps: Number of iterations, the trace holds up to steps + 1 values.
    """
    if steps < 1:
        raise DomainError(f'steps must be >= 1, got {steps}')
    if rho < 0:
        raise DomainError(f'rho must be >= 0, got {rho}')
    if not 0.0 <= eps0 < 1.0:
        raise DomainError(f'eps0 must be in [0, 1), got {eps0}')
    result = EpsilonTrace(rho, eps0, [eps0])
    eps = eps0
    for i in range(1, steps + 1):
        eps = rho / (1.0 - eps)
        if eps >= 1.0 or eps < 0.0:
            result.diverged = True
            result.diverged_at = i
            break
        result.trace.append(eps)
    return result


def fixed_points(rho: float) -> T.Optional[T.Tuple[float, float]]:
    """Roots of eps^2 - eps + rho = 0, ``(low, high)``, or None when
    rho > 1/4."""
    disc = 1.0 - 4.0 * rho
    if disc < 0:
        return None
    root = math.sqrt(disc)
    return (1.0 - root) / 2.0, (1.0 + root) / 2.0


def epsilon_grid(
        rhos: T.Sequence[float],
        eps0s: T.Sequence[float],
        steps: int,
        ) -> pd.DataFrame:
    """Long table of traces with columns
    rho, eps0, step, epsilon, diverged."""
    rows = []
    for rho in rhos:
        for eps0 in eps0s:
            tr = iterate_epsilon(float(rho), float(eps0), steps)
            for i, eps in enumerate(tr.trace):
                rows.append({
                    'rho': float(rho), 'eps0': float(eps0), 'step': i,
                    'epsilon': eps, 'diverged': tr.diverged,
                })
    return pd.DataFrame(
        rows, columns=['rho', 'eps0', 'step', 'epsilon', 'diverged'])
