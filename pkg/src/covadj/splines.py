"""M-spline and I-spline bases for a flexible baseline hazard.

The hazard is ``h0(t) = sum_l psi_l M_l(t)`` with ``psi`` on the simplex, and the
cumulative hazard is ``H0(t) = sum_l psi_l I_l(t)``. Each ``M_l`` is a B-spline
rescaled to integrate to one, and ``I_l`` is its running integral, so ``I_l``
climbs from 0 at the lower boundary to 1 at the upper boundary.

Both bases come from the Cox-de Boor recurrence. The integral uses the
identity ``I_l(t) = sum_{j > l} B_{j,k+1}(t)`` on the knot vector with one
extra boundary repeat.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

log = logging.getLogger(__name__)

DEFAULT_DEGREE = 3
DEFAULT_INTERIOR = 5


def _bspline_matrix(t: np.ndarray, knots: np.ndarray, order: int) -> np.ndarray:
    """All B-splines of ``order`` on ``knots`` evaluated at ``t``, shape (n, m).

    ``m = len(knots) - order``. The last non-degenerate interval is closed on
    the right so the upper boundary is covered.
    """
    t = np.asarray(t, dtype=float)
    n_int = len(knots) - 1
    left, right = knots[:-1], knots[1:]
    B = ((t[:, None] >= left) & (t[:, None] < right)).astype(float)
    nondeg = np.flatnonzero(right > left)
    last = nondeg[-1]
    B[t == knots[-1], last] = 1.0
    for r in range(2, order + 1):
        m = n_int - r + 1
        out = np.zeros((t.size, m))
        for j in range(m):
            d1 = knots[j + r - 1] - knots[j]
            d2 = knots[j + r] - knots[j + 1]
            if d1 > 0:
                out[:, j] += (t - knots[j]) / d1 * B[:, j]
            if d2 > 0:
                out[:, j] += (knots[j + r] - t) / d2 * B[:, j + 1]
        B = out
    return B


@dataclass(frozen=True)
class SplineBasis:
    """Knot layout for an M-spline basis of a given degree.

    ``L = len(interior_knots) + degree + 1`` basis terms.
    """

    degree: int
    interior_knots: tuple[float, ...]
    boundary: tuple[float, float]

    def __post_init__(self):
        if int(self.degree) != self.degree or self.degree < 1:
            raise ValueError(f"spline degree must be an integer >= 1, got {self.degree}")
        lo, hi = self.boundary
        if not lo < hi:
            raise ValueError(f"boundary knots must satisfy lower < upper, got {self.boundary}")
        k = np.asarray(self.interior_knots, dtype=float)
        if k.size and (np.any(np.diff(k) <= 0) or k[0] <= lo or k[-1] >= hi):
            raise ValueError("interior knots must be strictly increasing and inside the boundary")
        object.__setattr__(self, "interior_knots", tuple(float(x) for x in k))
        object.__setattr__(self, "boundary", (float(lo), float(hi)))

    @property
    def order(self) -> int:
        return self.degree + 1

    @property
    def L(self) -> int:
        return len(self.interior_knots) + self.order

    def knots(self, extra: int = 0) -> np.ndarray:
        lo, hi = self.boundary
        reps = self.order + extra
        return np.concatenate([[lo] * reps, self.interior_knots, [hi] * reps])

    def _check(self, t, clamp: bool) -> np.ndarray:
        t = np.atleast_1d(np.asarray(t, dtype=float))
        lo, hi = self.boundary
        eps = 1e-12 * max(1.0, abs(hi))
        outside = (t < lo - eps) | (t > hi + eps)
        if np.any(outside):
            if not clamp:
                bad = t[outside][0]
                raise ValueError(f"time {bad!r} outside spline boundary [{lo}, {hi}]")
            log.warning("clamped %d time(s) to the spline boundary [%g, %g]",
                        int(outside.sum()), lo, hi)
        return np.clip(t, lo, hi)

    def out_of_range(self, t) -> np.ndarray:
        """Boolean mask of times that would be clamped."""
        t = np.asarray(t, dtype=float)
        lo, hi = self.boundary
        eps = 1e-12 * max(1.0, abs(hi))
        return (t < lo - eps) | (t > hi + eps)


def m_spline_eval(basis: SplineBasis, t, clamp: bool = False) -> np.ndarray:
    """M-spline basis values, shape ``(len(t), L)``.

    With ``clamp=True`` times outside the boundary are moved onto it (with a
    logged warning) instead of raising.
    """
    t = basis._check(t, clamp)
    knots = basis.knots()
    k = basis.order
    B = _bspline_matrix(t, knots, k)
    width = knots[k:k + basis.L] - knots[:basis.L]
    return B * (k / width)


def i_spline_eval(basis: SplineBasis, t, clamp: bool = False) -> np.ndarray:
    """I-spline basis values (integrals of the M-splines), shape ``(len(t), L)``."""
    t = basis._check(t, clamp)
    Bp = _bspline_matrix(t, basis.knots(extra=1), basis.order + 1)
    # I_l = sum_{j=l+1}^{L} B'_j  (reverse cumulative sum, shifted by one)
    tail = np.cumsum(Bp[:, ::-1], axis=1)[:, ::-1]
    return np.clip(tail[:, 1:], 0.0, 1.0)


def default_basis(event_times, upper: float, degree: int = DEFAULT_DEGREE,
                  n_interior: int = DEFAULT_INTERIOR, lower: float = 0.0) -> SplineBasis:
    """Basis with interior knots at quantiles of the observed event times.

    Quantile levels are ``1/(K+1), ..., K/(K+1)``. Duplicate or boundary-hugging
    knots (few events, tied times) are dropped.
    """
    ev = np.asarray(event_times, dtype=float)
    ev = ev[np.isfinite(ev)]
    knots = np.empty(0)
    if ev.size and n_interior > 0:
        levels = np.arange(1, n_interior + 1) / (n_interior + 1)
        knots = np.unique(np.quantile(ev, levels))
        span = upper - lower
        knots = knots[(knots > lower + 1e-8 * span) & (knots < upper - 1e-8 * span)]
    return SplineBasis(degree=degree, interior_knots=tuple(knots), boundary=(lower, upper))
