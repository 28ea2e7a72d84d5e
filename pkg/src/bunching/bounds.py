"""Partial identification of the elasticity under a slope bound on the ability density.

If the log-ability density is Lipschitz with constant ``M``, the bunching
mass ``B`` and the side limits ``f_minus``/``f_plus`` of the log-income
density only pin the elasticity down to a set.  The largest area a density
can enclose over an interval of length ``L = eps (s0 - s1)`` is attained by
a "hat" with slopes ``+M`` then ``-M``; the smallest by an inverted hat
truncated at zero.  Inverting those extremes gives the bounds below.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "BoundsResult",
    "BoundsCurve",
    "IdentifiedSet",
    "partial_id_set",
    "m0",
    "half_line_threshold",
    "bounds_curve",
    "intersect_bounds",
]

EMPTY, INTERVAL, HALF_LINE = "empty", "interval", "half_line"
_REL = 1e-12


@dataclass(frozen=True)
class IdentifiedSet:
    """A set of elasticities: empty, ``[lower, upper]`` or ``[lower, inf)``."""

    case: str
    eps_lower: float | None = None
    eps_upper: float | None = None

    def contains(self, eps: float, tol: float = 0.0) -> bool:
        if self.case == EMPTY:
            return False
        if eps < self.eps_lower - tol:
            return False
        return self.case == HALF_LINE or eps <= self.eps_upper + tol

    @property
    def width(self) -> float:
        if self.case == EMPTY:
            return 0.0
        return math.inf if self.case == HALF_LINE else self.eps_upper - self.eps_lower


@dataclass(frozen=True)
class BoundsResult(IdentifiedSet):
    """Identified set at one slope bound, with the thresholds that classify it.

    ``B_low`` and ``B_high`` are the bunching masses separating the empty,
    interval and half-line cases at this ``M``.
    """

    M: float = math.nan
    m0: float | None = None
    B_low: float = math.nan
    B_high: float = math.nan
    inputs: dict = field(default_factory=dict, compare=False)

    def as_set(self) -> IdentifiedSet:
        return IdentifiedSet(self.case, self.eps_lower, self.eps_upper)


def _validate(B, f_minus, f_plus, s0, s1):
    if not 0 <= B <= 1:
        raise ValueError("B must lie in [0, 1]")
    if f_minus < 0 or f_plus < 0:
        raise ValueError("density limits must be nonnegative")
    if not s0 > s1:
        raise ValueError("need s0 > s1")


def m0(B, f_minus, f_plus) -> float:
    """Smallest slope bound for which the identified set is nonempty."""
    d = abs(f_plus - f_minus)
    if d == 0:
        return 0.0
    if not B > 0:
        raise ValueError("B = 0 with unequal side limits: no finite m0")
    return d * (f_plus + f_minus) / (2.0 * B)


def half_line_threshold(B, f_minus, f_plus) -> float:
    """Slope bound above which the upper bound becomes infinite."""
    if not B > 0:
        return math.inf
    return (f_plus**2 + f_minus**2) / (2.0 * B)


def partial_id_set(B, f_minus, f_plus, s0, s1, M) -> BoundsResult:
    """Identified set for the elasticity given a slope bound ``M``.

    Parameters
    ----------
    B : float
        Bunching mass.
    f_minus, f_plus : float
        Side limits of the log-income density at the kink.
    s0, s1 : float
        Log net-of-tax slopes, ``s0 > s1``.
    M : float
        Lipschitz constant of the ability density.  ``M = 0`` is accepted
        only when ``f_minus == f_plus`` and returns the limiting point.

    Returns
    -------
    BoundsResult
        ``case`` is ``"empty"`` when ``B`` is below ``B_low``, ``"interval"``
        when ``B_low <= B < B_high``, and ``"half_line"`` otherwise.

    Examples
    --------
    >>> r = partial_id_set(0.100148, 0.5, 0.5, math.log(0.8), math.log(0.7), 0.5)
    >>> r.case, round(r.eps_lower, 4), round(r.eps_upper, 4)
    ('interval', 1.4316, 1.5837)
    """
    _validate(B, f_minus, f_plus, s0, s1)
    if M < 0 or (M == 0 and f_minus != f_plus):
        raise ValueError("M must be positive")
    ds = s0 - s1
    d2 = (f_plus - f_minus) ** 2
    fsum = f_plus + f_minus
    fsq = 0.5 * (f_plus**2 + f_minus**2)
    inputs = {"B": B, "f_minus": f_minus, "f_plus": f_plus, "s0": s0, "s1": s1}
    try:
        m_0 = m0(B, f_minus, f_plus)
    except ValueError:
        m_0 = None

    if M == 0:
        eps = B / (f_plus * ds) if f_plus > 0 else math.inf
        return BoundsResult(INTERVAL, eps, eps, 0.0, m_0, 0.0, math.inf, inputs)

    b_low = math.sqrt(d2) * fsum / (2.0 * M)
    b_high = 2.0 * fsq / (2.0 * M)
    if B < b_low * (1 - _REL):
        return BoundsResult(EMPTY, None, None, M, m_0, b_low, b_high, inputs)

    mb = M * B
    # rationalized forms of 2 sqrt(fsq + MB) - fsum and fsum - 2 sqrt(fsq - MB)
    lower = (d2 + 4.0 * mb) / (M * ds * (2.0 * math.sqrt(fsq + mb) + fsum))
    if B >= b_high:
        return BoundsResult(HALF_LINE, lower, None, M, m_0, b_low, b_high, inputs)
    num_up = max(4.0 * mb - d2, 0.0)
    upper = num_up / (M * ds * (fsum + 2.0 * math.sqrt(max(fsq - mb, 0.0))))
    upper = max(upper, lower) if upper >= lower * (1 - 1e-10) else upper
    return BoundsResult(INTERVAL, lower, upper, M, m_0, b_low, b_high, inputs)


@dataclass
class BoundsCurve:
    """Identified sets along a grid of slope bounds.

    ``m0`` and ``M_half_line`` mark where the set first becomes nonempty
    and where its upper bound becomes infinite.
    """

    rows: list
    m0: float | None
    M_half_line: float
    m1: float | None = None

    def table(self):
        """Rows of ``(M, case, eps_lower, eps_upper, marker)``.

        ``marker`` is ``"m0"`` or ``"m1"`` on rows at those slope bounds and
        empty otherwise; missing bounds are ``nan`` and an open upper end is ``inf``.
        """
        out = []
        for r in self.rows:
            marks = []
            if self.m0 is not None and math.isclose(r.M, self.m0, rel_tol=1e-12):
                marks.append("m0")
            if self.m1 is not None and math.isclose(r.M, self.m1, rel_tol=1e-12):
                marks.append("m1")
            lo = math.nan if r.eps_lower is None else r.eps_lower
            if r.case == HALF_LINE:
                up = math.inf
            else:
                up = math.nan if r.eps_upper is None else r.eps_upper
            out.append((r.M, r.case, lo, up, "+".join(marks)))
        return out

    def to_csv(self, path) -> None:
        def fmt(v):
            if isinstance(v, str):
                return v
            if math.isnan(v):
                return ""
            return "inf" if math.isinf(v) else f"{v:.17g}"

        with open(path, "w", encoding="utf-8", newline="") as fh:
            fh.write("M,case,eps_lower,eps_upper,marker\n")
            for row in self.table():
                fh.write(",".join(fmt(v) for v in row) + "\n")


def bounds_curve(B, f_minus, f_plus, s0, s1, M_grid=None, *, m1=None, n_grid=101) -> BoundsCurve:
    """Identified sets over a grid of slope bounds.

    Without ``M_grid``, ``n_grid`` log-spaced values from ``max(m0, 1e-6)``
    to ``2 m1`` are used, so ``m1`` (the largest observed slope of the
    income density) is then required.
    """
    _validate(B, f_minus, f_plus, s0, s1)
    try:
        m_0 = m0(B, f_minus, f_plus)
    except ValueError:
        m_0 = None
    if M_grid is None:
        if m1 is None:
            raise ValueError("give M_grid or m1")
        lo = max(m_0 or 0.0, 1e-6)
        hi = 2.0 * m1
        if hi <= lo:
            hi = 2.0 * lo
        M_grid = np.geomspace(lo, hi, n_grid)
        # hit the two reference points exactly
        M_grid = np.unique(np.concatenate([M_grid, [m1], [m_0] if m_0 else []]))
    M_grid = np.asarray(M_grid, dtype=float)
    if M_grid.size == 0:
        raise ValueError("empty M grid")
    rows = [partial_id_set(B, f_minus, f_plus, s0, s1, float(M)) for M in M_grid]
    return BoundsCurve(rows, m_0, half_line_threshold(B, f_minus, f_plus), m1)


def intersect_bounds(results) -> IdentifiedSet:
    """Intersection of identified sets from several kinks."""
    results = list(results)
    if not results:
        raise ValueError("need at least one set")
    if any(r.case == EMPTY for r in results):
        return IdentifiedSet(EMPTY)
    lower = max(r.eps_lower for r in results)
    finite = [r.eps_upper for r in results if r.case == INTERVAL]
    if not finite:
        return IdentifiedSet(HALF_LINE, lower, None)
    upper = min(finite)
    if upper < lower:
        return IdentifiedSet(EMPTY)
    return IdentifiedSet(INTERVAL, lower, upper)
