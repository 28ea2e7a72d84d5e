"""Closed-form and root-finding elasticity estimators."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import brentq

from .budget_model import TaxSchedule

__all__ = [
    "ElasticityEstimate",
    "EstimationError",
    "trapezoid_eps_logs",
    "trapezoid_eps_levels",
    "uniform_eps",
    "detect_gap_upper",
    "detect_gap_concave",
    "notch_eps",
    "concave_gap_eps",
]

ATOM_TOL = 1e-9
EPS_BRACKET = (1e-6, 100.0)


class EstimationError(ValueError):
    """An estimator could not produce a value from its inputs."""


@dataclass
class ElasticityEstimate:
    """A point estimate of the elasticity with its provenance.

    ``std_err`` is ``None`` when no sampling variance applies (for
    instance when the inputs are population quantities).
    """

    eps_hat: float
    method: str
    std_err: float | None = None
    inputs: dict = field(default_factory=dict)
    diagnostics: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        out = {"schema": 1, "method": self.method, "eps_hat": self.eps_hat}
        if self.std_err is not None:
            out["std_err"] = self.std_err
        out["inputs"] = _plain(self.inputs)
        out["diagnostics"] = _plain(self.diagnostics)
        return out

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)


def _plain(d):
    out = {}
    for key, val in d.items():
        if isinstance(val, np.generic):
            val = val.item()
        elif isinstance(val, np.ndarray):
            val = val.tolist()
        elif isinstance(val, tuple):
            val = list(val)
        out[key] = val
    return out


def _delta_se(grad, ses):
    if ses is None or any(s is None for s in ses):
        return None
    return float(math.sqrt(sum((g * s) ** 2 for g, s in zip(grad, ses))))


def trapezoid_eps_logs(B, f_minus, f_plus, s0, s1, *, se=None) -> ElasticityEstimate:
    """Elasticity when the ability density is affine over the bunching interval.

    ``eps = 2 B / ((f_minus + f_plus)(s0 - s1))``.

    Parameters
    ----------
    B : float
        Bunching mass at the kink.
    f_minus, f_plus : float
        Side limits of the log-income density at the kink.
    s0, s1 : float
        Log net-of-tax slopes below and above the kink (``s0 > s1``).
    se : tuple of float, optional
        Standard errors of ``(B, f_minus, f_plus)``; when given, a
        delta-method standard error treating them as independent is
        attached.
    """
    if B < 0 or f_minus < 0 or f_plus < 0:
        raise EstimationError("B and the density limits must be nonnegative")
    if not s0 > s1:
        raise EstimationError("need s0 > s1 at a convex kink")
    fsum = f_minus + f_plus
    if fsum <= 0:
        raise EstimationError("f_minus + f_plus must be positive")
    ds = s0 - s1
    eps = 2.0 * B / (fsum * ds)
    grad = (2.0 / (fsum * ds), -eps / fsum, -eps / fsum)
    return ElasticityEstimate(
        eps,
        "trapezoid",
        _delta_se(grad, se),
        {"B": B, "f_minus": f_minus, "f_plus": f_plus, "s0": s0, "s1": s1},
    )


def uniform_eps(B, f_at_k, s0, s1, *, se=None) -> ElasticityEstimate:
    """Elasticity when the ability density is flat over the bunching interval.

    ``eps = B / (f (s0 - s1))``.  ``se`` holds the standard errors of
    ``(B, f_at_k)``.
    """
    if not f_at_k > 0:
        raise EstimationError("density at the kink must be positive")
    if not s0 > s1:
        raise EstimationError("need s0 > s1 at a convex kink")
    if B < 0:
        raise EstimationError("B must be nonnegative")
    eps = B / (f_at_k * (s0 - s1))
    grad = (1.0 / (f_at_k * (s0 - s1)), -eps / f_at_k)
    return ElasticityEstimate(eps, "uniform", _delta_se(grad, se), {"B": B, "f": f_at_k, "s0": s0, "s1": s1})


def _expand_root(fun, lo, hi, grow=2.0, limit=1e6):
    """Bracket a sign change of an increasing function starting at [lo, hi]."""
    f_lo = fun(lo)
    if f_lo >= 0:
        return lo, lo
    while fun(hi) < 0:
        lo, hi = hi, hi * grow
        if hi > limit:
            return lo, None
    return lo, hi


def trapezoid_eps_levels(B, f_minus, f_plus, t0, t1, K) -> ElasticityEstimate:
    """Trapezoid elasticity from level-scale densities (income in currency units).

    Solves ``B = 0.5 [f_plus r**-eps + f_minus] K (r**eps - 1)`` with
    ``r = (1 - t0)/(1 - t1)``.  The right side increases in ``eps``, so the
    root is found by bracket expansion from [1e-6, 100] and Brent's method.
    """
    if B < 0 or f_minus < 0 or f_plus < 0 or not K > 0:
        raise EstimationError("need B, densities >= 0 and K > 0")
    if t0 >= t1:
        raise EstimationError("need t0 < t1 (a convex kink)")
    if B == 0:
        return ElasticityEstimate(0.0, "trapezoid_levels", None, {"B": B, "f_minus": f_minus, "f_plus": f_plus})
    log_r = math.log1p(-t0) - math.log1p(-t1)

    def excess(eps):
        grow = math.expm1(eps * log_r)
        return 0.5 * K * (f_plus * (1 - math.exp(-eps * log_r)) + f_minus * grow) - B

    lo, hi = _expand_root(excess, *EPS_BRACKET)
    if hi is None:
        raise EstimationError(f"no root for eps below {lo:g}; bunching mass too large for these densities")
    eps = lo if lo == hi else brentq(excess, lo, hi, xtol=1e-14, rtol=1e-13)
    return ElasticityEstimate(
        eps,
        "trapezoid_levels",
        None,
        {"B": B, "f_minus": f_minus, "f_plus": f_plus, "t0": t0, "t1": t1, "K": K},
        {"bracket": [lo, hi]},
    )


def detect_gap_upper(y, k, tol=ATOM_TOL) -> float:
    """Smallest observed log income strictly above the notch (plus ``tol``)."""
    y = np.asarray(y, dtype=float)
    above = y[y > k + tol]
    if above.size == 0:
        raise EstimationError("no observations above the cutoff")
    return float(above.min())


def detect_gap_concave(y, k, tol=ATOM_TOL) -> tuple[float, float]:
    """Observed limits of the empty income interval around a concave kink.

    Returns the largest log income at or below ``k`` and the smallest one
    above it.
    """
    y = np.asarray(y, dtype=float)
    lower, upper = y[y <= k + tol], y[y > k + tol]
    if lower.size == 0 or upper.size == 0:
        raise EstimationError("need observations on both sides of the kink")
    return float(lower.max()), float(upper.min())


def notch_eps(Y_I, schedule: TaxSchedule, notch_index: int = 0, *, log: bool = False) -> ElasticityEstimate:
    """Elasticity from the upper edge of the empty interval right of a notch.

    Let ``K`` be the notch cutoff, ``C`` the consumption at the notch point,
    and ``(K_q, t, I)`` the start, rate and intercept of the segment that
    contains ``Y_I``.  The marginal buncher's indifference gives

        Y_I + eps K (K / Y_I)**(1/eps) = (1 + eps)(C - I + K_q (1 - t)) / (1 - t)

    The left side grows more slowly in ``eps`` than the right side, so the
    root is unique.  As ``eps -> 0`` the implied ``Y_I`` tends to
    ``K_q + (C - I)/(1 - t)``, which is the smallest admissible input.

    Parameters
    ----------
    Y_I : float
        Upper limit of the gap, in levels (logs if ``log=True``).
    schedule : TaxSchedule
    notch_index : int
        Zero-based index of the notch cutoff.
    """
    y_i = math.exp(Y_I) if log else float(Y_I)
    c = int(notch_index)
    if not 0 <= c < schedule.n_cutoffs or not schedule.is_notch(c):
        raise EstimationError(f"cutoff {notch_index} is not a notch")
    K = schedule.cutoffs[c]
    if not y_i > K:
        raise EstimationError("Y_I must lie above the notch cutoff")
    q = int(schedule.segment_of(y_i))
    knots = (0.0,) + schedule.cutoffs
    t, I, Kq = schedule.rates[q], schedule.intercepts[q], knots[q]
    C = float(schedule.notch_consumption[c])
    rhs_unit = (C - I + Kq * (1.0 - t)) / (1.0 - t)
    log_ratio = math.log(K / y_i)

    def gap(eps):
        # decreasing in eps; written as rhs - lhs so that it increases
        return (1.0 + eps) * rhs_unit - (y_i + eps * K * math.exp(log_ratio / eps))

    # As eps -> 0 the indifference income tends to rhs_unit, not to K.
    if y_i <= rhs_unit * (1 + 1e-12):
        if y_i < rhs_unit * (1 - 1e-9):
            raise EstimationError(f"Y_I below its zero-elasticity limit {rhs_unit:g}; no eps >= 0 fits")
        lo = hi = 0.0
        eps = 0.0
    else:
        lo, hi = _expand_root(gap, *EPS_BRACKET)
        if hi is None:
            raise EstimationError("no elasticity rationalizes this Y_I")
        eps = lo if lo == hi else brentq(gap, lo, hi, xtol=1e-15, rtol=1e-15, maxiter=500)
    return ElasticityEstimate(
        eps,
        "notch",
        None,
        {"Y_I": y_i, "K": K, "C": C, "I": I, "t": t, "segment_start": Kq},
        {"bracket": [lo, hi]},
    )


def concave_gap_eps(y_lower, y_upper, s0, s1) -> ElasticityEstimate:
    """Elasticity from the empty interval at a concave kink: ``(y_upper - y_lower)/(s1 - s0)``."""
    if not s1 > s0:
        raise EstimationError("a concave kink needs s1 > s0")
    if y_upper < y_lower:
        raise EstimationError("y_upper must not be below y_lower")
    return ElasticityEstimate(
        (y_upper - y_lower) / (s1 - s0),
        "concave_gap",
        None,
        {"y_lower": y_lower, "y_upper": y_upper, "s0": s0, "s1": s1},
    )
