"""Piecewise-linear budget sets with kinks and notches.

Agents maximize the quasi-linear iso-elastic utility

    U(C, Y; N) = C - N / (1 + 1/eps) * (Y / N) ** (1 + 1/eps)

over a budget frontier made of linear segments.  Segment ``q`` (``q = 0..J``)
covers incomes ``K_q < Y <= K_{q+1}`` (``K_0 = 0``, ``K_{J+1} = inf``) and has
consumption ``C = I_q + (1 - t_q)(Y - K_q)``.  A positive notch jump at
cutoff ``j`` lowers the frontier by ``Delta_j`` just to the right of ``K_j``.

Cutoffs are indexed from zero throughout: cutoff ``c`` separates segments
``c`` and ``c + 1``.  Abilities and incomes are accepted in levels or, with
``log=True``, in logs; internal computations use logs.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.optimize import brentq

__all__ = [
    "ScheduleError",
    "TaxSchedule",
    "SolutionMap",
    "build_schedule",
    "single_kink",
    "utility",
    "solve_agent",
    "solution_map",
    "indifference_ability",
    "bunching_mass",
    "concave_kink_thresholds",
]

_ROOT_XTOL = 1e-14
_ROOT_RTOL = 4 * np.finfo(float).eps


class ScheduleError(ValueError):
    """Raised for malformed schedules or infeasible threshold problems."""


@dataclass(frozen=True)
class TaxSchedule:
    """Validated piecewise-linear budget frontier.

    Use :func:`build_schedule` (or :func:`single_kink`) rather than calling
    the constructor directly; it performs the validation.

    Attributes
    ----------
    cutoffs : tuple of float
        Income cutoffs ``K_1 < ... < K_J`` in levels.
    rates : tuple of float
        Marginal rates ``t_0..t_J``; ``rates[q]`` applies on segment ``q``.
    notch_jumps : tuple of float
        Lump-sum drop of the frontier at each cutoff (0 for a pure kink).
    base_intercept : float
        ``I_0``, consumption at zero income.
    mode : {"convex", "concave"}
        ``"concave"`` is the single-kink case with a falling marginal rate.
    """

    cutoffs: tuple
    rates: tuple
    notch_jumps: tuple
    base_intercept: float = 0.0
    mode: str = "convex"

    @property
    def n_cutoffs(self) -> int:
        return len(self.cutoffs)

    @property
    def intercepts(self) -> np.ndarray:
        """``I_0..I_J``: consumption at the left end of each segment."""
        out = [float(self.base_intercept)]
        prev_k = 0.0
        for c, (kc, dc) in enumerate(zip(self.cutoffs, self.notch_jumps)):
            out.append(out[-1] + (1.0 - self.rates[c]) * (kc - prev_k) - dc)
            prev_k = kc
        return np.asarray(out)

    @property
    def notch_consumption(self) -> np.ndarray:
        """Frontier consumption at each cutoff, approached from the left."""
        return self.intercepts[1:] + np.asarray(self.notch_jumps, dtype=float)

    @property
    def log_cutoffs(self) -> np.ndarray:
        return np.log(np.asarray(self.cutoffs, dtype=float))

    @property
    def log_slopes(self) -> np.ndarray:
        """``s_q = log(1 - t_q)`` for every segment."""
        return np.log1p(-np.asarray(self.rates, dtype=float))

    def is_notch(self, c: int) -> bool:
        return self.notch_jumps[c] > 0

    def segment_of(self, income) -> np.ndarray:
        """Index of the segment containing each income (left-continuous)."""
        income = np.asarray(income, dtype=float)
        return np.searchsorted(np.asarray(self.cutoffs, dtype=float), income, side="left")

    def consumption(self, income) -> np.ndarray:
        """Frontier consumption ``C(Y)``, left-continuous at cutoffs."""
        income = np.asarray(income, dtype=float)
        q = self.segment_of(income)
        knots = np.concatenate([[0.0], np.asarray(self.cutoffs, dtype=float)])
        rates = np.asarray(self.rates, dtype=float)
        return self.intercepts[q] + (1.0 - rates[q]) * (income - knots[q])

    # serialization -----------------------------------------------------
    def to_dict(self) -> dict:
        segs = [
            {"cutoff": float(kc), "rate_below": float(self.rates[c])}
            for c, kc in enumerate(self.cutoffs)
        ]
        return {
            "schema": 1,
            "base_intercept": float(self.base_intercept),
            "segments": segs,
            "rate_top": float(self.rates[-1]),
            "notch_jumps": [float(d) for d in self.notch_jumps],
            "mode": self.mode,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    @classmethod
    def from_dict(cls, doc: dict) -> "TaxSchedule":
        segs = doc.get("segments", [])
        cutoffs = [s["cutoff"] for s in segs]
        rates = [s["rate_below"] for s in segs] + [doc["rate_top"]]
        return build_schedule(
            cutoffs,
            rates,
            doc.get("notch_jumps") or None,
            doc.get("base_intercept", 0.0),
            mode=doc.get("mode", "convex"),
        )

    @classmethod
    def from_json(cls, text: str) -> "TaxSchedule":
        return cls.from_dict(json.loads(text))


def build_schedule(
    cutoffs: Sequence[float],
    rates: Sequence[float],
    notch_jumps: Sequence[float] | None = None,
    base_intercept: float = 0.0,
    *,
    mode: str = "convex",
) -> TaxSchedule:
    """Validate inputs and return a :class:`TaxSchedule`.

    Parameters
    ----------
    cutoffs : sequence of float
        Strictly increasing positive cutoffs (may be empty).
    rates : sequence of float
        ``len(cutoffs) + 1`` marginal rates, each below 1.  Negative rates
        (subsidies, as in a phase-in region) are allowed.
    notch_jumps : sequence of float, optional
        Nonnegative drops of the frontier at each cutoff; zeros by default.
    base_intercept : float
        Consumption at zero income.
    mode : {"convex", "concave"}
        Convex schedules need nondecreasing rates.  Concave mode takes a
        single kink where the rate falls.

    Raises
    ------
    ScheduleError
        On any violated constraint.
    """
    cutoffs = tuple(float(c) for c in cutoffs)
    rates = tuple(float(t) for t in rates)
    if notch_jumps is None:
        notch_jumps = (0.0,) * len(cutoffs)
    notch_jumps = tuple(float(d) for d in notch_jumps)

    if len(rates) != len(cutoffs) + 1:
        raise ScheduleError(f"need {len(cutoffs) + 1} rates for {len(cutoffs)} cutoffs, got {len(rates)}")
    if len(notch_jumps) != len(cutoffs):
        raise ScheduleError("notch_jumps must have one entry per cutoff")
    if not all(map(math.isfinite, cutoffs + rates + notch_jumps + (float(base_intercept),))):
        raise ScheduleError("schedule entries must be finite")
    if cutoffs and cutoffs[0] <= 0:
        raise ScheduleError("cutoffs must be positive")
    if any(b <= a for a, b in zip(cutoffs, cutoffs[1:])):
        raise ScheduleError("cutoffs must be strictly increasing")
    if any(t >= 1 for t in rates):
        raise ScheduleError("marginal rates must be below 1")
    if any(d < 0 for d in notch_jumps):
        raise ScheduleError("notch jumps must be nonnegative")

    if mode == "convex":
        if any(b < a for a, b in zip(rates, rates[1:])):
            raise ScheduleError("convex schedules need nondecreasing rates")
    elif mode == "concave":
        if len(cutoffs) != 1 or notch_jumps[0] != 0:
            raise ScheduleError("concave mode supports a single kink without a notch")
        if rates[0] <= rates[1]:
            raise ScheduleError("concave mode needs t_0 > t_1")
    else:
        raise ScheduleError(f"unknown mode {mode!r}")
    return TaxSchedule(cutoffs, rates, notch_jumps, float(base_intercept), mode)


def single_kink(k: float, s0: float, s1: float, base_intercept: float = 0.0) -> TaxSchedule:
    """Single-kink schedule from the log cutoff and log net-of-tax slopes."""
    t0, t1 = -math.expm1(s0), -math.expm1(s1)
    mode = "convex" if t1 >= t0 else "concave"
    return build_schedule([math.exp(k)], [t0, t1], None, base_intercept, mode=mode)


def utility(consumption, income, ability, eps):
    """Quasi-linear iso-elastic utility evaluated elementwise (levels)."""
    consumption = np.asarray(consumption, dtype=float)
    income = np.asarray(income, dtype=float)
    ability = np.asarray(ability, dtype=float)
    a = 1.0 + 1.0 / eps
    return consumption - ability / a * (income / ability) ** a


# ---------------------------------------------------------------------------
# Candidate utilities in log ability.  V: tangency on a segment, U: a cutoff.


def _virtual_intercept(sched: TaxSchedule, q: int) -> float:
    knots = (0.0,) + sched.cutoffs
    return sched.intercepts[q] - (1.0 - sched.rates[q]) * knots[q]


def _v_tangent(sched, q, n, eps):
    s = sched.log_slopes[q]
    return _virtual_intercept(sched, q) + np.exp(n + (1.0 + eps) * s) / (1.0 + eps)


def _u_cutoff(sched, c, n, eps):
    kc = math.log(sched.cutoffs[c])
    return sched.notch_consumption[c] - eps / (1.0 + eps) * np.exp((1.0 + eps) / eps * kc - n / eps)


def _tangent_range(sched, q, eps):
    """Log-ability range whose tangency income lies inside segment ``q``."""
    s = sched.log_slopes[q]
    lk = sched.log_cutoffs
    lo = -np.inf if q == 0 else lk[q - 1] - eps * s
    hi = np.inf if q == sched.n_cutoffs else lk[q] - eps * s
    return lo, hi


def _first_nonneg(fun, lo, hi):
    """Smallest x in [lo, hi] with fun(x) >= 0 for increasing ``fun``."""
    if fun(lo) >= 0:
        return lo
    if not np.isfinite(hi):
        step = 1.0
        hi = lo + step
        while fun(hi) < 0:
            step *= 2.0
            hi = lo + step
            if step > 1e4:
                raise ScheduleError("no indifference point found (bracket expansion failed)")
    elif fun(hi) < 0:
        return None
    return brentq(fun, lo, hi, xtol=_ROOT_XTOL, rtol=_ROOT_RTOL, maxiter=500)


def _tangent_crossing(sched, c, q, n0, eps):
    """First log ability >= n0 where tangency on segment q matches cutoff c."""
    lo, hi = _tangent_range(sched, q, eps)
    if hi <= n0:
        return None
    if q == c + 1 and not sched.is_notch(c):
        # a kink hands over continuously to the next segment
        return max(lo, n0)
    start = max(lo, n0)
    return _first_nonneg(lambda n: _v_tangent(sched, q, n, eps) - _u_cutoff(sched, c, n, eps), start, hi)


def _cutoff_crossing(sched, c, m, n0, eps):
    """First log ability >= n0 where cutoff m is weakly preferred to cutoff c."""
    gain = sched.notch_consumption[m] - sched.notch_consumption[c]
    if gain <= 0:
        return None
    a = (1.0 + eps) / eps
    lk = sched.log_cutoffs
    log_cost = math.log(eps / (1.0 + eps)) + a * lk[m] + math.log1p(-math.exp(a * (lk[c] - lk[m])))
    return max(n0, eps * (log_cost - math.log(gain)))


@dataclass(frozen=True)
class _Regime:
    kind: str  # "interior" or "bunch"
    index: int  # segment (interior) or cutoff (bunch)
    start: float  # log ability
    end: float


@dataclass(frozen=True)
class SolutionMap:
    """Structure of the optimal income as a function of ability.

    Attributes
    ----------
    eps : float
        Elasticity the map was computed for.
    active_indices : tuple of int
        Zero-based cutoffs at which some agents bunch.
    kinds : tuple of str
        ``"kink"`` or ``"notch"`` for each active cutoff.
    lower_thresholds, upper_thresholds : ndarray
        Ability range (levels) of the bunchers at each active cutoff.
    indifference : dict
        For active notches, ``{cutoff: (N_I, Y_I)}`` in levels.
    """

    eps: float
    active_indices: tuple
    kinds: tuple
    lower_thresholds: np.ndarray
    upper_thresholds: np.ndarray
    indifference: dict
    regimes: tuple = field(repr=False, default=())

    @property
    def log_lower(self) -> np.ndarray:
        return np.log(self.lower_thresholds)

    @property
    def log_upper(self) -> np.ndarray:
        return np.log(self.upper_thresholds)


def _check_eps(eps, allow_zero=False):
    eps = float(eps)
    if not math.isfinite(eps) or eps < 0 or (eps == 0 and not allow_zero):
        raise ValueError(f"eps must be {'nonnegative' if allow_zero else 'positive'}, got {eps}")
    return eps


def solution_map(schedule: TaxSchedule, eps: float) -> SolutionMap:
    """Sweep abilities upward and record where agents bunch.

    Agents with the lowest abilities are interior on the first segment.
    Interior agents move to the next cutoff once their tangency reaches
    it.  A bunching agent leaves the cutoff at the first ability where
    another option (a tangency to the right, or a later cutoff point)
    becomes weakly better.  Ties stay at the smaller income, so bunching
    sets are closed.  A notch that dominates later cutoffs simply skips
    them.

    Parameters
    ----------
    schedule : TaxSchedule
        A convex schedule.
    eps : float
        Positive elasticity.

    Returns
    -------
    SolutionMap
    """
    eps = _check_eps(eps)
    if schedule.mode != "convex":
        raise ScheduleError("solution_map needs a convex schedule; see concave_kink_thresholds")
    J = schedule.n_cutoffs
    lk, s = schedule.log_cutoffs, schedule.log_slopes

    regimes: list[_Regime] = []
    kind, idx, start = "interior", 0, -np.inf
    while True:
        if kind == "interior":
            end = np.inf if idx == J else lk[idx] - eps * s[idx]
            regimes.append(_Regime(kind, idx, start, end))
            if idx == J:
                break
            kind, idx, start = "bunch", idx, end
            continue

        c = idx
        best = None  # (crossing, income_log, kind, index)
        for q in range(c + 1, J + 1):
            n_cross = _tangent_crossing(schedule, c, q, start, eps)
            if n_cross is not None:
                cand = (n_cross, n_cross + eps * s[q], "interior", q)
                best = cand if best is None or cand[:2] < best[:2] else best
        for m in range(c + 1, J):
            n_cross = _cutoff_crossing(schedule, c, m, start, eps)
            if n_cross is not None:
                cand = (n_cross, lk[m], "bunch", m)
                best = cand if best is None or cand[:2] < best[:2] else best
        if best is None:  # pragma: no cover - the top segment always wins eventually
            raise ScheduleError(f"no exit from cutoff {c}")
        regimes.append(_Regime("bunch", c, start, best[0]))
        kind, idx, start = best[2], best[3], best[0]

    active, kinds, lower, upper, indiff = [], [], [], [], {}
    for r_i, r in enumerate(regimes):
        if r.kind != "bunch":
            continue
        active.append(r.index)
        is_notch = schedule.is_notch(r.index)
        kinds.append("notch" if is_notch else "kink")
        lower.append(math.exp(r.start))
        upper.append(math.exp(r.end))
        if is_notch:
            nxt = regimes[r_i + 1]
            y_i = r.end + eps * s[nxt.index] if nxt.kind == "interior" else lk[nxt.index]
            indiff[r.index] = (math.exp(r.end), math.exp(y_i))
    return SolutionMap(
        eps,
        tuple(active),
        tuple(kinds),
        np.asarray(lower),
        np.asarray(upper),
        indiff,
        tuple(regimes),
    )


def _solve_log(schedule: TaxSchedule, n: np.ndarray, eps: float) -> np.ndarray:
    if eps == 0:
        return n.copy()
    if schedule.mode == "concave":
        n_low, _, _ = _concave_log_threshold(schedule, eps)
        s = schedule.log_slopes
        return np.where(n <= n_low, n + eps * s[0], n + eps * s[1])
    smap = solution_map(schedule, eps)
    s, lk = schedule.log_slopes, schedule.log_cutoffs
    y = np.full_like(n, np.nan)
    for r in smap.regimes:
        if r.kind == "interior":
            mask = (n > r.start) & (n <= r.end) if np.isfinite(r.start) else n <= r.end
            y = np.where(mask, n + eps * s[r.index], y)
    # bunching sets are closed; assign them last so ties go to the cutoff
    for r in smap.regimes:
        if r.kind == "bunch":
            y = np.where((n >= r.start) & (n <= r.end), lk[r.index], y)
    return y


def solve_agent(schedule: TaxSchedule, n_star, eps: float, *, log: bool = False):
    """Utility-maximizing income for each ability.

    Parameters
    ----------
    schedule : TaxSchedule
    n_star : float or array_like
        Ability; levels by default, logs when ``log=True``.
    eps : float
        Elasticity.  ``eps = 0`` returns income equal to ability.
    log : bool
        Interpret input and return output in logs.

    Returns
    -------
    float or ndarray
        Income in the same scale as the input.

    Examples
    --------
    >>> sched = build_schedule([1.0], [0.2, 0.3])
    >>> float(solve_agent(sched, 0.4, 1.5, log=True))
    0.0
    """
    eps = _check_eps(eps, allow_zero=True)
    arr = np.asarray(n_star, dtype=float)
    if log:
        n = arr
        if not np.all(np.isfinite(n)):
            raise ValueError("log ability must be finite")
    else:
        if np.any(~(arr > 0)):
            raise ValueError("ability must be positive")
        n = np.log(arr)
    y = _solve_log(schedule, np.atleast_1d(n), eps)
    if log:
        out = y
    else:
        out = np.exp(y)
        # exp(log K) can land one ulp above K, which is past a notch
        for K, lk in zip(schedule.cutoffs, schedule.log_cutoffs):
            out[y == lk] = K
    return out.reshape(arr.shape) if arr.shape else out[0]


def indifference_ability(schedule: TaxSchedule, notch_index: int, eps: float):
    """Marginal ability indifferent between a notch point and a tangency.

    Searches segments to the right of the notch in order and returns the
    first tangency ability whose utility equals that of the notch point.
    The utility gap is strictly increasing in ability on each segment, so
    the root is bracketed and unique.

    Parameters
    ----------
    schedule : TaxSchedule
    notch_index : int
        Zero-based index of a cutoff with a positive jump.
    eps : float

    Returns
    -------
    (N_I, Y_I) : tuple of float
        Ability and income, in levels.
    """
    eps = _check_eps(eps)
    c = int(notch_index)
    if not 0 <= c < schedule.n_cutoffs or not schedule.is_notch(c):
        raise ScheduleError(f"cutoff {notch_index} is not a notch")
    n0 = schedule.log_cutoffs[c] - eps * schedule.log_slopes[c]
    for q in range(c + 1, schedule.n_cutoffs + 1):
        n_cross = _tangent_crossing(schedule, c, q, n0, eps)
        if n_cross is not None:
            y = n_cross + eps * schedule.log_slopes[q]
            return math.exp(n_cross), math.exp(y)
    raise ScheduleError("no indifference point on any segment right of the notch")


def bunching_mass(schedule: TaxSchedule, eps: float, ability_dist) -> np.ndarray:
    """Probability of bunching at each active cutoff.

    ``ability_dist`` is a distribution of log ability exposing ``cdf``.
    For ``eps = 0`` nobody bunches and an array of zeros (one per cutoff)
    is returned.
    """
    eps = _check_eps(eps, allow_zero=True)
    if eps == 0:
        return np.zeros(schedule.n_cutoffs)
    smap = solution_map(schedule, eps)
    lo = np.asarray(ability_dist.cdf(smap.log_lower), dtype=float)
    hi = np.asarray(ability_dist.cdf(smap.log_upper), dtype=float)
    return np.clip(hi - lo, 0.0, 1.0)


def _concave_log_threshold(schedule, eps):
    if schedule.mode != "concave":
        raise ScheduleError("not a concave kink (need t_0 > t_1)")
    s0, s1 = schedule.log_slopes
    # V_0(N) = V_1(N) is linear in N; both sides are written so that close
    # rates do not cancel
    t0, t1 = schedule.rates
    K = schedule.cutoffs[0]
    gap = K * (t0 - t1)
    ds = math.log1p((t0 - t1) / (1.0 - t0))
    slope_gap = math.exp((1 + eps) * s0) * math.expm1((1 + eps) * ds) / (1 + eps)
    n_low = math.log(gap / slope_gap)
    k = schedule.log_cutoffs[0]
    y_lo, y_hi = n_low + eps * s0, n_low + eps * s1
    # the algebra puts k between the tangencies; only round-off can break that
    if not y_lo - 1e-9 <= k <= y_hi + 1e-9:  # pragma: no cover
        raise ScheduleError("concave-kink tangencies fall outside their segments")
    y_lo, y_hi = min(y_lo, k), max(y_hi, k)
    return n_low, y_lo, y_hi


def concave_kink_thresholds(schedule: TaxSchedule, eps: float, *, log: bool = False):
    """Marginal ability and support gap for a concave kink.

    The marginal agent is indifferent between the tangency below the kink
    and the tangency above it; with ties going to the smaller income,
    incomes strictly between ``Y_low`` and ``Y_high`` are never chosen.

    Returns
    -------
    (N_low, Y_low, Y_high) : tuple of float
        Levels by default, logs when ``log=True``.
    """
    eps = _check_eps(eps)
    n_low, y_lo, y_hi = _concave_log_threshold(schedule, eps)
    if log:
        return n_low, y_lo, y_hi
    return math.exp(n_low), math.exp(y_lo), math.exp(y_hi)
