"""Independent reference implementations used as test oracles."""

from __future__ import annotations

import numpy as np

# reference frontier and utility, written without the package's helpers


def frontier(cutoffs, rates, jumps, base, Y):
    """Consumption on a left-continuous piecewise-linear frontier (levels)."""
    Y = np.asarray(Y, dtype=float)
    C = np.full_like(Y, float(base))
    knots = [0.0, *cutoffs, np.inf]
    for j, t in enumerate(rates):
        lo, hi = knots[j], knots[j + 1]
        C += (1.0 - t) * np.clip(Y - lo, 0.0, hi - lo)
    for K, d in zip(cutoffs, jumps):
        C -= d * (Y > K)
    return C


def iso_utility(C, Y, N, eps):
    a = 1.0 + 1.0 / eps
    return C - N / a * (Y / N) ** a


def hat_area(fm, fp, M, L, inverted):
    """Exact integral over [0, L] of the (inverted) hat through the two side limits."""
    if inverted:
        def g(x):
            return np.maximum(np.maximum(fm - M * x, fp - M * (L - x)), 0.0)
        cand = [(fm - fp + M * L) / (2 * M), fm / M, L - fp / M]
    else:
        def g(x):
            return np.minimum(fm + M * x, fp + M * (L - x))
        cand = [(fp - fm + M * L) / (2 * M)]
    xs = np.unique(np.clip(np.array([0.0, L, *cand]), 0.0, L))
    return float(np.trapezoid(g(xs), xs))
