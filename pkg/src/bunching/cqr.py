"""Censored quantile regression for the elasticity at a kink.

If the conditional ``tau``-quantile of log ability is linear, ``X beta``, the
conditional quantile of log income is ``X b`` where it lies below ``k``,
``k`` in the bunching band, and ``X b + delta`` above it, with
``delta = eps (s1 - s0)``.  The three-step procedure picks observations
whose conditional quantile is away from ``k`` (first with probits, then
with a preliminary quantile regression) and regresses ``y`` on ``X`` and an
above-the-kink indicator over them.
"""

from __future__ import annotations

import json
import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy import optimize, special, stats

from ._optim import ConvergenceError, maximize
from .point_estimators import EstimationError

__all__ = [
    "IdentificationWarning",
    "CQRError",
    "ProbitFit",
    "QuantileFit",
    "check_loss",
    "fit_probit",
    "quantile_regression",
    "qr_covariance",
    "probit_design",
    "three_step_cqr",
]

ATOM_TOL = 1e-9


class IdentificationWarning(UserWarning):
    """The rank condition behind the quantile identification fails."""


class CQRError(EstimationError):
    """A selection step or regression could not be carried out."""


# ---------------------------------------------------------------------------
# probit


@dataclass
class ProbitFit:
    coef: np.ndarray
    std_err: np.ndarray
    loglik: float
    iterations: int

    def predict(self, Z) -> np.ndarray:
        return special.ndtr(np.asarray(Z, dtype=float) @ self.coef)


def fit_probit(D, Z, weights=None, *, gtol=1e-8, maxiter=200) -> ProbitFit:
    """Probit maximum likelihood by Newton-Raphson with step halving.

    Parameters
    ----------
    D : array_like of {0, 1}
    Z : array_like, shape (n, p)
        Regressors including any intercept column.
    weights : array_like, optional

    Raises
    ------
    CQRError
        Constant outcome, rank-deficient ``Z`` or (quasi-)separation.
    """
    D = np.asarray(D, dtype=float).ravel()
    Z = np.asarray(Z, dtype=float)
    if Z.ndim == 1:
        Z = Z[:, None]
    w = np.ones_like(D) if weights is None else np.asarray(weights, dtype=float)
    w = w / w.sum()
    if np.all(D == D[0]):
        raise CQRError("probit outcome is constant")
    if np.linalg.matrix_rank(Z) < Z.shape[1]:
        raise CQRError("probit regressors are rank deficient")
    sign = 2 * D - 1

    def parts(g):
        q = Z @ g
        sq = sign * q
        lp = special.log_ndtr(sq)
        lam = sign * np.exp(-0.5 * sq * sq - 0.5 * math.log(2 * math.pi) - lp)
        return q, lp, lam

    def fg(g):
        q, lp, lam = parts(g)
        return float(w @ lp), Z.T @ (w * lam)

    def hess(g):
        q, _, lam = parts(g)
        return -(Z.T * (w * lam * (lam + q))) @ Z

    # start from the linear probability fit mapped to the probit scale
    p0 = min(max(float(w @ D), 1e-3), 1 - 1e-3)
    g0 = np.zeros(Z.shape[1])
    const = np.flatnonzero(np.all(Z == Z[0], axis=0))
    if const.size:
        g0[const[0]] = special.ndtri(p0) / Z[0, const[0]]
    try:
        res = maximize(fg, g0, hess=hess, gtol=gtol, maxiter=maxiter)
    except (ConvergenceError, np.linalg.LinAlgError) as exc:
        raise CQRError(f"probit did not converge ({exc}); check for separation") from exc
    q = Z @ res.x
    if np.max(np.abs(q)) > 30:
        raise CQRError("probit index diverges: the outcome is (quasi-)separated by the regressors")
    H = hess(res.x)
    n_eff = 1.0 / float(w @ w)
    cov = np.linalg.inv(-H) / n_eff
    return ProbitFit(res.x, np.sqrt(np.diag(cov)), res.fun, res.iterations)


# ---------------------------------------------------------------------------
# quantile regression


def check_loss(u, tau):
    """``rho_tau(u) = u (tau - 1{u < 0})``."""
    u = np.asarray(u, dtype=float)
    return u * (tau - (u < 0))


def quantile_regression(y, Z, tau, weights=None) -> np.ndarray:
    """Coefficients minimizing ``sum_i w_i rho_tau(y_i - Z_i b)``.

    Solved exactly through the dual linear program
    ``max_a y'a  s.t.  Z'a = (1 - tau) Z'1,  0 <= a <= 1``
    with HiGHS; the coefficients are the equality-constraint multipliers.
    Weights scale rows of ``y`` and ``Z``.
    """
    y = np.asarray(y, dtype=float).ravel()
    Z = np.asarray(Z, dtype=float)
    if Z.ndim == 1:
        Z = Z[:, None]
    if not 0 < tau < 1:
        raise ValueError("tau must lie in (0, 1)")
    n, p = Z.shape
    if n < p:
        raise CQRError("fewer observations than regressors")
    if np.linalg.matrix_rank(Z) < p:
        raise CQRError("quantile regression design is rank deficient")
    if weights is not None:
        w = np.asarray(weights, dtype=float)
        y, Z = y * w, Z * w[:, None]
    res = optimize.linprog(
        -y,
        A_eq=Z.T,
        b_eq=(1 - tau) * Z.sum(axis=0),
        bounds=(0, 1),
        method="highs",
    )
    if res.status != 0:
        raise CQRError(f"quantile regression LP failed: {res.message}")
    return -np.asarray(res.eqlin.marginals, dtype=float)


def _hall_sheather(n, tau, alpha=0.05):
    x = stats.norm.ppf(tau)
    f = stats.norm.pdf(x)
    return n ** (-1 / 3) * stats.norm.ppf(1 - alpha / 2) ** (2 / 3) * ((1.5 * f**2) / (2 * x**2 + 1)) ** (1 / 3)


def qr_covariance(y, Z, b, tau, weights=None) -> np.ndarray:
    """Sandwich covariance of quantile-regression coefficients.

    The sparsity is estimated with a uniform kernel whose bandwidth is the
    Hall-Sheather rate mapped to the residual scale:
    ``h = kappa (Phi^-1(tau + h_n) - Phi^-1(tau - h_n))`` with
    ``kappa = min(sd, IQR / 1.34)`` of the residuals.
    """
    y = np.asarray(y, dtype=float)
    Z = np.asarray(Z, dtype=float)
    n = y.size
    w = np.ones(n) if weights is None else np.asarray(weights, dtype=float) * n / np.sum(weights)
    r = y - Z @ b
    hn = min(_hall_sheather(n, tau), 0.49 * min(tau, 1 - tau))
    iqr = np.subtract(*np.percentile(r, [75, 25]))
    kappa = min(np.std(r), iqr / 1.34) if iqr > 0 else np.std(r)
    h = kappa * (stats.norm.ppf(tau + hn) - stats.norm.ppf(tau - hn))
    if not h > 0:
        raise CQRError("degenerate residuals: cannot estimate the sparsity")
    kern = (np.abs(r) <= h) / (2 * h)
    J = (Z.T * (w * kern)) @ Z / n
    S = (Z.T * w**2) @ Z / n
    try:
        Ji = np.linalg.inv(J)
    except np.linalg.LinAlgError as exc:
        raise CQRError("singular sparsity matrix") from exc
    V = tau * (1 - tau) * Ji @ S @ Ji / n
    return 0.5 * (V + V.T)


# ---------------------------------------------------------------------------
# three-step procedure


def probit_design(X) -> np.ndarray:
    """Intercept, the covariates and squares of the non-binary ones."""
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    cols = [np.ones(X.shape[0])]
    for j in range(X.shape[1]):
        x = X[:, j]
        cols.append(x)
        if np.unique(x).size > 2:
            cols.append(x * x)
    return np.column_stack(cols)


@dataclass
class QuantileFit:
    """Three-step censored quantile regression result.

    ``b_hat`` has the intercept first; ``sizes`` records how many
    observations each selection step kept.
    """

    tau: float
    b_hat: np.ndarray
    delta_hat: float
    eps_hat: float
    std_err: float
    vcov: np.ndarray
    s0: float
    s1: float
    k: float
    sizes: dict = field(default_factory=dict)
    trimming: dict = field(default_factory=dict)
    notes: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "schema": 1,
            "tau": self.tau,
            "eps_hat": self.eps_hat,
            "std_err": self.std_err,
            "delta_hat": self.delta_hat,
            "b_hat": self.b_hat.tolist(),
            "k": self.k,
            "s0": self.s0,
            "s1": self.s1,
            "sizes": self.sizes,
            "trimming": self.trimming,
            "notes": self.notes,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)


def _lemma_rank(Xt, where):
    if Xt.shape[0] < Xt.shape[1] or np.linalg.matrix_rank(Xt) < Xt.shape[1]:
        warnings.warn(
            f"rank condition fails at {where}: covariates cannot separate quantiles below and above k",
            IdentificationWarning,
            stacklevel=3,
        )
        raise CQRError(f"design rank deficient at {where}")


def _trimmed(score, pct, upper_tail):
    """Observations with ``score`` beyond the ``pct`` percentile of its positive (or negative) part.

    Falls back to the untrimmed set when trimming would leave nothing.
    """
    side = score > 0 if upper_tail else score < 0
    if not side.any():
        return side, 0.0
    kappa = float(np.percentile(score[side], pct))
    sel = score > kappa if upper_tail else score < kappa
    if not sel.any():
        return side, 0.0
    return sel, kappa


def three_step_cqr(
    sample,
    X=None,
    k=None,
    s0=None,
    s1=None,
    tau=0.5,
    *,
    weights=None,
    probit_regressors=None,
    trim=(10.0, 3.0, 97.0),
    tol=ATOM_TOL,
) -> QuantileFit:
    """Censored quantile regression estimate of the elasticity.

    Parameters
    ----------
    sample : Sample
        Log incomes in ``sample.y``.
    X : array_like, optional
        Covariates without intercept; defaults to ``sample.covariates``.
    tau : float
        Quantile level.
    probit_regressors : array_like, optional
        First-step regressors (default :func:`probit_design` of ``X``).
    trim : tuple of float
        Percentiles for the probit margin, the positive part and the
        negative part of the preliminary quantile index.

    Warns
    -----
    IdentificationWarning
        When the selected design is rank deficient, for example with an
        intercept-only model.
    """
    y = np.asarray(sample.y, dtype=float)
    k = sample.k if k is None else float(k)
    s0 = sample.s0 if s0 is None else float(s0)
    s1 = sample.s1 if s1 is None else float(s1)
    if s0 == s1:
        raise CQRError("need s0 != s1")
    Xc = sample.covariates if X is None else np.asarray(X, dtype=float)
    Xc = Xc.reshape(y.size, -1)
    n = y.size
    w = np.asarray(sample.weights if weights is None else weights, dtype=float)
    X1 = np.column_stack([np.ones(n), Xc])
    notes = []
    if Xc.shape[1] == 0 or np.all(np.ptp(Xc, axis=0) == 0):
        warnings.warn(
            "intercept-only design: the conditional quantile cannot move across k",
            IdentificationWarning,
            stacklevel=2,
        )
        raise CQRError("no covariate varies; the rank condition cannot hold")

    d_plus = (y > k + tol).astype(float)
    d_minus = (y < k - tol).astype(float)
    if d_plus.min() == d_plus.max() or d_minus.min() == d_minus.max():
        raise CQRError("need observations below, above and away from k")
    Zp = probit_design(Xc) if probit_regressors is None else np.asarray(probit_regressors, dtype=float)

    # step 1: probits for being above / below k
    pr_plus = fit_probit(d_plus, Zp, w).predict(Zp)
    pr_minus = fit_probit(d_minus, Zp, w).predict(Zp)
    J0p, k0p = _trimmed(pr_plus - (1 - tau), trim[0], True)
    J0m, k0m = _trimmed(pr_minus - tau, trim[0], True)
    sel0 = J0p | J0m
    W0 = J0p.astype(float)
    Xt0 = np.column_stack([X1, W0])[sel0]
    _lemma_rank(Xt0, "step 2")
    c0 = quantile_regression(y[sel0], Xt0, tau, w[sel0])
    b0, d0 = c0[:-1], c0[-1]

    # step 2 selection: preliminary quantile index away from k
    idx = X1 @ b0 - k
    J1p, k1p = _trimmed(idx + d0, trim[1], True)
    J1m, k1m = _trimmed(idx, trim[2], False)
    both = J1p & J1m
    if both.any():
        notes.append(f"{int(both.sum())} observations fell in both step-3 sets and were dropped")
        J1p &= ~both
        J1m &= ~both
    sel1 = J1p | J1m
    W1 = J1p.astype(float)
    Xt1 = np.column_stack([X1, W1])[sel1]
    _lemma_rank(Xt1, "step 3")
    c1 = quantile_regression(y[sel1], Xt1, tau, w[sel1])
    V = qr_covariance(y[sel1], Xt1, c1, tau, w[sel1])
    ds = s1 - s0
    delta = float(c1[-1])
    return QuantileFit(
        tau=tau,
        b_hat=c1[:-1],
        delta_hat=delta,
        eps_hat=delta / ds,
        std_err=float(math.sqrt(max(V[-1, -1], 0.0)) / abs(ds)),
        vcov=V,
        s0=s0,
        s1=s1,
        k=k,
        sizes={
            "n": int(n),
            "J0_minus": int(J0m.sum()),
            "J0_plus": int(J0p.sum()),
            "J1_minus": int(J1m.sum()),
            "J1_plus": int(J1p.sum()),
        },
        trimming={"kappa0_plus": k0p, "kappa0_minus": k0m, "kappa1_plus": k1p, "kappa1_minus": k1m},
        notes=notes,
    )
