"""Mid-censored Tobit estimation of the elasticity.

Log ability given covariates is modelled as ``n* = X b + s u`` with standard
normal ``u``.  Log income is then ``n* + e s0`` below the kink, ``k`` for
bunchers and ``n* + e s1`` above it, so the likelihood has a normal density
on each side and an interval probability at ``k``.

Optimization runs in ``psi = (eta, gamma, h) = (e, b, 1) / s`` where the
untruncated log-likelihood is concave.  Results are reported in the natural
parameters ``theta = (e, b, s)``; the covariance is a sandwich mapped to
``theta`` by the delta method.
"""

from __future__ import annotations

import json
import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy import special

from ._optim import ConvergenceError, fd_hessian, maximize
from .point_estimators import ElasticityEstimate, EstimationError

__all__ = [
    "TobitFit",
    "TobitError",
    "ConvergenceError",
    "ImpliedDistribution",
    "TruncationPath",
    "HeckitResult",
    "log_ndtr_diff",
    "loglik_and_gradient",
    "fit_midcensored",
    "fit_truncated",
    "window_for_fraction",
    "truncation_path",
    "implied_unconditional",
    "heckit_twostep",
]

ATOM_TOL = 1e-9
_LOG_SQRT_2PI = 0.5 * math.log(2 * math.pi)


class TobitError(EstimationError):
    """Invalid data or design for a Tobit fit."""


# ---------------------------------------------------------------------------
# numerics


def log_ndtr_diff(a, b):
    """``log(Phi(a) - Phi(b))`` for ``a >= b``, stable in both tails.

    Pairs in the upper tail are reflected so that both arguments are
    nonpositive, and nearly equal pairs use a midpoint expansion.  Returns
    ``-inf`` where ``a <= b``.
    """
    a, b = np.broadcast_arrays(np.asarray(a, dtype=float), np.asarray(b, dtype=float))
    shape = a.shape
    a, b = a.ravel(), b.ravel()
    swap = b > 0
    hi = np.where(swap, -b, a)
    lo = np.where(swap, -a, b)
    lh = special.log_ndtr(hi)
    ll = special.log_ndtr(lo)
    with np.errstate(divide="ignore", invalid="ignore"):
        out = lh + np.log(-np.expm1(ll - lh))
        d = hi - lo
        m = 0.5 * (hi + lo)
        near = (d > 0) & (d < 1e-5)
        if np.any(near):
            dn, mn = d[near], m[near]
            out[near] = -0.5 * mn**2 - _LOG_SQRT_2PI + np.log(dn) + np.log1p((mn**2 - 1) * dn**2 / 24)
    out = np.where(a > b, out, -np.inf)
    return out.reshape(shape)[()]


def _log_phi(x):
    return -0.5 * x * x - _LOG_SQRT_2PI


@dataclass
class _Data:
    """Estimation sample split by region, with normalized weights."""

    X: np.ndarray
    y: np.ndarray
    w: np.ndarray
    left: np.ndarray
    bunch: np.ndarray
    right: np.ndarray
    k: float
    s0: float
    s1: float
    delta: float | None
    index: np.ndarray  # positions in the original sample


def _prepare(sample, k, s0, s1, weights, delta, *, covariates=True, tol=ATOM_TOL):
    k = sample.k if k is None else float(k)
    s0 = sample.s0 if s0 is None else float(s0)
    s1 = sample.s1 if s1 is None else float(s1)
    if not s0 > s1:
        raise TobitError("need s0 > s1 at a convex kink")
    y = np.asarray(sample.y, dtype=float)
    w = np.asarray(sample.weights if weights is None else weights, dtype=float)
    if w.shape != y.shape or np.any(w < 0):
        raise TobitError("weights must be nonnegative with one per observation")
    X = sample.design() if covariates else np.ones((y.size, 1))
    keep = w > 0
    if delta is not None and np.isfinite(delta):
        if not delta > tol:
            raise TobitError("the window must contain k strictly inside")
        keep &= np.abs(y - k) < delta
    idx = np.flatnonzero(keep)
    y, w, X = y[idx], w[idx], X[idx]
    bunch = np.abs(y - k) <= tol
    left = (y < k) & ~bunch
    right = (y > k) & ~bunch
    if not left.any() or not right.any():
        raise TobitError("need observations on both sides of k")
    if delta is not None and np.isfinite(delta) and not bunch.any():
        raise TobitError("the truncation window holds no bunchers")
    if not bunch.any():
        warnings.warn("no observations at k; the fit relies on the density shift alone", stacklevel=3)
    if np.linalg.matrix_rank(X) < X.shape[1]:
        raise TobitError("covariate matrix is rank deficient")
    w = w / w.sum()
    d = None if delta is None or not np.isfinite(delta) else float(delta)
    return _Data(X, y, w, left, bunch, right, k, s0, s1, d, idx)


def _scores(psi, D: _Data):
    """Per-observation log-likelihood and scores in ``psi``."""
    eta, gamma, h = psi[0], psi[1:-1], psi[-1]
    n, p = D.X.shape[0], psi.size
    ll = np.empty(n)
    S = np.zeros((n, p))
    xg = D.X @ gamma
    k, s0, s1 = D.k, D.s0, D.s1
    if h <= 0:
        return np.full(n, -np.inf), S

    for mask, slope in ((D.left, s0), (D.right, s1)):
        z = h * D.y[mask] - eta * slope - xg[mask]
        ll[mask] = math.log(h) - 0.5 * z * z - _LOG_SQRT_2PI
        S[mask, 0] = z * slope
        S[mask, 1:-1] = z[:, None] * D.X[mask]
        S[mask, -1] = 1.0 / h - z * D.y[mask]

    if D.bunch.any():
        m = D.bunch
        a = h * k - eta * s1 - xg[m]
        b = h * k - eta * s0 - xg[m]
        L = log_ndtr_diff(a, b)
        ll[m] = L
        ra = np.exp(_log_phi(a) - L)
        rb = np.exp(_log_phi(b) - L)
        S[m, 0] = -ra * s1 + rb * s0
        S[m, 1:-1] = -(ra - rb)[:, None] * D.X[m]
        S[m, -1] = (ra - rb) * k

    if D.delta is not None:
        up, lo = k + D.delta, k - D.delta
        u = h * up - eta * s1 - xg
        lw = h * lo - eta * s0 - xg
        T = log_ndtr_diff(u, lw)
        ll -= T
        ru = np.exp(_log_phi(u) - T)
        rl = np.exp(_log_phi(lw) - T)
        S[:, 0] -= -ru * s1 + rl * s0
        S[:, 1:-1] -= -(ru - rl)[:, None] * D.X
        S[:, -1] -= ru * up - rl * lo
    return ll, S


def _objective(D: _Data):
    def fg(psi):
        ll, S = _scores(psi, D)
        f = float(D.w @ ll)
        if not np.isfinite(f):
            return -np.inf, np.zeros_like(psi)
        return f, D.w @ S

    return fg


def _psi_to_theta(psi):
    h = psi[-1]
    return np.concatenate([psi[:-1] / h, [1.0 / h]])


def _theta_to_psi(theta):
    s = theta[-1]
    return np.concatenate([theta[:-1] / s, [1.0 / s]])


def _jac_theta_psi(psi):
    """d theta / d psi."""
    h = psi[-1]
    p = psi.size
    J = np.zeros((p, p))
    J[: p - 1, : p - 1] = np.eye(p - 1) / h
    J[: p - 1, -1] = -psi[:-1] / h**2
    J[-1, -1] = -1.0 / h**2
    return J


def loglik_and_gradient(params, sample, k=None, s0=None, s1=None, *, weights=None, delta=None, covariates=True):
    """Average log-likelihood and its gradient in the natural parameters.

    Parameters
    ----------
    params : array_like
        ``(e, b_0, ..., b_d, s)`` with ``s > 0``.
    sample : Sample
    k, s0, s1 : float, optional
        Default to the values stored on ``sample``.
    weights : array_like, optional
        Override the sample weights; they are normalized to sum to one.
    delta : float, optional
        Half-width of the truncation window.  ``None`` means no truncation.

    Returns
    -------
    value : float
    gradient : ndarray
    """
    theta = np.asarray(params, dtype=float)
    if not theta[-1] > 0:
        raise ValueError("s must be positive")
    D = _prepare(sample, k, s0, s1, weights, delta, covariates=covariates)
    if theta.size != D.X.shape[1] + 2:
        raise ValueError(f"expected {D.X.shape[1] + 2} parameters, got {theta.size}")
    psi = _theta_to_psi(theta)
    f, g_psi = _objective(D)(psi)
    # chain rule through psi(theta)
    J_inv = np.linalg.inv(_jac_theta_psi(psi))
    return f, J_inv.T @ g_psi


# ---------------------------------------------------------------------------
# fitting


@dataclass
class TobitFit:
    """Result of a (possibly truncated) mid-censored Tobit fit.

    ``vcov`` is the sandwich covariance of ``(eps, beta_0, ..., beta_d,
    sigma)``.  ``delta`` is ``None`` for the untruncated likelihood.
    """

    eps_hat: float
    beta_hat: np.ndarray
    sigma_hat: float
    vcov: np.ndarray
    loglik: float
    n_used: int
    k: float
    s0: float
    s1: float
    delta: float | None = None
    fraction: float | None = None
    iterations: int = 0
    grad_norm: float = math.nan
    converged: bool = True
    covariates: bool = True
    influence: np.ndarray | None = field(default=None, repr=False)
    used_index: np.ndarray | None = field(default=None, repr=False)

    @property
    def params(self) -> np.ndarray:
        return np.concatenate([[self.eps_hat], self.beta_hat, [self.sigma_hat]])

    @property
    def std_errors(self) -> np.ndarray:
        return np.sqrt(np.clip(np.diag(self.vcov), 0, None))

    @property
    def eps_se(self) -> float:
        return float(self.std_errors[0])

    @property
    def window(self):
        if self.delta is None:
            return None
        return (self.k - self.delta, self.k + self.delta)

    def to_estimate(self) -> ElasticityEstimate:
        method = "tobit" if self.delta is None else "tobit_truncated"
        return ElasticityEstimate(
            self.eps_hat,
            method,
            self.eps_se,
            {"k": self.k, "s0": self.s0, "s1": self.s1, "delta": self.delta},
            {"n_used": self.n_used, "iterations": self.iterations, "grad_norm": self.grad_norm},
        )

    def to_dict(self) -> dict:
        tril = self.vcov[np.tril_indices(self.vcov.shape[0])]
        return {
            "schema": 1,
            "eps_hat": self.eps_hat,
            "beta_hat": self.beta_hat.tolist(),
            "sigma_hat": self.sigma_hat,
            "std_errors": self.std_errors.tolist(),
            "vcov_lower": tril.tolist(),
            "loglik": self.loglik,
            "n_used": self.n_used,
            "k": self.k,
            "s0": self.s0,
            "s1": self.s1,
            "delta": self.delta,
            "fraction": self.fraction,
            "convergence": {
                "converged": self.converged,
                "iterations": self.iterations,
                "grad_norm": self.grad_norm,
            },
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)


def _initial_psi(D: _Data):
    nb = ~D.bunch
    Xn, yn, wn = D.X[nb], D.y[nb], D.w[nb]
    sw = np.sqrt(wn)
    coef, *_ = np.linalg.lstsq(Xn * sw[:, None], yn * sw, rcond=None)
    resid = yn - Xn @ coef
    sigma = math.sqrt(max(float(wn @ resid**2) / wn.sum(), 1e-8))
    eps0 = 0.1
    coef = coef.copy()
    coef[0] -= eps0 * 0.5 * (D.s0 + D.s1)
    if D.delta is not None:
        sigma = max(sigma, D.delta)
    return _theta_to_psi(np.concatenate([[eps0], coef, [sigma]]))


def _domain_guard(fg, D: _Data):
    # a negative elasticity overlaps the two tangency regimes and the
    # density no longer integrates to one, so eta < 0 is never admissible
    def guarded(psi):
        if psi[-1] <= 0 or psi[0] < 0 or (D.bunch.any() and psi[0] == 0):
            return -np.inf, np.zeros_like(psi)
        return fg(psi)

    return guarded


def _boundary_fit(fg, x0):
    """Maximize with eta fixed at zero; returns the full psi and the eta score."""

    def restricted(z):
        f, g = fg(np.concatenate([[0.0], z]))
        return f, g[1:]

    res = maximize(restricted, x0[1:], gtol=1e-8, maxiter=500)
    psi = np.concatenate([[0.0], res.x])
    return psi, fg(psi)[1][0], res


def _fit(D: _Data, start=None, *, covariates=True, fraction=None):
    fg = _domain_guard(_objective(D), D)
    x0 = _initial_psi(D) if start is None else _theta_to_psi(np.asarray(start, dtype=float))
    if not np.isfinite(fg(x0)[0]):
        x0 = _initial_psi(D)
    res = None
    if not D.bunch.any():
        # without bunchers eps = 0 is feasible; the likelihood is concave in
        # psi, so a nonpositive eta score there means the optimum is on the boundary
        psi_b, score_eta, res_b = _boundary_fit(fg, x0)
        if score_eta <= 0:
            res = res_b
            psi = psi_b
        else:
            x0 = psi_b.copy()
            x0[0] = 1e-3
    if res is None:
        res = maximize(fg, x0, gtol=1e-8, maxiter=500)
        psi = res.x
    # unguarded, so that a boundary optimum still gets a two-sided Hessian
    H = fd_hessian(_objective(D), psi)
    _, S = _scores(psi, D)
    WS = D.w[:, None] * S
    try:
        Hinv = np.linalg.inv(H)
    except np.linalg.LinAlgError as exc:
        raise TobitError("singular Hessian at the optimum") from exc
    J = _jac_theta_psi(psi)
    # influence of each observation on theta: -J H^{-1} w_i S_i
    infl = -(WS @ Hinv.T) @ J.T
    vcov = infl.T @ infl
    vcov = 0.5 * (vcov + vcov.T)
    theta = _psi_to_theta(psi)
    return TobitFit(
        eps_hat=float(theta[0]),
        beta_hat=theta[1:-1].copy(),
        sigma_hat=float(theta[-1]),
        vcov=vcov,
        loglik=res.fun,
        n_used=int(D.y.size),
        k=D.k,
        s0=D.s0,
        s1=D.s1,
        delta=D.delta,
        fraction=fraction,
        iterations=res.iterations,
        grad_norm=res.grad_norm,
        converged=res.converged,
        covariates=covariates,
        influence=infl,
        used_index=D.index,
    )


def fit_midcensored(sample, k=None, s0=None, s1=None, weights=None, *, covariates=True, start=None) -> TobitFit:
    """Maximum likelihood fit of the mid-censored Tobit model.

    Parameters
    ----------
    sample : Sample
        Uses ``sample.y`` and the covariates (an intercept is added).
    k, s0, s1 : float, optional
        Kink location and log net-of-tax slopes; default to the sample's.
    weights : array_like, optional
        Observation weights, normalized internally.
    covariates : bool
        ``False`` fits an intercept-only model.
    start : array_like, optional
        Starting value in ``(e, b, s)``.

    Raises
    ------
    TobitError
        Rank-deficient design or no observations on one side of ``k``.
    ConvergenceError
        No convergence within 500 Newton iterations.
    """
    D = _prepare(sample, k, s0, s1, weights, None, covariates=covariates)
    return _fit(D, start, covariates=covariates, fraction=1.0)


def window_for_fraction(y, k, fraction, weights=None, tol=ATOM_TOL) -> float:
    """Half-width of the symmetric window around ``k`` holding a weighted share of the data.

    The returned ``delta`` lies midway between consecutive order statistics
    of ``|y - k|``, so the open window ``(k - delta, k + delta)`` holds the
    smallest set of observations whose weight reaches ``fraction``.
    ``fraction = 1`` returns ``inf``.
    """
    if not 0 < fraction <= 1:
        raise ValueError("fraction must lie in (0, 1]")
    if fraction == 1:
        return math.inf
    y = np.asarray(y, dtype=float)
    w = np.ones_like(y) if weights is None else np.asarray(weights, dtype=float)
    dist = np.abs(y - k)
    order = np.argsort(dist, kind="stable")
    ds, cw = dist[order], np.cumsum(w[order]) / w.sum()
    bunch_share = cw[np.searchsorted(ds, tol, side="right") - 1] if ds[0] <= tol else 0.0
    if fraction <= bunch_share + 1e-12:
        raise TobitError(f"fraction {fraction:g} does not exceed the bunching share {bunch_share:.4g}")
    j = int(np.searchsorted(cw, fraction - 1e-12))
    if j >= ds.size - 1:
        return math.inf
    return 0.5 * (ds[j] + ds[j + 1]) if ds[j + 1] > ds[j] else float(np.nextafter(ds[j], np.inf))


def fit_truncated(
    sample, k=None, s0=None, s1=None, *, delta=None, data_fraction=None, weights=None, covariates=True, start=None
) -> TobitFit:
    """Tobit fit conditional on ``k - delta < y < k + delta``.

    Give either the half-width ``delta`` or ``data_fraction``, the weighted
    share of observations the window must hold.  Each likelihood term is
    divided by ``Phi((k + delta - e s1 - X b)/s) - Phi((k - delta - e s0 - X b)/s)``,
    the model probability of the window.
    """
    if (delta is None) == (data_fraction is None):
        raise ValueError("give exactly one of delta or data_fraction")
    kk = sample.k if k is None else float(k)
    w = sample.weights if weights is None else np.asarray(weights, dtype=float)
    if data_fraction is not None:
        delta = window_for_fraction(sample.y, kk, data_fraction, w)
    D = _prepare(sample, k, s0, s1, weights, delta, covariates=covariates)
    return _fit(D, start, covariates=covariates, fraction=data_fraction)


# ---------------------------------------------------------------------------
# implied distribution


@dataclass
class ImpliedDistribution:
    """Distribution of ``y`` implied by a fit, averaged over the covariates.

    For truncated fits everything is conditional on the window.
    ``sup_distance`` compares ``cdf`` with the empirical CDF of the fitted
    observations, including both one-sided limits at ``k``.
    """

    grid: np.ndarray
    cdf: np.ndarray
    pdf: np.ndarray
    B_implied: float
    B_empirical: float
    sup_distance: float


def _grouped_design(X, w):
    rows, inv = np.unique(X, axis=0, return_inverse=True)
    inv = np.asarray(inv).ravel()
    return rows, np.bincount(inv, weights=w, minlength=rows.shape[0])


def implied_unconditional(fit: TobitFit, sample, grid=None, *, n_grid=1001) -> ImpliedDistribution:
    """Implied CDF and density of ``y`` and the bunching mass under a fit.

    Parameters
    ----------
    fit : TobitFit
    sample : Sample
        The sample the fit was computed on; its covariates define the
        averaging distribution and its ``y`` the empirical comparison.
    grid : array_like, optional
        Evaluation points; defaults to ``n_grid`` sample quantiles plus ``k``.
    """
    D = _prepare(sample, fit.k, fit.s0, fit.s1, None, fit.delta, covariates=fit.covariates)
    rows, rw = _grouped_design(D.X, D.w)
    e, b, s, k = fit.eps_hat, fit.beta_hat, fit.sigma_hat, fit.k
    xb = rows @ b
    mu0, mu1 = e * fit.s0 + xb, e * fit.s1 + xb
    # window probabilities in logs: far-away covariate rows underflow otherwise
    if fit.delta is None:
        z_lo = np.full_like(xb, -np.inf)
        log_mass = np.zeros_like(xb)
    else:
        z_lo = (k - fit.delta - mu0) / s
        log_mass = log_ndtr_diff((k + fit.delta - mu1) / s, z_lo)
    log_atom = log_ndtr_diff((k - mu1) / s, (k - mu0) / s)
    B_implied = float(rw @ np.exp(log_atom - log_mass))
    B_emp = float(D.w[D.bunch].sum())

    if grid is None:
        q = np.quantile(D.y, np.linspace(0.0005, 0.9995, n_grid))
        grid = np.unique(np.concatenate([q, [k]]))
    grid = np.asarray(grid, dtype=float)

    def model_cdf(x, left_limit=False):
        out = np.empty(x.size)
        for i0 in range(0, x.size, 256):
            xs = x[i0 : i0 + 256, None]
            below = (xs < k) | ((xs == k) & left_limit)
            mu = np.where(below, mu0, mu1)
            z = np.maximum((xs - mu) / s, z_lo)
            out[i0 : i0 + 256] = np.exp(log_ndtr_diff(z, z_lo) - log_mass) @ rw
        return np.clip(out, 0.0, 1.0)

    def model_pdf(x):
        out = np.empty(x.size)
        for i0 in range(0, x.size, 256):
            xs = x[i0 : i0 + 256, None]
            mu = np.where(xs < k, mu0, mu1)
            out[i0 : i0 + 256] = np.exp(_log_phi((xs - mu) / s) - log_mass) @ rw / s
        if fit.delta is not None:
            out[np.abs(x - k) >= fit.delta] = 0.0
        return out

    cdf = model_cdf(grid)
    pdf = model_pdf(grid)
    # empirical CDF and left limits at the grid
    order = np.argsort(D.y, kind="stable")
    ys, cw = D.y[order], np.concatenate([[0.0], np.cumsum(D.w[order])])
    emp = cw[np.searchsorted(ys, grid, side="right")]
    emp_left = cw[np.searchsorted(ys, grid, side="left")]
    # treat bunchers as sitting exactly at k
    at_k = np.isclose(grid, k, rtol=0, atol=ATOM_TOL)
    if np.any(at_k):
        emp[at_k] = float(D.w[(D.y <= k) | D.bunch].sum())
        emp_left[at_k] = float(D.w[D.left].sum())
    cdf_left = cdf.copy()
    if np.any(at_k):
        cdf_left[at_k] = model_cdf(grid[at_k], left_limit=True)
    sup = float(max(np.max(np.abs(emp - cdf)), np.max(np.abs(emp_left - cdf_left))))
    return ImpliedDistribution(grid, cdf, pdf, B_implied, B_emp, sup)


# ---------------------------------------------------------------------------
# truncation path


@dataclass
class TruncationPath:
    """Fits over a sequence of window sizes.

    ``rows`` holds one dict per fraction with keys ``fraction, delta,
    eps_hat, se, n_used, sup_distance, error``.
    """

    fits: list
    rows: list

    def eps(self) -> np.ndarray:
        return np.array([r["eps_hat"] for r in self.rows], dtype=float)

    def to_csv(self, path) -> None:
        cols = ["fraction", "delta", "eps_hat", "se", "n_used", "sup_distance", "error"]

        def fmt(v):
            if v is None:
                return ""
            if isinstance(v, str):
                return '"' + v.replace('"', "'") + '"'
            if isinstance(v, (int, np.integer)):
                return str(int(v))
            return "inf" if math.isinf(v) else ("" if math.isnan(v) else f"{v:.12g}")

        with open(path, "w", encoding="utf-8", newline="") as fh:
            fh.write(",".join(cols) + "\n")
            for r in self.rows:
                fh.write(",".join(fmt(r.get(c)) for c in cols) + "\n")


def truncation_path(
    sample, fractions, k=None, s0=None, s1=None, *, weights=None, covariates=True, diagnostics=True, jobs=1
) -> TruncationPath:
    """Truncated fits for each data fraction, warm-started along the path.

    A failed window is recorded in its row (``error``) and does not stop
    the path; the next window then starts cold.  With ``jobs > 1`` the
    windows are fitted concurrently, each from a cold start.
    """
    fractions = [float(f) for f in fractions]
    if not fractions or any(not 0 < f <= 1 for f in fractions):
        raise ValueError("fractions must lie in (0, 1]")
    kk = sample.k if k is None else float(k)
    w = sample.weights if weights is None else np.asarray(weights, dtype=float)

    def one(frac, start):
        row = {"fraction": frac, "delta": None, "eps_hat": math.nan, "se": math.nan, "n_used": None}
        row.update({"sup_distance": math.nan, "error": None})
        try:
            delta = window_for_fraction(sample.y, kk, frac, w)
            row["delta"] = delta
            D = _prepare(sample, k, s0, s1, weights, delta, covariates=covariates)
            try:
                fit = _fit(D, start, covariates=covariates, fraction=frac)
            except (ConvergenceError, TobitError):
                if start is None:
                    raise
                fit = _fit(D, None, covariates=covariates, fraction=frac)
            row.update(eps_hat=fit.eps_hat, se=fit.eps_se, n_used=fit.n_used)
            if diagnostics:
                row["sup_distance"] = implied_unconditional(fit, sample).sup_distance
        except (EstimationError, ConvergenceError, ValueError) as exc:
            fit = None
            row["error"] = str(exc)
        return fit, row

    if jobs > 1:
        from concurrent.futures import ThreadPoolExecutor

        with ThreadPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(lambda f: one(f, None), fractions))
    else:
        results, start = [], None
        for frac in fractions:
            fit, row = one(frac, start)
            start = None if fit is None else fit.params
            results.append((fit, row))
    return TruncationPath([r[0] for r in results], [r[1] for r in results])


# ---------------------------------------------------------------------------
# two one-sided censored fits


def _censored_scores(psi, X, y, w, k, side):
    """One-sided censored normal regression in ``(gamma, h)``.

    ``side = "above"``: values at or above ``k`` are censored (``y0``).
    ``side = "below"``: values at or below ``k`` are censored (``y1``).
    """
    gamma, h = psi[:-1], psi[-1]
    n = y.size
    ll = np.empty(n)
    S = np.zeros((n, psi.size))
    if h <= 0:
        return np.full(n, -np.inf), S
    xg = X @ gamma
    cens = (y >= k - ATOM_TOL) if side == "above" else (y <= k + ATOM_TOL)
    obs = ~cens
    z = h * y[obs] - xg[obs]
    ll[obs] = math.log(h) - 0.5 * z * z - _LOG_SQRT_2PI
    S[obs, :-1] = z[:, None] * X[obs]
    S[obs, -1] = 1.0 / h - z * y[obs]
    c = h * k - xg[cens]
    sign = -1.0 if side == "above" else 1.0  # log P(y* >= k) = log Phi(-c)
    arg = sign * c
    L = special.log_ndtr(arg)
    ll[cens] = L
    r = np.exp(_log_phi(arg) - L) * sign
    S[cens, :-1] = -r[:, None] * X[cens]
    S[cens, -1] = r * k
    return ll, S


def _fit_censored(X, y, w, k, side):
    def fg(psi):
        ll, S = _censored_scores(psi, X, y, w, k, side)
        f = float(w @ ll)
        if not np.isfinite(f):
            return -np.inf, np.zeros_like(psi)
        return f, w @ S

    sw = np.sqrt(w)
    coef, *_ = np.linalg.lstsq(X * sw[:, None], y * sw, rcond=None)
    sigma = math.sqrt(max(float(w @ (y - X @ coef) ** 2), 1e-8))
    res = maximize(fg, np.concatenate([coef / sigma, [1.0 / sigma]]), gtol=1e-8, maxiter=500)
    H = fd_hessian(fg, res.x)
    _, S = _censored_scores(res.x, X, y, w, k, side)
    J = _jac_theta_psi(res.x)
    infl = -((w[:, None] * S) @ np.linalg.inv(H).T) @ J.T
    return _psi_to_theta(res.x), infl


@dataclass
class HeckitResult:
    """Elasticity from two one-sided censored regressions.

    ``theta_below`` fits ``min(y, k)`` (right-censored) and ``theta_above``
    fits ``max(y, k)`` (left-censored); each is ``(b_0, ..., b_d, s)``.
    """

    estimate: ElasticityEstimate
    theta_below: np.ndarray
    theta_above: np.ndarray
    influence: np.ndarray = field(repr=False)
    used_index: np.ndarray = field(repr=False)

    @property
    def eps_hat(self) -> float:
        return self.estimate.eps_hat

    def compare(self, fit: TobitFit) -> tuple[float, float]:
        """Difference to a mid-censored fit on the same sample and its joint standard error."""
        if fit.used_index is None or not np.array_equal(fit.used_index, self.used_index):
            raise ValueError("fits must use the same observations")
        diff = self.eps_hat - fit.eps_hat
        se = float(np.sqrt(np.sum((self.influence - fit.influence[:, 0]) ** 2)))
        return diff, se


def heckit_twostep(sample, k=None, s0=None, s1=None, weights=None, *, covariates=True) -> HeckitResult:
    """Elasticity from separate censored fits below and above the kink.

    ``eps = (c1 - c0)/(s1 - s0)`` where ``c0`` and ``c1`` are the intercepts
    of the right-censored model for ``min(y, k)`` and the left-censored
    model for ``max(y, k)``.  Slopes are not constrained to agree, so this
    is less efficient than :func:`fit_midcensored` and serves as a check.
    """
    D = _prepare(sample, k, s0, s1, weights, None, covariates=covariates)
    y0 = np.minimum(D.y, D.k)
    y1 = np.maximum(D.y, D.k)
    y0[D.bunch] = D.k
    y1[D.bunch] = D.k
    th0, inf0 = _fit_censored(D.X, y0, D.w, D.k, "above")
    th1, inf1 = _fit_censored(D.X, y1, D.w, D.k, "below")
    ds = D.s1 - D.s0
    eps = float((th1[0] - th0[0]) / ds)
    infl = (inf1[:, 0] - inf0[:, 0]) / ds
    se = float(np.sqrt(np.sum(infl**2)))
    est = ElasticityEstimate(
        eps,
        "heckit",
        se,
        {"k": D.k, "s0": D.s0, "s1": D.s1},
        {"intercept_below": float(th0[0]), "intercept_above": float(th1[0]), "n_used": int(D.y.size)},
    )
    return HeckitResult(est, th0, th1, infl, D.index)
