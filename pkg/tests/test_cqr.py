import itertools
import warnings

import numpy as np
import pytest
import statsmodels.api as sm
from hypothesis import given
from hypothesis import strategies as st

from bunching import cqr
from bunching import simulator as sim
from bunching.budget_model import single_kink
from bunching.hetero_dist import Normal
from bunching.simulator import EXP_K, EXP_S0, EXP_S1


def vertex_oracle(y, Z, tau, w=None):
    """Smallest check-loss objective over fits interpolating p observations."""
    n, p = Z.shape
    w = np.ones(n) if w is None else w
    best = np.inf
    for rows in itertools.combinations(range(n), p):
        A = Z[list(rows)]
        if abs(np.linalg.det(A)) < 1e-12:
            continue
        b = np.linalg.solve(A, y[list(rows)])
        best = min(best, float(w @ cqr.check_loss(y - Z @ b, tau)))
    return best


@given(st.integers(0, 10_000), st.floats(0.05, 0.95), st.booleans())
def test_qr_matches_vertex_oracle(seed, tau, weighted):
    rng = np.random.default_rng(seed)
    Z = np.column_stack([np.ones(10), rng.normal(size=10)])
    y = Z @ [1.0, 0.5] + rng.standard_t(3, size=10)
    w = rng.uniform(0.5, 2.0, 10) if weighted else None
    b = cqr.quantile_regression(y, Z, tau, w)
    obj = float((np.ones(10) if w is None else w) @ cqr.check_loss(y - Z @ b, tau))
    assert obj <= vertex_oracle(y, Z, tau, w) + 1e-6


def test_qr_against_statsmodels():
    rng = np.random.default_rng(5)
    Z = np.column_stack([np.ones(2000), rng.normal(size=(2000, 2))])
    y = Z @ [1.0, -0.5, 2.0] + rng.normal(size=2000)
    b = cqr.quantile_regression(y, Z, 0.3)
    ref = sm.QuantReg(y, Z).fit(q=0.3).params
    ours = cqr.check_loss(y - Z @ b, 0.3).sum()
    theirs = cqr.check_loss(y - Z @ ref, 0.3).sum()
    assert ours <= theirs + 1e-8
    np.testing.assert_allclose(b, ref, atol=1e-3)


def test_qr_covariance_close_to_statsmodels():
    rng = np.random.default_rng(6)
    Z = np.column_stack([np.ones(5000), rng.normal(size=5000)])
    y = Z @ [0.0, 1.0] + rng.normal(size=5000)
    b = cqr.quantile_regression(y, Z, 0.5)
    se = np.sqrt(np.diag(cqr.qr_covariance(y, Z, b, 0.5)))
    ref = sm.QuantReg(y, Z).fit(q=0.5).bse
    np.testing.assert_allclose(se, ref, rtol=0.15)


def test_qr_input_checks():
    Z = np.ones((5, 2))
    with pytest.raises(cqr.CQRError):
        cqr.quantile_regression(np.arange(5.0), Z, 0.5)
    with pytest.raises(ValueError):
        cqr.quantile_regression(np.arange(5.0), np.ones((5, 1)), 1.0)


def test_probit_against_statsmodels():
    rng = np.random.default_rng(7)
    Z = np.column_stack([np.ones(3000), rng.normal(size=3000)])
    D = (Z @ [0.2, 0.8] + rng.normal(size=3000) > 0).astype(float)
    fit = cqr.fit_probit(D, Z)
    ref = sm.Probit(D, Z).fit(disp=0)
    np.testing.assert_allclose(fit.coef, ref.params, atol=1e-6)
    np.testing.assert_allclose(fit.std_err, ref.bse, rtol=1e-4)


def test_probit_separation():
    x = np.linspace(-1, 1, 200)
    with pytest.raises(cqr.CQRError):
        cqr.fit_probit((x > 0).astype(float), np.column_stack([np.ones(200), x]))
    with pytest.raises(cqr.CQRError):
        cqr.fit_probit(np.ones(200), np.column_stack([np.ones(200), x]))


def test_probit_design():
    X = np.column_stack([np.linspace(0, 1, 5), [0, 1, 0, 1, 1]])
    Z = cqr.probit_design(X)
    assert Z.shape == (5, 4)
    np.testing.assert_allclose(Z[:, 2], X[:, 0] ** 2)
    np.testing.assert_allclose(Z[:, 3], X[:, 1])


def _location_sample(eps, n, seed):
    design = sim.LocationScaleDesign((2.0, 0.6), (Normal(0.0, 1.0),), Normal(0.0, 0.4))
    return sim.simulate(sim.SimConfig(single_kink(EXP_K, EXP_S0, EXP_S1), eps, design, n=n, seed=seed))


def test_three_step_recovers_elasticity():
    fit = cqr.three_step_cqr(_location_sample(0.5, 20_000, 8))
    assert abs(fit.eps_hat - 0.5) < max(0.1, 3 * fit.std_err)
    assert fit.sizes["J1_minus"] > 0 and fit.sizes["J1_plus"] > 0
    assert fit.to_dict()["schema"] == 1


def test_three_step_zero_elasticity():
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        fit = cqr.three_step_cqr(_location_sample(0.0, 20_000, 9))
    assert abs(fit.eps_hat) < max(0.05, 3 * fit.std_err)


def test_intercept_only_warns():
    s = _location_sample(0.5, 5000, 10).without_covariates()
    with pytest.warns(cqr.IdentificationWarning):
        with pytest.raises(cqr.CQRError):
            cqr.three_step_cqr(s)
