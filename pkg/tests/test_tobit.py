import math
import warnings

import numpy as np
import pytest

from bunching import simulator as sim
from bunching import tobit
from bunching.budget_model import single_kink
from bunching.hetero_dist import Normal
from bunching.simulator import EXP_K, EXP_S0, EXP_S1


def normal_sample(eps=0.5, n=50_000, seed=1, beta=(2.0, 0.6), sd=0.4):
    design = sim.LocationScaleDesign(beta, (Normal(0.0, 1.0),), Normal(0.0, sd))
    return sim.simulate(sim.SimConfig(single_kink(EXP_K, EXP_S0, EXP_S1), eps, design, n=n, seed=seed))


@pytest.fixture(scope="module")
def normal50k():
    return normal_sample()


@pytest.fixture(scope="module")
def normal_fit(normal50k):
    return tobit.fit_midcensored(normal50k)


def test_log_ndtr_diff_matches_direct():
    from scipy.special import ndtr

    a = np.array([-3.0, -1.0, 0.0, 2.0])
    b = a + np.array([0.5, 2.0, 1e-3, 1.0])
    np.testing.assert_allclose(tobit.log_ndtr_diff(b, a), np.log(ndtr(b) - ndtr(a)), rtol=1e-10)


def test_log_ndtr_diff_symmetric_and_tails():
    from scipy.special import ndtr

    assert tobit.log_ndtr_diff(1.3, -1.3) == pytest.approx(math.log(2 * ndtr(1.3) - 1), rel=1e-12)
    far = tobit.log_ndtr_diff(41.0, 40.0)
    assert np.isfinite(far) and far < -700
    tiny = tobit.log_ndtr_diff(0.2 + 1e-12, 0.2)
    assert tiny == pytest.approx(math.log(1e-12 * math.exp(-0.02) / math.sqrt(2 * math.pi)), rel=1e-3)
    assert tobit.log_ndtr_diff(0.5, 0.5) == -np.inf


def test_correctly_specified(normal_fit):
    assert abs(normal_fit.eps_hat - 0.5) < 3 * normal_fit.eps_se
    assert normal_fit.converged and normal_fit.n_used == 50_000
    assert normal_fit.beta_hat == pytest.approx([2.0, 0.6], abs=0.02)
    assert normal_fit.sigma_hat == pytest.approx(0.4, abs=0.01)


def test_zero_elasticity():
    s = normal_sample(eps=0.0, n=20_000, seed=2)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        fit = tobit.fit_midcensored(s)
    assert abs(fit.eps_hat) < 3 * fit.eps_se


def test_gradient_matches_finite_differences(normal50k):
    small = normal50k.replace(
        y=normal50k.y[:3000], y_tilde=normal50k.y_tilde[:3000], weights=normal50k.weights[:3000],
        covariates=normal50k.covariates[:3000], n_star=None,
    )
    rng = np.random.default_rng(0)
    for delta in (None, 0.3):
        for _ in range(50):
            theta = np.array([0.5, 2.0, 0.6, 0.4]) * rng.uniform(0.7, 1.3, 4)
            _, g = tobit.loglik_and_gradient(theta, small, delta=delta)
            fd = np.empty(4)
            for j in range(4):
                h = 1e-6 * max(1.0, abs(theta[j]))
                e = np.zeros(4)
                e[j] = h
                fd[j] = (tobit.loglik_and_gradient(theta + e, small, delta=delta)[0]
                         - tobit.loglik_and_gradient(theta - e, small, delta=delta)[0]) / (2 * h)
            assert np.max(np.abs(g - fd)) / max(1e-3, np.max(np.abs(fd))) < 1e-5


def test_location_shift(normal50k, normal_fit):
    c = 3.7
    shifted = normal50k.replace(y=normal50k.y + c, y_tilde=normal50k.y_tilde + c, k=normal50k.k + c)
    fit = tobit.fit_midcensored(shifted)
    assert fit.eps_hat == pytest.approx(normal_fit.eps_hat, abs=1e-8)
    assert fit.beta_hat[0] == pytest.approx(normal_fit.beta_hat[0] + c, abs=1e-7)


def test_sup_distance_small(normal_fit, normal50k):
    imp = tobit.implied_unconditional(normal_fit, normal50k)
    assert imp.sup_distance < 0.01
    assert imp.B_implied == pytest.approx(imp.B_empirical, abs=0.01)
    assert np.all(np.diff(imp.cdf) >= -1e-12)


def test_wide_window_equals_untruncated(normal50k, normal_fit):
    fit = tobit.fit_truncated(normal50k, delta=1e6)
    np.testing.assert_allclose(fit.params, normal_fit.params, atol=1e-6)


def test_window_fraction_contract(normal50k):
    fit = tobit.fit_truncated(normal50k, data_fraction=0.25)
    assert abs(fit.n_used - 0.25 * normal50k.n) <= 1
    lo, hi = fit.window
    assert lo < normal50k.k < hi


def test_window_must_exceed_bunchers(normal50k):
    share = np.mean(normal50k.y == normal50k.k)
    with pytest.raises(tobit.TobitError):
        tobit.window_for_fraction(normal50k.y, normal50k.k, share * 0.5)


def test_path(normal50k, normal_fit):
    path = tobit.truncation_path(normal50k, [1.0, 0.6, 0.3], diagnostics=False)
    assert path.eps()[0] == pytest.approx(normal_fit.eps_hat, abs=1e-9)
    used = [r["n_used"] for r in path.rows]
    assert used[0] > used[1] > used[2]
    assert np.all(np.abs(path.eps() - 0.5) < 4 * np.array([r["se"] for r in path.rows]))


def test_path_records_bad_windows(normal50k, tmp_path):
    path = tobit.truncation_path(normal50k, [1.0, 1e-4], diagnostics=False)
    assert path.rows[1]["error"] and path.rows[0]["error"] is None
    path.to_csv(tmp_path / "p.csv")
    assert (tmp_path / "p.csv").read_text().startswith("fraction,delta,eps_hat,se,n_used,sup_distance,error")


def test_parallel_path_matches(normal50k):
    a = tobit.truncation_path(normal50k, [1.0, 0.5], diagnostics=False)
    b = tobit.truncation_path(normal50k, [1.0, 0.5], diagnostics=False, jobs=2)
    np.testing.assert_allclose(a.eps(), b.eps(), atol=1e-6)


def test_heckit_agrees(normal50k, normal_fit):
    h = tobit.heckit_twostep(normal50k)
    diff, se = h.compare(normal_fit)
    assert abs(diff) < 3 * se
    assert h.theta_below[1] == pytest.approx(h.theta_above[1], abs=0.05)


def test_heckit_zero_elasticity():
    s = normal_sample(eps=0.0, n=20_000, seed=3)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        h = tobit.heckit_twostep(s)
    assert abs(h.eps_hat) < 0.05


def test_errors():
    s = normal_sample(n=2000, seed=4)
    one_sided = s.replace(k=s.y.max() + 1)
    with pytest.raises(tobit.TobitError):
        tobit.fit_midcensored(one_sided)
    dup = s.replace(covariates=np.column_stack([s.covariates, 2 * s.covariates]))
    with pytest.raises(tobit.TobitError):
        tobit.fit_midcensored(dup)
    with pytest.raises(ValueError):
        tobit.fit_truncated(s)


def test_json(normal_fit):
    doc = normal_fit.to_dict()
    assert doc["schema"] == 1 and len(doc["vcov_lower"]) == 10
    assert normal_fit.to_estimate().method == "tobit"
