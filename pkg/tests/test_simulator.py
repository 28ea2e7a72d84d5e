import dataclasses
import math

import numpy as np
import pytest
from scipy import stats

from bunching import simulator as sim
from bunching.budget_model import build_schedule
from bunching.hetero_dist import Normal, Uniform


def _b2(n=200_000, seed=0, **kw):
    return dataclasses.replace(sim.experiment_preset("counterexample_b2", n=n, seed=seed), **kw)


def test_counterexample_buncher_share():
    s = sim.simulate(_b2())
    B = 0.5 * 1.5 * math.log(0.8 / 0.7)
    share = np.mean(s.y == s.k)
    assert abs(share - B) < 3 * math.sqrt(B * (1 - B) / s.n)
    assert not np.any(s.y_tilde == s.k)


def test_no_friction_means_identity():
    s = sim.simulate(_b2(n=1000, friction=None))
    np.testing.assert_array_equal(s.y, s.y_tilde)


def test_bunchers_only_friction():
    s = sim.simulate(_b2(n=5000, friction_mode="bunchers"))
    moved = s.y != s.y_tilde
    np.testing.assert_array_equal(moved, s.y == s.k)


def test_zero_elasticity():
    s = sim.simulate(_b2(n=2000, eps=0.0, friction=None))
    np.testing.assert_array_equal(s.y, s.n_star)
    assert not np.any(s.y == s.k)


def test_reproducible():
    a = sim.simulate(sim.experiment_preset("exp1", n=3000, seed=4))
    b = sim.simulate(sim.experiment_preset("exp1", n=3000, seed=4))
    for field in ("y", "y_tilde", "covariates", "n_star"):
        np.testing.assert_array_equal(getattr(a, field), getattr(b, field))
    c = sim.simulate(sim.experiment_preset("exp1", n=3000, seed=5))
    assert not np.array_equal(a.y, c.y)


@pytest.mark.parametrize("name, eps", [("exp1", 1.0), ("exp1_nocov", 1.0), ("exp2", 1.0), ("exp3", 4.0)])
def test_presets(name, eps):
    cfg = sim.experiment_preset(name)
    assert cfg.eps == eps and cfg.n == 50_000
    assert (cfg.k, cfg.s0, cfg.s1) == pytest.approx((2.0794, 0.2624, -0.1054))
    assert cfg.artifacts["calibration_sup_error"] < 0.02


def test_unknown_preset():
    with pytest.raises(ValueError):
        sim.experiment_preset("exp9")


def test_nocov_hides_covariate():
    s = sim.simulate(sim.experiment_preset("exp1_nocov", n=500))
    assert s.covariates.shape == (500, 0)


@pytest.mark.parametrize("name", ["exp1", "exp3"])
def test_pooled_ability_matches_marginal(name):
    cfg = sim.experiment_preset(name)
    s = sim.simulate(cfg)
    ks = stats.kstest(s.n_star, cfg.ability.marginal().cdf).statistic
    assert ks < 2 / math.sqrt(s.n) + cfg.artifacts["calibration_sup_error"]


def test_exp3_moment_conditions():
    rep = sim.experiment_preset("exp3").artifacts
    assert rep["score_residual"] < 1e-6
    assert rep["marginal_gap"] < 2e-3 + 1e-9
    assert abs(rep["excess_kurtosis"]) > 0.1


def test_csv_round_trip(tmp_path):
    s = sim.simulate(sim.experiment_preset("exp1", n=200, seed=1))
    p = tmp_path / "s.csv"
    s.to_csv(p)
    t = sim.Sample.from_csv(p, s.k, s.s0, s.s1)
    for field in ("y", "y_tilde", "weights", "covariates", "n_star"):
        np.testing.assert_array_equal(getattr(s, field), getattr(t, field))
    assert p.read_text().splitlines()[0] == "y,y_tilde,weight,x1,n_star"


def test_config_json_round_trip():
    cfg = _b2(n=100)
    again = sim.SimConfig.from_dict(__import__("json").loads(cfg.to_json()))
    np.testing.assert_array_equal(sim.simulate(cfg).y_tilde, sim.simulate(again).y_tilde)


def test_sample_validation():
    with pytest.raises(ValueError):
        sim.Sample(np.zeros(3), None, np.array([1.0, -1.0, 1.0]), None, 0.0, 0.1, -0.1)
    with pytest.raises(ValueError):
        sim.Sample(np.zeros(3), np.zeros(2), None, None, 0.0, 0.1, -0.1)


def test_config_validation():
    sched = build_schedule([1.0], [0.2, 0.3])
    with pytest.raises(ValueError):
        sim.SimConfig(sched, 1.0, Normal(0, 1), n=0)
    with pytest.raises(ValueError):
        sim.SimConfig(sched, 1.0, Normal(0, 1), friction=Normal(0, 1))


def test_location_scale_quantile():
    design = sim.LocationScaleDesign((1.0, 0.5), (Uniform(0, 2),), Normal(0, 0.3), (0.2,))
    x, n = design.draw(100_000, 0)
    resid = n - (1.0 + 0.5 * x[:, 0])
    assert abs(np.mean(resid < 0) - 0.5) < 0.01
