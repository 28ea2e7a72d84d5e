import dataclasses
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from bunching import density_cdf as dc
from bunching import simulator as sim
from bunching.density_cdf import FilterError

RNG = np.random.default_rng(2024)
B_TRUE = 0.5 * 1.5 * math.log(0.8 / 0.7)


@pytest.fixture(scope="module")
def b2_frictionless():
    cfg = dataclasses.replace(sim.experiment_preset("counterexample_b2"), friction=None)
    return sim.simulate(cfg)


def test_uniform_histogram():
    h = dc.histogram(RNG.uniform(0, 1, 100_000), 0.1)
    assert np.all(np.abs(h.heights[:10] - 1.0) < 0.05)
    assert h.heights.sum() * h.binwidth == pytest.approx(1.0)


def test_constant_sample_single_bin():
    h = dc.histogram(np.full(50, 2.0), 0.5)
    assert (h.counts > 0).sum() == 1


def test_weight_scaling_invariant():
    y = RNG.normal(size=500)
    a = dc.histogram(y, 0.2)
    b = dc.histogram(y, 0.2, weights=np.full(500, 2.0))
    np.testing.assert_allclose(a.heights, b.heights)


@given(st.lists(st.floats(-3, 3), min_size=1, max_size=200), st.floats(0.05, 1.0), st.booleans())
def test_histogram_mass_adds_up(values, bw, aligned):
    y = np.round(np.asarray(values), 3)
    h = dc.histogram(y, bw, align_at_k=aligned, k=0.0)
    assert h.heights.sum() * h.binwidth + h.atom == pytest.approx(1.0, abs=1e-12)
    if aligned:
        assert np.any(np.isclose(h.edges, 0.0))


def test_aligned_histogram_needs_k():
    with pytest.raises(ValueError):
        dc.histogram(np.array([0.0, 1.0]), 0.1, align_at_k=True)


def test_side_limits_flat(b2_frictionless):
    lim = dc.side_limits(b2_frictionless, bandwidth=0.25, binwidth=0.01)
    assert lim.f_minus == pytest.approx(0.5, abs=3 * lim.se_minus + 0.01)
    assert lim.f_plus == pytest.approx(0.5, abs=3 * lim.se_plus + 0.01)
    f_m, f_p = lim
    assert (f_m, f_p) == (lim.f_minus, lim.f_plus)


def test_side_limits_continuous_density():
    y = RNG.normal(size=200_000)
    lim = dc.side_limits(y, 0.3, 0.4, binwidth=0.02)
    assert abs(lim.f_minus - lim.f_plus) < 2 * math.hypot(lim.se_minus, lim.se_plus)


def test_side_limits_sloped_density():
    # density 2x on [0, 1]: the boundary value at 0.5 is 1
    y = np.sqrt(RNG.uniform(size=400_000))
    lim = dc.side_limits(y, 0.5, 0.2, binwidth=0.01)
    assert lim.f_minus == pytest.approx(1.0, abs=0.03)
    assert lim.f_plus == pytest.approx(1.0, abs=0.03)


def test_m1_flat_and_triangular():
    n = 400_000
    flat = dc.histogram((np.arange(n) + 0.5) / n, 0.05)
    assert dc.max_slope_m1(flat) < 0.01
    tri = dc.histogram(np.sqrt(RNG.uniform(size=400_000)), 0.05)
    assert dc.max_slope_m1(tri) == pytest.approx(2.0, abs=0.5)


def test_bunching_mass_hat(b2_frictionless):
    B = dc.bunching_mass_hat(b2_frictionless)
    assert abs(B - B_TRUE) < 3 * math.sqrt(B_TRUE * (1 - B_TRUE) / b2_frictionless.n)
    assert dc.bunching_mass_hat(np.array([0.1, 0.2]), 0.0) == 0.0
    assert dc.bunching_mass_hat(np.zeros(4), 0.0) == 1.0


def test_polynomial_filter_without_frictions(b2_frictionless):
    res = dc.polynomial_cdf_filter(b2_frictionless, delta_minus=0.0, delta_plus=0.0, l=0.6, u=0.6, p=1)
    assert abs(res.B_hat - B_TRUE) < 2 * res.B_se + 1e-3
    moved = np.abs(res.y_filtered - b2_frictionless.y_tilde)
    assert np.median(moved) < 0.01


def test_polynomial_filter_window_checks():
    y = RNG.uniform(-1, 1, 1000)
    with pytest.raises(FilterError):
        dc.polynomial_cdf_filter(y, 0.0, 0.5, 0.5, 0.4, 0.6)
    with pytest.raises(FilterError):
        dc.polynomial_cdf_filter(y, 0.0, 0.1, 0.1, None, None)
    with pytest.raises(FilterError):
        dc.polynomial_cdf_filter(y, 0.0, 0.1, 0.1, 0.5, 0.5, p=0)


def test_polynomial_filter_leaves_outside_alone():
    s = sim.simulate(sim.experiment_preset("counterexample_b2", n=20_000))
    res = dc.polynomial_cdf_filter(s, delta_minus=0.5, delta_plus=0.5, l=0.85, u=0.85, p=1)
    outside = np.abs(s.y_tilde - s.k) > 0.85
    np.testing.assert_array_equal(res.y_filtered[outside], s.y_tilde[outside])
    assert np.all(np.diff(res.cdf) >= 0)
    filtered = res.apply(s)
    assert np.array_equal(filtered.y, res.y_filtered)


def test_saez_filter_flat_density():
    n = 200_000
    atom = 0.08
    y = np.where(RNG.uniform(size=n) < atom, 8580.0, RNG.uniform(0, 20_000, n))
    res = dc.saez_filter(y, 8580.0, 1500.0)
    assert abs(res.B_hat - atom) < 2 * res.B_se + 2e-3
    none = dc.saez_filter(RNG.uniform(0, 20_000, n), 8580.0, 1500.0)
    assert none.B_hat < 0.005
    assert res.window == {"delta": 1500.0}


def test_saez_filter_range_check():
    with pytest.raises(FilterError):
        dc.saez_filter(RNG.uniform(8000, 9000, 100), 8580.0, 1500.0)


def test_filter_exports(tmp_path):
    res = dc.saez_filter(RNG.uniform(0, 20_000, 5000), 8580.0, 1500.0)
    p = tmp_path / "f.csv"
    res.to_csv(p)
    assert p.read_text().startswith("grid,cdf_hat\n")
    assert '"method": "saez"' in res.to_json()
