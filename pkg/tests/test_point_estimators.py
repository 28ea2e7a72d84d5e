import json
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from bunching import point_estimators as pe
from bunching.bounds import m0, partial_id_set
from bunching.budget_model import build_schedule, concave_kink_thresholds, indifference_ability, solve_agent
from bunching.point_estimators import EstimationError

S0, S1 = math.log(0.8), math.log(0.7)
B3 = 0.5 * 1.5 * (S0 - S1)


def test_trapezoid_flat_density():
    assert pe.trapezoid_eps_logs(B3, 0.5, 0.5, S0, S1).eps_hat == pytest.approx(1.5, abs=1e-12)
    assert pe.trapezoid_eps_logs(0.0, 0.5, 0.5, S0, S1).eps_hat == 0.0


def test_trapezoid_errors():
    with pytest.raises(EstimationError):
        pe.trapezoid_eps_logs(0.1, 0.0, 0.0, S0, S1)
    with pytest.raises(EstimationError):
        pe.trapezoid_eps_logs(0.1, 0.5, 0.5, S1, S0)


def test_trapezoid_delta_se():
    est = pe.trapezoid_eps_logs(0.1, 0.4, 0.6, S0, S1, se=(0.01, 0.0, 0.0))
    assert est.std_err == pytest.approx(0.01 * est.eps_hat / 0.1)


@given(st.floats(1e-3, 0.5), st.floats(0.01, 2), st.floats(0.01, 2), st.floats(1e-3, 1.0))
def test_trapezoid_monotone(B, fm, fp, bump):
    base = pe.trapezoid_eps_logs(B, fm, fp, S0, S1).eps_hat
    assert pe.trapezoid_eps_logs(B + bump, fm, fp, S0, S1).eps_hat > base
    assert pe.trapezoid_eps_logs(B, fm + bump, fp, S0, S1).eps_hat < base


@given(st.floats(1e-3, 0.5), st.floats(0.01, 2), st.floats(0.01, 2))
def test_trapezoid_equals_bounds_at_m0(B, fm, fp):
    if abs(fm - fp) < 1e-6:
        return
    r = partial_id_set(B, fm, fp, S0, S1, m0(B, fm, fp))
    t = pe.trapezoid_eps_logs(B, fm, fp, S0, S1).eps_hat
    assert r.eps_lower == pytest.approx(t, rel=1e-10)
    assert r.eps_upper == pytest.approx(t, rel=1e-10)


def test_levels_version_close_to_logs():
    est = pe.trapezoid_eps_levels(B3, 0.5, 0.5, 0.2, 0.3, 1.0)
    assert abs(est.eps_hat - 1.5) < 0.02
    assert pe.trapezoid_eps_levels(0.0, 0.5, 0.5, 0.2, 0.3, 1.0).eps_hat == 0.0
    with pytest.raises(EstimationError):
        pe.trapezoid_eps_levels(0.1, 0.5, 0.5, 0.3, 0.3, 1.0)


def test_uniform():
    assert pe.uniform_eps(B3, 0.5, S0, S1).eps_hat == pytest.approx(1.5)
    assert pe.uniform_eps(0.0, 0.5, S0, S1).eps_hat == 0.0
    with pytest.raises(EstimationError):
        pe.uniform_eps(0.1, 0.0, S0, S1)


def test_uniform_trapezoid_ratio():
    fm, fp = 0.3, 0.7
    u = pe.uniform_eps(0.1, fm, S0, S1).eps_hat
    t = pe.trapezoid_eps_logs(0.1, fm, fp, S0, S1).eps_hat
    assert u / t == pytest.approx((fm + fp) / (2 * fm))


def test_notch_quadratic_oracle():
    s = build_schedule([1.0], [0.0, 0.0], [0.5])
    est = pe.notch_eps(1.5 + math.sqrt(1.25), s)
    assert est.eps_hat == pytest.approx(1.0, abs=1e-10)


def test_notch_zero_limit():
    s = build_schedule([1.0], [0.0, 0.0], [0.5])
    assert pe.notch_eps(1.5 * (1 + 1e-13), s).eps_hat < 1e-3
    with pytest.raises(EstimationError):
        pe.notch_eps(1.2, s)
    with pytest.raises(EstimationError):
        pe.notch_eps(0.9, s)


@given(st.floats(0.1, 5.0), st.floats(0.01, 1.0), st.floats(0.2, 5.0), st.floats(0.0, 0.5), st.floats(0.0, 0.3))
def test_notch_round_trip(eps, rel_jump, K, t0, dt):
    s = build_schedule([K], [t0, t0 + dt], [rel_jump * K])
    _, Y = indifference_ability(s, 0, eps)
    assert pe.notch_eps(Y, s).eps_hat == pytest.approx(eps, abs=1e-8)


def test_gap_detection_notch():
    s = build_schedule([1.0], [0.0, 0.0], [0.5])
    n = np.random.default_rng(0).uniform(-1, 2, 100_000)
    y = solve_agent(s, n, 1.0, log=True)
    assert abs(pe.detect_gap_upper(y, 0.0) - math.log(1.5 + math.sqrt(1.25))) < 0.05
    with pytest.raises(EstimationError):
        pe.detect_gap_upper(np.array([-1.0, 0.0]), 0.0)


def test_gap_detection_kink_is_tiny():
    n = np.random.default_rng(1).uniform(-1, 2, 100_000)
    y = solve_agent(build_schedule([1.0], [0.2, 0.3]), n, 1.5, log=True)
    assert pe.detect_gap_upper(y, 0.0) < 1e-3


def test_concave_gap_closed_form():
    est = pe.concave_gap_eps(math.log(0.875), math.log(1.125), math.log(0.7), math.log(0.9))
    assert est.eps_hat == pytest.approx(1.0, abs=1e-12)
    assert pe.concave_gap_eps(0.1, 0.1, 0.0, 0.2).eps_hat == 0.0
    with pytest.raises(EstimationError):
        pe.concave_gap_eps(0.0, 0.1, 0.2, 0.0)


@given(st.floats(0.1, 5.0), st.floats(0.1, 0.8), st.floats(0.05, 0.9), st.floats(0.2, 5.0))
def test_concave_round_trip(eps, t0, frac, K):
    t1 = t0 * (1 - frac)
    s = build_schedule([K], [t0, t1], mode="concave")
    _, lo, hi = concave_kink_thresholds(s, eps, log=True)
    assert pe.concave_gap_eps(lo, hi, *s.log_slopes).eps_hat == pytest.approx(eps, abs=1e-12)


@given(st.floats(-5, 5))
def test_shift_invariance(c):
    y = np.array([-0.3, 0.0, 0.0, 0.4, 0.9])
    lo, hi = pe.detect_gap_concave(y, 0.0)
    lo2, hi2 = pe.detect_gap_concave(y + c, c)
    assert pe.concave_gap_eps(lo, hi, 0.0, 0.5).eps_hat == pytest.approx(
        pe.concave_gap_eps(lo2, hi2, 0.0, 0.5).eps_hat, abs=1e-12
    )


def test_json_record():
    doc = json.loads(pe.trapezoid_eps_logs(0.1, 0.4, 0.6, S0, S1).to_json())
    assert doc["method"] == "trapezoid" and doc["schema"] == 1 and "std_err" not in doc
