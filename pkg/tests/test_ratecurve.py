import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from spadsim.errors import DegenerateSpanError, ParameterError
from spadsim.model import DetectorParams, OperatingPoint, expected_count_rate
from spadsim.ratecurve import (
    RateCurve,
    dead_time_verdict,
    fit_ideal,
    fit_with_dead_time,
    model_rate,
    point_seeds,
    prediction_table,
    simulated_curve,
)

NU = 100e6
SWEEP = np.logspace(5, 9, 17)


def exact_curve(qe, n_d=0, n_ph=SWEEP, rel_sigma=0.01):
    n_c = model_rate(n_ph, qe, NU, n_d)
    return RateCurve(n_ph, n_c, NU, sigma=rel_sigma * n_c)


def ov_line_qe(ov):
    return (19.7 * ov - 0.81) / 100


# fits on exact data


def test_exact_ideal_points():
    r = fit_ideal(exact_curve(0.12))
    assert r.qe == pytest.approx(0.12, abs=1e-10)
    assert r.chi2 < 1e-12
    assert r.dof == len(SWEEP) - 1
    assert r.verdict == "compatible"


def test_exact_dead_time_points():
    r = fit_with_dead_time(exact_curve(0.12, n_d=1), 1)
    assert r.qe == pytest.approx(0.12, abs=1e-10)
    assert r.chi2 < 1e-12


def test_exact_points_with_default_poisson_errors():
    n_c = model_rate(SWEEP, 0.3, NU, 2)
    r = fit_with_dead_time(RateCurve(SWEEP, n_c, NU), 2)
    assert r.qe == pytest.approx(0.3, abs=1e-10)


def test_all_zero_counts():
    r = fit_ideal(RateCurve(SWEEP, np.zeros_like(SWEEP), NU))
    assert r.qe == 0.0
    assert math.isinf(r.qe_rel_sigma)
    assert r.degenerate


def test_saturation_asymptote():
    r = fit_with_dead_time(exact_curve(0.12, n_d=1), 1)
    assert model_rate(1e16, r.qe, NU, 1) == pytest.approx(NU / 2, rel=1e-12)
    assert np.all(model_rate(SWEEP, r.qe, NU, 1) < NU / 2)


def test_degenerate_span():
    n_ph = np.array([1e6, 2e6, 5e6])
    c = RateCurve(n_ph, model_rate(n_ph, 0.1, NU), NU)
    with pytest.raises(DegenerateSpanError):
        fit_ideal(c)
    two = RateCurve(np.array([1e5, 1e7]), model_rate(np.array([1e5, 1e7]), 0.1, NU), NU)
    with pytest.raises(DegenerateSpanError):
        fit_ideal(two)
    with pytest.raises(ParameterError):
        fit_with_dead_time(exact_curve(0.1), 0)


def test_curve_validation():
    with pytest.raises(ParameterError):
        RateCurve([1e6], [NU], NU)
    with pytest.raises(ParameterError):
        RateCurve([1e6, 2e6], [1.0], NU)
    with pytest.raises(ParameterError):
        RateCurve([-1.0], [1.0], NU)
    with pytest.raises(ParameterError):
        RateCurve([1.0], [1.0], NU, sigma=[0.0])
    c = RateCurve([1e6, 1e7], [400.0, 0.0], NU, window_s=4.0)
    np.testing.assert_allclose(c.sigma, [10.0, 0.25])


# invariants


@settings(max_examples=200, deadline=None)
@given(qe=st.floats(1e-4, 1.0), n_ph=st.floats(1.0, 1e11))
def test_zero_dead_time_is_identity(qe, n_ph):
    assert model_rate(n_ph, qe, NU, 0) == expected_count_rate(n_ph, qe, NU)


@settings(max_examples=200, deadline=None)
@given(qe=st.floats(1e-3, 1.0), n_ph=st.floats(1e3, 1e11), n_d=st.integers(1, 10))
def test_dead_time_strictly_below_ideal(qe, n_ph, n_d):
    ideal = model_rate(n_ph, qe, NU, 0)
    dt = model_rate(n_ph, qe, NU, n_d)
    assert dt < ideal
    assert model_rate(n_ph, qe, NU, n_d + 1) < dt


# simulated sweeps


@pytest.fixture(scope="module")
def sim_nd0():
    return simulated_curve(DetectorParams(0.15), NU, SWEEP, 2 * 10**7, 101)


def test_simulated_nd0_verdict(sim_nd0):
    results = dead_time_verdict(sim_nd0, 3)
    assert [r.n_d_tested for r in results] == [0, 1, 2, 3]
    assert results[0].verdict == "compatible"
    assert all(r.verdict == "incompatible" for r in results[1:])
    assert not any(r.indeterminate for r in results)
    assert abs(results[0].qe - 0.15) <= 3 * results[0].qe_sigma


def test_nd1_fit_of_nd0_data_exceeds_critical_chi2(sim_nd0):
    r = fit_with_dead_time(sim_nd0, 1)
    assert r.chi2 > stats.chi2.ppf(0.999, r.dof)


def test_verdict_monotone_in_n_d(sim_nd0):
    results = dead_time_verdict(sim_nd0, 5)
    chi2 = [r.chi2 for r in results]
    assert all(a < b for a, b in zip(chi2, chi2[1:]))
    bad = [r.verdict == "incompatible" for r in results]
    for k in range(len(bad) - 1):
        if bad[k]:
            assert bad[k + 1]


def test_injected_two_pulse_dead_time_is_uniquely_compatible():
    c = simulated_curve(DetectorParams(0.15, dead_pulses=2), NU, SWEEP, 2 * 10**7, 102)
    results = dead_time_verdict(c, 4)
    assert [r.n_d_tested for r in results if r.verdict == "compatible"] == [2]
    assert abs(results[2].qe - 0.15) <= 3 * results[2].qe_sigma


@pytest.mark.parametrize("ov", [0.4, 0.6, 0.8])
def test_overvoltage_qes_recovered(ov):
    qe = ov_line_qe(ov)
    c = simulated_curve(DetectorParams(qe), NU, SWEEP, 2 * 10**7, int(ov * 10))
    c = RateCurve(c.n_ph, c.n_c, c.rep_rate, window_s=c.window_s, operating_point=OperatingPoint(-30.0, ov))
    r = fit_ideal(c)
    assert abs(r.qe - qe) <= 3 * r.qe_sigma


def test_low_flux_pair_is_indeterminate():
    n_ph = np.array([1e5, 3e5])
    c = RateCurve(n_ph, model_rate(n_ph, 0.15, NU), NU)
    results = dead_time_verdict(c, 3)
    assert all(r.verdict == "compatible" for r in results)
    assert all(r.indeterminate for r in results)
    assert all(r.dof == 1 for r in results)


def test_prediction_table_columns():
    results = dead_time_verdict(exact_curve(0.12), 2)
    t = prediction_table(results, NU, 1e4, 1e10, 50)
    assert t.shape == (50, 4)
    assert t[0, 0] == pytest.approx(1e4) and t[-1, 0] == pytest.approx(1e10)
    for k, r in enumerate(results):
        np.testing.assert_allclose(t[:, k + 1], model_rate(t[:, 0], r.qe, NU, r.n_d_tested), rtol=1e-15)


def test_point_seeds():
    a = point_seeds(5, 10)
    assert a == point_seeds(5, 10)
    assert len(set(a)) == 10
    assert all(0 <= s < 2**63 for s in a)
    assert point_seeds(6, 10) != a
