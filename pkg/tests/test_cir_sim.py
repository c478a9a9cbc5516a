import math

import numpy as np
import pytest
from scipy import stats

from jcir.cir_sim import (
    CirParams,
    Regime,
    SamplePath,
    classify,
    flow_derivatives,
    mean_at,
    simulate_coupled,
    simulate_ensemble,
    simulate_path,
    time_average,
    variance_at,
)
from jcir.levy_models import CompoundPoissonExponential, DiracAtom, GammaProcess, Zero
from jcir.malliavin_weights import simulate_interval

CP = CompoundPoissonExponential(1.0, 2.0)


def test_classify():
    assert classify(CirParams(1, 1, 1, 1)) is Regime.SUBCRITICAL
    assert classify(CirParams(1, 0, 1, 1)) is Regime.CRITICAL
    assert classify(CirParams(1, -0.5, 1, 1)) is Regime.SUPERCRITICAL


def test_params_validation():
    with pytest.raises(ValueError):
        CirParams(1, 1, 0, 1)
    with pytest.raises(ValueError):
        CirParams(-1, 1, 1, 1)
    with pytest.raises(ValueError):
        CirParams(1, 1, 1, -0.1)


def test_mean_examples():
    p = CirParams(1.0, 1.0, 1.0, 2.0, DiracAtom(0.5, 1.0))
    assert mean_at(p, 60.0) == pytest.approx(1.5, abs=1e-12)
    assert mean_at(p, 0.0) == 2.0
    assert mean_at(p.with_b(0.0), 4.0) == pytest.approx(8.0)


def test_degenerate_path_stays_at_zero():
    p = CirParams(0.0, 0.7, 0.5, 0.0)
    for scheme in ("exact", "euler"):
        path = simulate_path(p, 2.0, 50, scheme, seed=3)
        assert np.all(path.Y == 0.0)


@pytest.mark.parametrize("scheme,steps", [("exact", 20), ("euler", 400)])
@pytest.mark.parametrize("m", [Zero(), CP, GammaProcess(2.0, 4.0)], ids=lambda m: m.kind)
def test_ensemble_mean_matches_closed_form(scheme, steps, m):
    p = CirParams(2.0, 1.0, 0.5, 1.0, m)
    s = simulate_ensemble(p, 2.0, steps, 10_000, np.random.default_rng(1), scheme=scheme)
    se = s.y_T.std(ddof=1) / math.sqrt(s.n_paths)
    assert abs(s.y_T.mean() - mean_at(p, 2.0)) < 4 * se
    assert np.all(s.y_T >= 0)


def test_exact_variance_matches_closed_form():
    p = CirParams(1.0, 0.5, 1.0, 1.0, CP)
    s = simulate_ensemble(p, 1.5, 10, 20_000, np.random.default_rng(2))
    v = variance_at(p, 1.5)
    # the sample variance has standard error about v * sqrt(kurtosis-ish / n); 6% is generous
    assert s.y_T.var(ddof=1) == pytest.approx(v, rel=0.06)


def test_exact_transition_is_noncentral_chi_square():
    p = CirParams(0.8, 1.2, 0.9, 0.7)
    t = 0.4
    s = simulate_ensemble(p, t, 1, 10_000, np.random.default_rng(4))
    k = p.sigma**2 * (-math.expm1(-p.b * t)) / (4 * p.b)
    law = stats.ncx2(4 * p.a / p.sigma**2, p.y0 * math.exp(-p.b * t) / k, scale=k)
    assert stats.kstest(s.y_T, law.cdf).pvalue > 0.01


def test_comparison_theorem_on_coupled_paths():
    p = CirParams(2.0, 1.0, 0.5, 1.0)
    base, jumped = simulate_coupled(p, DiracAtom(0.8, 0.5), 5.0, 200, np.random.default_rng(0), n_paths=200)
    assert np.all(jumped >= base - 1e-12)
    assert np.any(jumped > base)


def test_path_fields_and_csv_round_trip():
    p = CirParams(2.0, 1.0, 0.5, 1.0, CP)
    path = simulate_path(p, 1.0, 25, "exact", seed=9)
    assert path.steps == 25 and path.T == pytest.approx(1.0)
    assert path.J_T == pytest.approx(float(np.sum(path.dJ)))
    back = SamplePath.from_csv(path.to_csv())
    np.testing.assert_array_equal(back.Y, path.Y)
    np.testing.assert_array_equal(back.dW, path.dW)
    assert not back.has_marks
    # same seed, same path
    np.testing.assert_array_equal(simulate_path(p, 1.0, 25, "exact", seed=9).Y, path.Y)


def test_time_average_examples():
    zero = SamplePath(np.linspace(0, 1, 5), np.zeros(5), np.zeros(4), np.zeros(4))
    assert time_average(zero) == 0.0
    two = SamplePath(np.array([0.0, 0.5]), np.array([1.0, 3.0]), np.zeros(1), np.zeros(1))
    assert time_average(two) == 1.0


def test_time_average_long_run():
    p = CirParams(2.0, 1.0, 0.5, 2.5, CP)
    path = simulate_path(p, 500.0, 10_000, "exact", seed=1)
    assert time_average(path) == pytest.approx(p.immigration / p.b, rel=0.05)


def _euler_path(p, x, dt, xi, J):
    iv = simulate_interval(p, x, dt, 1, None, xi.shape[1], xi, J)
    S = xi.shape[1]
    return SamplePath(np.linspace(0, dt, S + 1), iv.X[0], xi[0], J[0], scheme="euler")


def test_flow_derivative_initial_values_and_frozen_noise():
    p = CirParams(2.0, 0.0, 0.5, 1.0)
    S = 200
    z = np.zeros((1, S))
    path = _euler_path(p, 1.0, 0.5, z, z)
    fl = flow_derivatives(path, p, 0, S)
    assert fl.dx[0] == 1.0 and fl.db[0] == 0.0
    assert np.all(fl.dx[1:] < 1.0)
    expected = np.exp(-p.sigma**2 / 8 * np.concatenate(([0.0], np.cumsum(0.5 / S / path.Y[:-1]))))
    np.testing.assert_allclose(fl.dx, expected, rtol=1e-13)


def test_flow_derivatives_match_finite_differences():
    p = CirParams(2.0, 1.0, 0.5, 1.0, CP)
    S, dt, h = 2000, 0.2, 1e-4
    rng = np.random.default_rng(8)
    xi = rng.normal(0, math.sqrt(dt / S), size=(1, S))
    J = p.m.sample_increments(dt / S, S, rng).reshape(1, S)
    fl = flow_derivatives(_euler_path(p, 1.0, dt, xi, J), p, 0, S)
    up = simulate_interval(p, 1.0 + h, dt, 1, None, S, xi, J).X[0, -1]
    dn = simulate_interval(p, 1.0 - h, dt, 1, None, S, xi, J).X[0, -1]
    assert fl.dx[-1] == pytest.approx((up - dn) / (2 * h), rel=5e-3)
    up = simulate_interval(p.with_b(1.0 + h), 1.0, dt, 1, None, S, xi, J).X[0, -1]
    dn = simulate_interval(p.with_b(1.0 - h), 1.0, dt, 1, None, S, xi, J).X[0, -1]
    assert fl.db[-1] == pytest.approx((up - dn) / (2 * h), rel=5e-3)


def test_flow_derivative_index_checks():
    p = CirParams(2.0, 1.0, 0.5, 1.0)
    path = simulate_path(p, 1.0, 10, "euler", seed=0)
    with pytest.raises(ValueError):
        flow_derivatives(path, p, 10)
