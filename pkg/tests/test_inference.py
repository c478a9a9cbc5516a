import math

import numpy as np
import pytest
from scipy import optimize, stats

from jcir import inference
from jcir.cir_sim import CirParams, Regime, SamplePath, simulate_ensemble, simulate_path
from jcir.levy_models import CompoundPoissonExponential, DiracAtom

CP = CompoundPoissonExponential(1.0, 2.0)
P = CirParams(2.0, 1.0, 0.5, 2.5, CP)


def ode_path(a, b, y0, T, steps):
    t = np.linspace(0, T, steps + 1)
    Y = a / b + (y0 - a / b) * np.exp(-b * t)
    return SamplePath(t, Y, np.zeros(steps), np.zeros(steps), np.array([]), np.array([]))


def test_scaling_factors_and_information():
    assert inference.scaling_factor(Regime.SUBCRITICAL, 100.0) == 0.1
    assert inference.scaling_factor("Critical", 100.0) == 0.01
    assert inference.scaling_factor(Regime.SUPERCRITICAL, 30.0, -0.5) == pytest.approx(math.exp(-7.5))
    assert inference.fisher_information(P) == pytest.approx(10.0)


def test_jump_sum_examples():
    zero = simulate_path(CirParams(2.0, 1.0, 0.5, 1.0), 5.0, 100, seed=1)
    assert inference.jump_sum(zero) == 0.0
    path = ode_path(2.0, 1.0, 1.0, 2.0, 200)
    Y = path.Y.copy()
    Y[101:] += 3.0
    dJ = path.dJ.copy()
    dJ[100] = 3.0
    marked = SamplePath(path.t, Y, path.dW, dJ, np.array([path.t[101]]), np.array([3.0]))
    assert inference.jump_sum(marked) == 3.0
    # without marks the threshold rule also picks up that step's drift
    assert inference.jump_sum(SamplePath(path.t, Y, path.dW, dJ)) == pytest.approx(3.0, abs=0.01)


def test_jump_sum_poisson_rate():
    p = CirParams(2.0, 1.0, 0.5, 1.0, DiracAtom(0.5, 1.0))
    path = simulate_path(p, 400.0, 4000, seed=2)
    rate = inference.jump_sum(path) / path.T
    assert abs(rate - 0.5) < 4 * math.sqrt(0.5 / path.T)


def test_mle_on_noise_free_path():
    path = ode_path(2.0, 1.0, 0.2, 10.0, 10_000)
    res = inference.mle_continuous(path, 2.0)
    assert res.b_hat == pytest.approx(1.0, abs=2e-3)


def test_mle_translation_cancellation():
    path = simulate_path(P, 20.0, 2000, seed=4)
    base = inference.mle_continuous(path, P.a).b_hat
    k = path.steps // 2
    Y = path.Y.copy()
    Y[k + 1 :] += 1.7
    shifted = SamplePath(path.t, Y, path.dW, path.dJ, np.append(path.jump_times, path.t[k]),
                         np.append(path.jump_sizes, 1.7))
    # the numerator moves by 1.7 and J_T by 1.7; int Y changes too, so compare the numerator
    num = lambda q: q.y_T - q.y0 - P.a * q.T - inference.jump_sum(q)
    assert num(shifted) == pytest.approx(num(path), abs=1e-10)
    assert base == pytest.approx(-num(path) / path.int_Y)


def test_mle_efficiency_subcritical():
    s = simulate_ensemble(P, 100.0, 5000, 1000, np.random.default_rng(0), scheme="euler")
    z = math.sqrt(100.0) * (inference.mle_continuous(s, P.a) - P.b)
    se = z.std(ddof=1) / math.sqrt(z.size)
    assert abs(z.mean()) < 4 * se
    assert z.var(ddof=1) == pytest.approx(1.0 / inference.fisher_information(P), rel=0.15)


def test_continuous_ratio_identities():
    path = simulate_path(P, 10.0, 1000, seed=5)
    assert inference.loglik_ratio_continuous(path, 1.0, 1.0, P.a, P.sigma) == 0.0
    f = inference.loglik_ratio_continuous(path, 1.0, 1.3, P.a, P.sigma)
    g = inference.loglik_ratio_continuous(path, 1.3, 1.0, P.a, P.sigma)
    assert f == pytest.approx(-g, abs=1e-12)
    rate = 1 / math.sqrt(path.T)
    si = inference.score_info(path, 1.0, rate, P.a, P.sigma)
    assert si.I >= 0
    for u in (-1.0, 0.5, 2.0):
        lr = inference.loglik_ratio_continuous(path, 1.0, 1.0 + rate * u, P.a, P.sigma)
        assert lr == pytest.approx(u * si.U - 0.5 * u * u * si.I, abs=1e-12)


def test_score_variance_matches_information():
    s = simulate_ensemble(P, 100.0, 5000, 1000, np.random.default_rng(1), scheme="euler")
    si = inference.score_info(s, 1.0, 0.1, P.a, P.sigma)
    assert np.all(si.I >= 0)
    assert np.var(si.U, ddof=1) == pytest.approx(10.0, rel=0.15)


def _ncx2_loglik(obs, a, b, sigma):
    x, y = obs.values[:-1], obs.values[1:]
    k = sigma**2 * (-math.expm1(-b * obs.dt)) / (4 * b)
    return float(np.sum(stats.ncx2.logpdf(y / k, 4 * a / sigma**2, x * math.exp(-b * obs.dt) / k) - math.log(k)))


def test_discrete_loglik_against_chi_square():
    p = CirParams(2.0, 1.0, 0.5, 1.0)
    obs = inference.DiscreteObs(0.1, np.array([1.0, 1.3]))
    assert inference.loglik_discrete(obs, p) == pytest.approx(_ncx2_loglik(obs, 2.0, 1.0, 0.5), abs=1e-8)


def test_discrete_loglik_additive_and_score_consistent():
    path = simulate_path(P, 5.0, 100, seed=6)
    obs = inference.DiscreteObs(path.dt, path.Y)
    left = inference.DiscreteObs(path.dt, path.Y[:51])
    right = inference.DiscreteObs(path.dt, path.Y[50:])
    total = inference.loglik_discrete(obs, P)
    assert total == pytest.approx(inference.loglik_discrete(left, P) + inference.loglik_discrete(right, P), abs=1e-9)
    h = 1e-4
    fd = (inference.loglik_discrete(obs, P.with_b(1 + h)) - inference.loglik_discrete(obs, P.with_b(1 - h))) / (2 * h)
    assert inference.score_discrete(obs, P) == pytest.approx(fd, rel=1e-5)


def test_discrete_ratio_telescopes():
    path = simulate_path(P, 5.0, 100, seed=7)
    obs = inference.DiscreteObs(path.dt, path.Y)
    rate = 1 / math.sqrt(obs.horizon)
    assert inference.loglik_ratio_discrete(obs, P, 1.0, 0.0, rate) == 0.0
    r1 = inference.loglik_ratio_discrete(obs, P, 1.0, 1.0, rate)
    r2 = inference.loglik_ratio_discrete(obs, P, 1.0 + rate, 0.5, rate)
    direct = inference.loglik_ratio_discrete(obs, P, 1.0, 1.5, rate)
    assert r1 + r2 == pytest.approx(direct, abs=1e-9)


def test_discrete_mle_maximises_and_matches_chi_square_mle():
    p = CirParams(2.0, 1.0, 0.5, 2.0)
    path = simulate_path(p, 50.0, 1000, seed=8)
    obs = inference.DiscreteObs(path.dt, path.Y)
    res = inference.mle_discrete(obs, p, tol=1e-7)
    f = lambda b: inference.loglik_discrete(obs, p.with_b(b))
    assert f(res.b_hat) >= f(res.b_hat + 0.01) and f(res.b_hat) >= f(res.b_hat - 0.01)
    ref = optimize.minimize_scalar(lambda b: -_ncx2_loglik(obs, 2.0, b, 0.5), bounds=(0.2, 3.0),
                                   method="bounded", options={"xatol": 1e-9})
    assert res.b_hat == pytest.approx(ref.x, abs=1e-4)


def test_discrete_mle_bracket_errors():
    path = simulate_path(P, 5.0, 100, seed=9)
    obs = inference.DiscreteObs(path.dt, path.Y)
    with pytest.raises(ValueError, match="bracketed"):
        inference.mle_discrete(obs, P, interval=(5.0, 6.0))
    with pytest.raises(ValueError):
        inference.DiscreteObs(0.1, np.array([1.0]))


@pytest.mark.slow
def test_discrete_mle_coverage():
    """Coverage of b_hat +/- 3 (n dt I)^(-1/2) over independent data sets."""
    n, dt, reps = 2000, 0.05, 40
    half = 3.0 / math.sqrt(n * dt * inference.fisher_information(P))
    s = simulate_ensemble(P, n * dt, n, reps, np.random.default_rng(10), record_every=1)
    hits = 0
    for k in range(reps):
        b_hat = inference.mle_discrete(inference.DiscreteObs(dt, s.states[k]), P, tol=1e-4).b_hat
        hits += abs(b_hat - 1.0) < half
    assert hits / reps >= 0.9
