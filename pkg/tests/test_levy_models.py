import math

import numpy as np
import pytest
from scipy import integrate, stats

from jcir.levy_models import (
    CompoundPoissonExponential,
    CustomDensity,
    DiracAtom,
    GammaDensity,
    GammaProcess,
    InverseGaussian,
    Zero,
    first_moment,
    from_dict,
    pth_moment,
    sample_increments,
    split,
)

CATALOG = [
    CompoundPoissonExponential(1.0, 2.0),
    GammaProcess(2.0, 4.0),
    GammaDensity(2.5, 1.5),
    GammaDensity(-0.5, 2.0),
    InverseGaussian(1.0, 2.0),
]


def test_first_moment_trivial_members():
    assert first_moment(Zero()) == 0.0
    assert first_moment(DiracAtom(0.5, 1.0)) == 0.5


def test_gamma_process_first_moment_matches_quadrature():
    m = GammaProcess(2.0, 4.0)
    quad, _ = integrate.quad(lambda z: 2.0 * math.exp(-4.0 * z), 0, np.inf)
    assert first_moment(m) == pytest.approx(0.5, abs=1e-12)
    assert quad == pytest.approx(0.5, abs=1e-10)


def test_pth_moment_examples():
    assert pth_moment(Zero(), 2.0) == 0.0
    assert pth_moment(CompoundPoissonExponential(1.0, 1.0), 2.0) == pytest.approx(2.0, rel=1e-12)
    assert pth_moment(DiracAtom(0.7, 1.0), 3.0) == pytest.approx(0.7)
    with pytest.raises(ValueError):
        pth_moment(Zero(), 1.0)


@pytest.mark.parametrize("m", CATALOG, ids=lambda m: f"{m.kind}{tuple(m.params().values())}")
@pytest.mark.parametrize("p", [1.0, 2.0, 3.5])
def test_closed_form_moments_match_quadrature(m, p):
    assert m.moment(p) == pytest.approx(m.moment_by_quadrature(p), rel=1e-8)


@pytest.mark.parametrize("m", CATALOG, ids=lambda m: m.kind)
def test_laplace_exponent_matches_quadrature(m):
    for u in (-1.3, 0.4j, -0.5 + 2.0j):
        re, _ = integrate.quad(lambda z: ((np.exp(u * z) - 1.0) * m.density(z)).real, 0, np.inf, limit=200)
        im, _ = integrate.quad(lambda z: ((np.exp(u * z) - 1.0) * m.density(z)).imag, 0, np.inf, limit=200)
        assert complex(m.laplace_exponent(u)) == pytest.approx(complex(re, im), abs=1e-8)
        d = 1e-5
        fd = (m.laplace_exponent(u + d) - m.laplace_exponent(u - d)) / (2 * d)
        assert complex(m.laplace_exponent_deriv(u)) == pytest.approx(complex(fd), abs=1e-6)


def test_split_examples():
    s = split(DiracAtom(0.3, 1.0), 0.5)
    assert (s.big_rate, s.small_mean) == (0.3, 0.0)
    s = split(DiracAtom(0.3, 1.0), 2.0)
    assert (s.big_rate, s.small_mean) == (0.0, pytest.approx(0.3))
    s = split(CompoundPoissonExponential(1.0, 1.0), 1.0)
    tail, _ = integrate.quad(lambda z: math.exp(-z), 1.0, np.inf)
    assert s.big_rate == pytest.approx(tail, rel=1e-10)
    assert s.big_rate == pytest.approx(0.36788, abs=1e-5)


def test_split_pieces_add_up():
    m = GammaDensity(-0.5, 2.0)
    s = m.split(0.1)
    big_mean, _ = integrate.quad(lambda z: z * m.density(z), 0.1, np.inf)
    assert s.small_mean + big_mean == pytest.approx(m.moment(1.0), rel=1e-8)
    with pytest.raises(ValueError):
        m.split(0.0)


def test_zero_increments_vanish():
    x = sample_increments(Zero(), 0.3, 1000, np.random.default_rng(0))
    assert np.all(x == 0.0)


@pytest.mark.parametrize("m", CATALOG + [DiracAtom(2.0, 0.5)], ids=lambda m: m.kind)
def test_increment_mean_within_three_se(m):
    dt = 0.05
    x = sample_increments(m, dt, 100_000, np.random.default_rng(11))
    assert np.all(x >= 0)
    se = x.std(ddof=1) / math.sqrt(x.size)
    assert abs(x.mean() - dt * m.moment(1.0)) < 3 * se


def test_gamma_increments_follow_gamma_law():
    g, lam, dt = 2.0, 4.0, 0.3
    x = GammaProcess(g, lam).sample_increments(dt, 10_000, np.random.default_rng(5))
    d = stats.kstest(x, stats.gamma(a=g * dt, scale=1 / lam).cdf).statistic
    assert d < 1.63 / math.sqrt(x.size)  # KS 1% critical value


def test_small_jump_split_sampling_keeps_the_mean():
    m = GammaDensity(-0.5, 2.0)
    x = m.sample_increments(0.05, 100_000, np.random.default_rng(3), upsilon=0.2)
    se = x.std(ddof=1) / math.sqrt(x.size)
    assert abs(x.mean() - 0.05 * m.moment(1.0)) < 4 * se


def test_record_round_trip_and_errors():
    for m in CATALOG + [Zero(), DiracAtom(0.5, 2.0)]:
        assert from_dict(m.to_dict()) == m
    with pytest.raises(ValueError, match="unknown"):
        from_dict({"kind": "Stable"})
    with pytest.raises(ValueError):
        from_dict({"kind": "GammaProcess", "gamma": 1.0})
    with pytest.raises(ValueError):
        GammaDensity(0.0, 1.0)
    with pytest.raises(ValueError):
        CompoundPoissonExponential(-1.0, 1.0)


def test_custom_density_reproduces_exponential_case():
    c = CustomDensity(lambda z: 2.0 * np.exp(-2.0 * z), decay_rate=2.0)
    ref = CompoundPoissonExponential(1.0, 2.0)
    assert c.moment(1.0) == pytest.approx(ref.moment(1.0), rel=1e-8)
    assert c.total_mass == pytest.approx(1.0, rel=1e-8)
    assert complex(c.laplace_exponent(-0.7 + 1.0j)) == pytest.approx(complex(ref.laplace_exponent(-0.7 + 1.0j)), abs=1e-8)


def test_custom_density_rejects_divergent_first_moment():
    # z m(z) ~ z^{-1.5} is not integrable at the origin
    with pytest.raises(ValueError, match="first moment"):
        CustomDensity(lambda z: z**-2.5 * np.exp(-z), decay_rate=1.0)
    with pytest.raises(ValueError):
        CustomDensity(lambda z: np.exp(-z), decay_rate=0.0)
