import math

import numpy as np
import pytest

from jcir import asymptotics_harness as ah
from jcir import inference
from jcir.cir_sim import CirParams, Regime
from jcir.levy_models import CompoundPoissonExponential

CP = CompoundPoissonExponential(1.0, 2.0)
SUB = CirParams(2.0, 1.0, 0.5, 2.5, CP)
CRIT = CirParams(2.0, 0.0, 0.5, 0.5, CP)
SUPER = CirParams(2.0, -0.5, 0.5, 1.0, CP)


def test_config_validation():
    with pytest.raises(ValueError, match="regime"):
        ah.ExperimentConfig(SUB, regime=Regime.CRITICAL)
    with pytest.raises(ValueError):
        ah.ExperimentConfig(CirParams(1.0, 1.0, 1.0, 1.0), observation="discrete")
    ok = ah.ExperimentConfig(CirParams(1.0, 1.0, 1.0, 1.0), observation="discrete", allow_outside_a3=True)
    assert ok.rate == pytest.approx(1 / math.sqrt(100.0))


@pytest.mark.parametrize("runner,p", [(ah.run_lan, SUB), (ah.run_laq, CRIT), (ah.run_lamn, SUPER)])
def test_zero_local_parameter_is_trivial(runner, p):
    rep = runner(ah.ExperimentConfig(p, u=0.0, replications=20))
    assert rep.passed
    assert np.all(rep.samples["log_lr"] == 0.0)


def test_limit_laws():
    law = ah.sample_limit_law(Regime.SUBCRITICAL, SUB, 1.0, 1000, 0)
    assert law.kind == "GaussianLAN" and law.I == pytest.approx(10.0)
    q = CirParams(1.5, 0.0, 0.7, 0.3)
    law = ah.sample_limit_law("Critical", q, 1.0, 4000, 1)
    assert np.all(law.I_samples > 0)
    se = law.I_samples.std(ddof=1) / math.sqrt(4000)
    assert abs(law.I_samples.mean() - q.a / (2 * q.sigma**2)) < 4 * se
    law = ah.sample_limit_law(Regime.SUPERCRITICAL, SUPER, 1.0, 1000, 2)
    assert np.all(law.V_samples > 0)
    with pytest.raises(ValueError):
        ah.sample_limit_law(Regime.SUBCRITICAL, SUB, 1.0, 10, 0)
    with pytest.raises(ValueError):
        ah.sample_limit_law(Regime.CRITICAL, SUB, 1.0, 1000, 0)


def test_limit_sampler_self_consistency():
    a = ah.sample_limit_law(Regime.CRITICAL, CRIT, 1.0, 2000, 11).log_lr(1.0)
    b = ah.sample_limit_law(Regime.CRITICAL, CRIT, 1.0, 2000, 12).log_lr(1.0)
    assert ah._ks_two(a, b)[1] > 0.01


def test_ks_gates_calibration():
    # 1000 same-law runs: the rejection rate must stay at or below 2% (nominal 1%)
    rng = np.random.default_rng(0)
    runs = 1000
    one = sum(ah._ks_one(rng.normal(size=300), 0.0, 1.0)[1] <= 0.01 for _ in range(runs))
    two = sum(ah._ks_two(rng.normal(size=300), rng.normal(size=1200))[1] <= 0.01 for _ in range(runs))
    assert one / runs <= 0.02 and two / runs <= 0.02


def test_lan_mean_scales_quadratically():
    base = ah.ExperimentConfig(SUB, T=20.0, steps=2000, replications=400, seed=3)
    m1 = ah.run_lan(base).mean
    m2 = ah.run_lan(ah.with_overrides(base, u=0.5)).mean
    assert m2 / m1 == pytest.approx(0.25, abs=0.05)


def test_lan_signature_moves_towards_one():
    short = ah.run_lan(ah.ExperimentConfig(SUB, u=3.0, T=2.0, steps=400, replications=4000, seed=1))
    long = ah.run_lan(ah.ExperimentConfig(SUB, u=3.0, T=50.0, steps=5000, replications=4000, seed=1))
    s, l = short.info["lan_signature"], long.info["lan_signature"]
    assert abs(l - 1) < abs(s - 1)


def test_continuous_identity_residual_reported():
    rep = ah.run_lan(ah.ExperimentConfig(SUB, T=10.0, steps=1000, replications=100))
    assert rep.info["max_identity_residual"] < 1e-12


def test_lamn_rate_sanity():
    cfg = ah.ExperimentConfig(SUPER, T=20.0, steps=4000, replications=200, seed=2, limit_replications=1000)
    rep = ah.run_lamn(cfg)
    assert rep.gates["rate_spread"]["pass"]
    # the subcritical rate 1/sqrt(T) makes the spread explode
    res = ah.replicate_log_lr(cfg, "lamn")
    U, I = res[1] / cfg.rate, res[2] / cfg.rate**2
    wrong = U / math.sqrt(20.0) - 0.5 * I / 20.0
    assert wrong.var() > 10 * float(np.median(I)) * cfg.rate**2 * 1e3


def test_v_law_boundary_case_with_absorption():
    p = CirParams(0.0, -0.5, 0.5, 0.05)
    rep = ah.v_law_check(p, M=2000, seed=0, horizon=20.0)
    assert 0 < np.mean(rep.samples["V"] == 0) < 1
    assert rep.passed


def test_ergodic_reports():
    rep = ah.ergodic_check(SUB, n=10_000, dt=0.05, seed=0, h="one")
    assert rep.mean == 1.0 and rep.passed
    rep = ah.ergodic_check(SUB, n=10_000, dt=0.05, seed=0)
    assert rep.passed
    diff = abs(rep.info["first_half"] - rep.info["second_half"])
    assert diff < 3 * math.sqrt(2 * 10) * rep.info["batch_se"] / math.sqrt(2)
    with pytest.raises(ValueError):
        ah.ergodic_check(CRIT)


def test_stable_clt_subcritical():
    rep = ah.stable_clt_check(SUB, seed=0, horizons=(50.0, 200.0), M=1000, dt=0.02)
    assert rep.passed, rep.gates


def test_stable_clt_supercritical():
    rep = ah.stable_clt_check(SUPER, seed=0, horizons=(20.0, 30.0), M=1000, dt=0.005, v_samples=2000)
    assert rep.passed, rep.gates


def test_girsanov_trivial_and_reported_spread():
    rep = ah.girsanov_unit_mean(SUB, 1.0, T=2.0, M=1000)
    assert rep.info["exp_mean"] == 1.0 and rep.passed
    near = ah.girsanov_unit_mean(SUB, 1.1, T=2.0, M=2000, steps=200)
    far = ah.girsanov_unit_mean(SUB, 1.5, T=2.0, M=2000, steps=200)
    assert far.info["exp_var"] > near.info["exp_var"]


def test_reports_are_deterministic_across_threads():
    cfg = ah.ExperimentConfig(SUB, T=10.0, steps=500, replications=300, block=40, seed=9)
    a = ah.run_lan(cfg)
    b = ah.run_lan(ah.with_overrides(cfg, threads=3))
    assert a.to_json() == b.to_json()
    assert a.samples_csv() == b.samples_csv()
    assert '"schema_version": 1' in a.to_json()


def test_scaling_matches_inference():
    cfg = ah.ExperimentConfig(CRIT, T=50.0)
    assert cfg.rate == inference.scaling_factor(Regime.CRITICAL, 50.0)
