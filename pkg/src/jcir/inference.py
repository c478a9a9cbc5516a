"""Likelihood objects for the growth-rate parameter b.

Continuous observation: with known a and sigma the log Girsanov density
between b and b~ only involves Y_T, the jump total J_T and int_0^T Y ds,

    log dP^{b~}/dP^{b} = -(b~ - b)/sigma^2 (Y_T - y0 - aT - J_T)
                         - (b~^2 - b^2)/(2 sigma^2) int Y ds.

Discrete observation: the log-likelihood is the sum of log transition
densities obtained by Fourier inversion.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy import optimize

from .affine_density import density_and_db
from .cir_sim import CirParams, Regime, SamplePath


@dataclass(frozen=True)
class ScoreInfo:
    """Scaled score U, scaled information I and the scaling factor used."""

    U: np.ndarray | float
    I: np.ndarray | float
    rate: float


@dataclass(frozen=True)
class MleResult:
    b_hat: float
    iterations: int = 0
    bracket: tuple = ()
    objective: float = float("nan")


@dataclass(frozen=True)
class DiscreteObs:
    """Observations Y_0..Y_n at the equidistant times k * dt."""

    dt: float
    values: np.ndarray = field(repr=False)

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=float)
        object.__setattr__(self, "values", vals)
        if not self.dt > 0:
            raise ValueError("dt must be positive")
        if vals.ndim != 1 or vals.size < 2:
            raise ValueError("need at least two observations")
        if np.any(vals < 0):
            raise ValueError("observations must be nonnegative")

    @property
    def n(self) -> int:
        return self.values.size - 1

    @property
    def horizon(self) -> float:
        return self.n * self.dt

    @classmethod
    def from_path(cls, path: SamplePath, every: int = 1) -> "DiscreteObs":
        return cls(path.dt * every, path.Y[::every].copy())


def scaling_factor(regime: Regime | str, horizon: float, b0: float = 0.0) -> float:
    """phi_T: 1/sqrt(T) (subcritical), 1/T (critical), e^{b0 T / 2} (supercritical)."""
    regime = Regime(regime)
    if regime is Regime.SUBCRITICAL:
        return 1.0 / math.sqrt(horizon)
    if regime is Regime.CRITICAL:
        return 1.0 / horizon
    return math.exp(b0 * horizon / 2.0)


def fisher_information(p: CirParams) -> float:
    """I(b0) = (a + int z m) / (sigma^2 b0) for b0 > 0."""
    if not p.b > 0:
        raise ValueError("the deterministic information exists only for b > 0")
    return p.immigration / (p.sigma**2 * p.b)


# ---------------------------------------------------------------------------
# continuous observation


def jump_sum(path, threshold: float = 4.0) -> float:
    """Total of the jumps of the path on [0, T].

    Stored jump marks are summed when present.  For imported data without
    marks, increments larger than ``threshold * sqrt(dt) * (1 + Y_k)`` are
    counted as jumps; this is an approximation.
    """
    if not isinstance(path, SamplePath):
        return path.J_T
    if path.has_marks:
        return float(np.sum(path.jump_sizes))
    inc = np.diff(path.Y)
    big = inc > threshold * math.sqrt(path.dt) * (1.0 + path.Y[:-1])
    return float(np.sum(inc[big]))


def _drift_residual(path, a: float):
    """Y_T - y0 - a T - J_T (arrays for ensemble summaries)."""
    return path.y_T - path.y0 - a * path.T - jump_sum(path)


def mle_continuous(path, a: float, sigma: Optional[float] = None):
    """b_hat = -(Y_T - y0 - aT - J_T) / int Y ds.

    ``sigma`` is accepted for interface symmetry; the estimator does not use it.
    Works elementwise on ensemble summaries.
    """
    iy = path.int_Y
    if np.any(np.asarray(iy) <= 0):
        raise ValueError("integral of Y vanishes; the estimator is undefined")
    b_hat = -_drift_residual(path, a) / iy
    if np.ndim(b_hat):
        return b_hat
    return MleResult(float(b_hat), 0, (), float("nan"))


def loglik_ratio_continuous(path, b: float, b_tilde: float, a: float, sigma: float):
    """log dP^{b~}/dP^{b} evaluated on the path (left-Riemann integral)."""
    s2 = sigma * sigma
    return -(b_tilde - b) / s2 * _drift_residual(path, a) - (b_tilde**2 - b**2) / (2.0 * s2) * path.int_Y


def score_info(path, b0: float, rate: float, a: float, sigma: float) -> ScoreInfo:
    """U = -(rate/sigma^2)(Y_T - y0 - aT + b0 int Y - J_T), I = rate^2 int Y / sigma^2."""
    s2 = sigma * sigma
    U = -(rate / s2) * (_drift_residual(path, a) + b0 * path.int_Y)
    I = rate**2 * path.int_Y / s2
    return ScoreInfo(U, I, rate)


# ---------------------------------------------------------------------------
# discrete observation


def _transition_pieces(obs: DiscreteObs, p: CirParams, with_db: bool):
    if not 2.0 * p.a > p.sigma**2:
        raise ValueError("discrete likelihood requires 2a > sigma^2")
    x, y = obs.values[:-1], obs.values[1:]
    dens, ddb = density_and_db(p, obs.dt, x, y, with_db=with_db)
    bad = np.flatnonzero(dens <= 0)
    if bad.size:
        k = int(bad[0])
        raise ValueError(f"transition density vanished at k={k} (x={x[k]:.6g}, y={y[k]:.6g})")
    return dens, ddb


def loglik_discrete(obs: DiscreteObs, p: CirParams) -> float:
    """sum_k log p^b(dt, Y_k, Y_{k+1}) with b = p.b."""
    dens, _ = _transition_pieces(obs, p, False)
    return float(np.sum(np.log(dens)))  # numpy sums pairwise


def score_discrete(obs: DiscreteObs, p: CirParams) -> float:
    """d/db of ``loglik_discrete``."""
    dens, ddb = _transition_pieces(obs, p, True)
    return float(np.sum(ddb / dens))


def loglik_ratio_discrete(obs: DiscreteObs, p: CirParams, b0: float, u: float, rate: float) -> float:
    """loglik(b0 + rate * u) - loglik(b0), with ``rate`` the scaling factor phi."""
    if u == 0:
        return 0.0
    return loglik_discrete(obs, p.with_b(b0 + rate * u)) - loglik_discrete(obs, p.with_b(b0))


def _pilot_estimate(obs: DiscreteObs, a: float, threshold: float = 4.0) -> float:
    Y = obs.values
    inc = np.diff(Y)
    jumps = inc[inc > threshold * math.sqrt(obs.dt) * (1.0 + Y[:-1])].sum()
    return float(-(Y[-1] - Y[0] - a * obs.horizon - jumps) / (Y[:-1].sum() * obs.dt))


def mle_discrete(
    obs: DiscreteObs,
    p: CirParams,
    interval: Optional[Sequence[float]] = None,
    tol: float = 1e-6,
) -> MleResult:
    """Maximise the discrete log-likelihood over b.

    The search interval (default: the continuous pilot estimate +/- 2) must
    show a sign change of the score.  The maximiser is then located with
    bounded Brent iterations (golden-section steps with parabolic
    acceleration) to tolerance ``tol``.
    """
    if interval is None:
        pilot = _pilot_estimate(obs, p.a)
        interval = (pilot - 2.0, pilot + 2.0)
    lo, hi = float(interval[0]), float(interval[1])
    if not lo < hi:
        raise ValueError("empty search interval")
    s_lo, s_hi = score_discrete(obs, p.with_b(lo)), score_discrete(obs, p.with_b(hi))
    if not (s_lo > 0 > s_hi):
        raise ValueError(f"maximizer not bracketed: score({lo:.4g})={s_lo:.4g}, score({hi:.4g})={s_hi:.4g}")
    res = optimize.minimize_scalar(
        lambda b: -loglik_discrete(obs, p.with_b(b)),
        bounds=(lo, hi),
        method="bounded",
        options={"xatol": tol},
    )
    return MleResult(float(res.x), int(res.nfev), (lo, hi), float(-res.fun))
