"""Simulation of the jump-type CIR process dY = (a - bY)dt + sigma sqrt(Y) dW + dJ.

Two schemes are available:

``exact``
    The diffusion part is advanced with its exact noncentral chi-square
    transition.  Jumps of finite-activity measures are inserted at their
    sampled times inside the step (so the scheme is exact in law); jumps of
    infinite-activity measures, or all jumps when ``jump_timing="step_end"``,
    are added at the end of the step.
``euler``
    Symmetrized Euler, ``Y' = |Y + (a - bY)h + sigma sqrt(Y) dW + dJ|``.

Paths keep their Brownian increments (implied ones for the exact scheme) and
jump marks so that likelihood quantities can be recomputed from storage.
"""

from __future__ import annotations

import csv
import enum
import io
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy import special, stats

from .levy_models import LevyMeasure, Zero

A3_THRESHOLD = (15.0 + math.sqrt(185.0)) / 4.0
SCHEMES = ("exact", "euler")


class Regime(str, enum.Enum):
    SUBCRITICAL = "Subcritical"
    CRITICAL = "Critical"
    SUPERCRITICAL = "Supercritical"


@dataclass(frozen=True)
class CirParams:
    """Model parameters (a, b, sigma, y0, m)."""

    a: float
    b: float
    sigma: float
    y0: float
    m: LevyMeasure = field(default_factory=Zero)

    def __post_init__(self):
        if not self.sigma > 0:
            raise ValueError("sigma must be positive")
        if self.a < 0:
            raise ValueError("a must be nonnegative")
        if self.y0 < 0:
            raise ValueError("y0 must be nonnegative")
        for name in ("a", "b", "sigma", "y0"):
            if not math.isfinite(getattr(self, name)):
                raise ValueError(f"{name} must be finite")

    @property
    def immigration(self) -> float:
        """a + int z m(dz), the total long-run inflow rate."""
        return self.a + self.m.moment(1.0)

    @property
    def a_ratio(self) -> float:
        return self.a / self.sigma**2

    def satisfies_a3(self) -> bool:
        return self.a_ratio > A3_THRESHOLD

    def with_b(self, b: float) -> "CirParams":
        return CirParams(self.a, b, self.sigma, self.y0, self.m)

    def with_y0(self, y0: float) -> "CirParams":
        return CirParams(self.a, self.b, self.sigma, y0, self.m)

    def with_m(self, m: LevyMeasure) -> "CirParams":
        return CirParams(self.a, self.b, self.sigma, self.y0, m)


def classify(p: CirParams) -> Regime:
    if p.b > 0:
        return Regime.SUBCRITICAL
    if p.b == 0:
        return Regime.CRITICAL
    return Regime.SUPERCRITICAL


def growth_factor(b, t):
    """(1 - exp(-b t)) / b, equal to t at b = 0; accurate for small |b t|."""
    b = np.asarray(b, dtype=float)
    t = np.asarray(t, dtype=float)
    bt = b * t
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.where(bt == 0, t, -np.expm1(-bt) / np.where(b == 0, 1.0, b))
    return out if out.ndim else float(out)


def mean_at(p: CirParams, t: float) -> float:
    """E[Y_t] = y0 e^{-bt} + (a + int z m) (1 - e^{-bt}) / b."""
    if t < 0:
        raise ValueError("t must be nonnegative")
    return float(p.y0 * math.exp(-p.b * t) + p.immigration * growth_factor(p.b, t))


def variance_at(p: CirParams, t: float, x: Optional[float] = None) -> float:
    """Var[Y_t] started from ``x`` (default y0)."""
    x = p.y0 if x is None else x
    s2 = p.sigma**2
    g1 = growth_factor(p.b, t)
    g2 = growth_factor(2 * p.b, t)
    return float(
        x * s2 * math.exp(-p.b * t) * g1 + p.immigration * s2 * g1**2 / 2.0 + p.m.moment(2.0) * g2
    )


# ---------------------------------------------------------------------------
# stepping kernels


def _jump_marks(m: LevyMeasure, dt: float, n: int, rng: np.random.Generator):
    """Jumps of one step for ``n`` paths.

    Returns ``(counts, offsets, sizes)`` where ``offsets`` and ``sizes`` are
    (n, K) arrays padded with ``dt`` and 0.  Infinite-activity measures are
    represented by a single aggregated mark at the step end.
    """
    if isinstance(m, Zero):
        return np.zeros(n, dtype=np.int64), np.empty((n, 0)), np.empty((n, 0))
    if not m.finite_activity:
        inc = m.sample_increments(dt, n, rng)
        counts = (inc > 0).astype(np.int64)
        return counts, np.full((n, 1), dt), inc[:, None]
    counts = rng.poisson(m.total_mass * dt, size=n)
    k = int(counts.max(initial=0))
    if k == 0:
        return counts, np.empty((n, 0)), np.empty((n, 0))
    live = np.arange(k)[None, :] < counts[:, None]
    offsets = np.where(live, rng.random((n, k)) * dt, dt)
    offsets.sort(axis=1)
    sizes = np.zeros((n, k))
    sizes[live] = m.sample_jump_sizes(int(live.sum()), rng)
    return counts, offsets, sizes


def _cir_transition(y, p: CirParams, dt, rng, uniforms=None):
    """Exact diffusion-CIR transition over ``dt`` (scalar or per-path array).

    Uses the Poisson mixture of gammas: Y' = 2k Gamma(df/2 + N), with
    N ~ Poisson(nc/2).  When ``uniforms`` (two arrays) are given the draw is a
    quantile transform, which is monotone in ``y`` (used for coupling).
    """
    dt = np.broadcast_to(np.asarray(dt, dtype=float), y.shape)
    out = y.copy()
    move = dt > 0
    if not move.any():
        return out
    yy, tt = y[move], dt[move]
    k = p.sigma**2 * growth_factor(p.b, tt) / 4.0
    lam = yy * np.exp(-p.b * tt) / (2.0 * k)
    shape0 = 2.0 * p.a / p.sigma**2
    if uniforms is None:
        n = rng.poisson(lam)
        out[move] = 2.0 * k * rng.gamma(shape0 + n)
    else:
        u1, u2 = uniforms[0][move], uniforms[1][move]
        n = stats.poisson.ppf(u1, lam)
        n = np.where(np.isnan(n), 0.0, n)
        shape = shape0 + n
        draw = np.where(shape > 0, special.gammaincinv(np.where(shape > 0, shape, 1.0), u2), 0.0)
        out[move] = 2.0 * k * draw
    return out


def _exact_step(y, p, dt, rng, counts, offsets, sizes, timing):
    if sizes.shape[1] == 0:
        return _cir_transition(y, p, dt, rng)
    if timing == "step_end" or not p.m.finite_activity:
        return _cir_transition(y, p, dt, rng) + sizes.sum(axis=1)
    y = y.copy()
    prev = np.zeros_like(y)
    for j in range(sizes.shape[1]):
        idx = counts > j
        y[idx] = _cir_transition(y[idx], p, offsets[idx, j] - prev[idx], rng) + sizes[idx, j]
        prev[idx] = offsets[idx, j]
    return _cir_transition(y, p, dt - prev, rng)


def _euler_step(y, p, dt, xi, dj):
    return np.abs(y + (p.a - p.b * y) * dt + p.sigma * np.sqrt(y) * xi + dj)


# ---------------------------------------------------------------------------
# single paths


@dataclass(frozen=True)
class SamplePath:
    """A simulated (or imported) trajectory on a uniform grid.

    ``dW`` holds Brownian increments (implied ones for the exact scheme; zero
    where the state is zero) and ``dJ`` the subordinator increment of each
    step.  ``jump_times``/``jump_sizes`` are the individual marks when known.
    """

    t: np.ndarray
    Y: np.ndarray
    dW: np.ndarray
    dJ: np.ndarray
    jump_times: Optional[np.ndarray] = None
    jump_sizes: Optional[np.ndarray] = None
    scheme: str = "exact"
    seed: Optional[int] = None

    def __post_init__(self):
        n = self.t.size - 1
        if n < 1 or self.Y.size != n + 1 or self.dW.size != n or self.dJ.size != n:
            raise ValueError("inconsistent path array sizes")
        if np.any(self.Y < 0):
            raise ValueError("path states must be nonnegative")

    @property
    def steps(self) -> int:
        return self.t.size - 1

    @property
    def dt(self) -> float:
        return float(self.t[1] - self.t[0])

    @property
    def T(self) -> float:
        return float(self.t[-1] - self.t[0])

    @property
    def y0(self) -> float:
        return float(self.Y[0])

    @property
    def y_T(self) -> float:
        return float(self.Y[-1])

    @property
    def J_T(self) -> float:
        if self.jump_sizes is not None:
            return float(np.sum(self.jump_sizes))
        return float(np.sum(self.dJ))

    @property
    def int_Y(self) -> float:
        """Left-Riemann approximation of the integral of Y over [0, T]."""
        return float(np.sum(self.Y[:-1]) * self.dt)

    @property
    def has_marks(self) -> bool:
        return self.jump_sizes is not None

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["t", "Y", "dW", "dJ"])
        dW = np.append(self.dW, np.nan)
        dJ = np.append(self.dJ, np.nan)
        for row in zip(self.t, self.Y, dW, dJ):
            w.writerow(["" if np.isnan(v) else repr(float(v)) for v in row])
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str) -> "SamplePath":
        """Read the ``t,Y,dW,dJ`` format; jump marks are not recoverable."""
        rows = list(csv.reader(io.StringIO(text)))
        if not rows or [h.strip() for h in rows[0]] != ["t", "Y", "dW", "dJ"]:
            raise ValueError("expected header t,Y,dW,dJ")
        data = rows[1:]
        t = np.array([float(r[0]) for r in data])
        Y = np.array([float(r[1]) for r in data])
        dW = np.array([float(r[2]) if r[2] else 0.0 for r in data[:-1]])
        dJ = np.array([float(r[3]) if r[3] else 0.0 for r in data[:-1]])
        return cls(t, Y, dW, dJ, scheme="imported")


def simulate_path(
    p: CirParams,
    T: float,
    steps: int,
    scheme: str = "exact",
    seed: Optional[int] = None,
    rng: Optional[np.random.Generator] = None,
    jump_timing: str = "exact",
) -> SamplePath:
    """Simulate one trajectory on ``steps`` uniform steps over [0, T]."""
    if steps < 1:
        raise ValueError("steps must be >= 1")
    if not T > 0:
        raise ValueError("T must be positive")
    if scheme not in SCHEMES:
        raise ValueError(f"unknown scheme {scheme!r}")
    if rng is None:
        rng = np.random.default_rng(seed)
    dt = T / steps
    Y = np.empty(steps + 1)
    dW = np.empty(steps)
    dJ = np.empty(steps)
    Y[0] = p.y0
    times, sizes_all = [], []
    y = np.array([p.y0])
    for k in range(steps):
        counts, offsets, sizes = _jump_marks(p.m, dt, 1, rng)
        jumps = sizes.sum()
        if scheme == "euler":
            xi = rng.normal(0.0, math.sqrt(dt), size=1)
            y = _euler_step(y, p, dt, xi, jumps)
            dW[k] = xi[0]
        else:
            prev = Y[k]
            y = _exact_step(y, p, dt, rng, counts, offsets, sizes, jump_timing)
            root = math.sqrt(prev)
            resid = y[0] - jumps - prev - (p.a - p.b * prev) * dt
            dW[k] = resid / (p.sigma * root) if root > 0 else 0.0
        Y[k + 1] = y[0]
        dJ[k] = jumps
        c = int(counts[0])
        if c:
            times.append(k * dt + offsets[0, :c])
            sizes_all.append(sizes[0, :c])
    jt = np.concatenate(times) if times else np.empty(0)
    js = np.concatenate(sizes_all) if sizes_all else np.empty(0)
    return SamplePath(np.linspace(0.0, T, steps + 1), Y, dW, dJ, jt, js, scheme, seed)


# ---------------------------------------------------------------------------
# ensembles


@dataclass(frozen=True)
class EnsembleSummary:
    """Per-path sufficient statistics for the continuous-observation likelihood.

    ``states`` holds the recorded grid (every ``record_every`` steps) when
    requested, with shape (n_paths, n_records).
    """

    T: float
    dt: float
    y0: float
    y_T: np.ndarray
    J_T: np.ndarray
    int_Y: np.ndarray
    states: Optional[np.ndarray] = None

    @property
    def n_paths(self) -> int:
        return self.y_T.size


def simulate_ensemble(
    p: CirParams,
    T: float,
    steps: int,
    n_paths: int,
    rng: np.random.Generator,
    scheme: str = "exact",
    record_every: int = 0,
    jump_timing: str = "exact",
) -> EnsembleSummary:
    """Simulate ``n_paths`` independent paths, vectorised across paths.

    Only the quantities needed by the likelihood formulas are kept, plus an
    optional record of the states every ``record_every`` steps.
    """
    if steps < 1 or not T > 0 or n_paths < 1:
        raise ValueError("need steps >= 1, T > 0 and n_paths >= 1")
    if scheme not in SCHEMES:
        raise ValueError(f"unknown scheme {scheme!r}")
    dt = T / steps
    y = np.full(n_paths, float(p.y0))
    jt = np.zeros(n_paths)
    iy = np.zeros(n_paths)
    rec = None
    if record_every:
        if steps % record_every:
            raise ValueError("record_every must divide steps")
        rec = np.empty((n_paths, steps // record_every + 1))
        rec[:, 0] = y
    sq = math.sqrt(dt)
    for k in range(steps):
        iy += y
        counts, offsets, sizes = _jump_marks(p.m, dt, n_paths, rng)
        if scheme == "euler":
            dj = sizes.sum(axis=1) if sizes.shape[1] else 0.0
            y = _euler_step(y, p, dt, rng.normal(0.0, sq, size=n_paths), dj)
        else:
            y = _exact_step(y, p, dt, rng, counts, offsets, sizes, jump_timing)
        if sizes.shape[1]:
            jt += sizes.sum(axis=1)
        if rec is not None and (k + 1) % record_every == 0:
            rec[:, (k + 1) // record_every] = y
    return EnsembleSummary(T, dt, float(p.y0), y, jt, iy * dt, rec)


def simulate_coupled(
    p: CirParams,
    m_alt: LevyMeasure,
    T: float,
    steps: int,
    rng: np.random.Generator,
    n_paths: int = 1,
):
    """Two exact-scheme paths sharing their diffusion randomness.

    Both paths use the same uniforms through quantile transforms that are
    monotone in the current state; jumps of ``p.m`` and ``m_alt`` are added at
    the step ends.  Returns the two state arrays of shape (n_paths, steps+1).
    """
    dt = T / steps
    ya = np.full(n_paths, float(p.y0))
    yb = ya.copy()
    pa, pb = p, p.with_m(m_alt)
    out_a = np.empty((n_paths, steps + 1))
    out_b = np.empty_like(out_a)
    out_a[:, 0], out_b[:, 0] = ya, yb
    for k in range(steps):
        u = (rng.random(n_paths), rng.random(n_paths))
        ja = pa.m.sample_increments(dt, n_paths, rng) if not isinstance(pa.m, Zero) else 0.0
        jb = pb.m.sample_increments(dt, n_paths, rng) if not isinstance(pb.m, Zero) else 0.0
        ya = _cir_transition(ya, pa, dt, rng, u) + ja
        yb = _cir_transition(yb, pb, dt, rng, u) + jb
        out_a[:, k + 1], out_b[:, k + 1] = ya, yb
    return out_a, out_b


# ---------------------------------------------------------------------------
# path functionals


@dataclass(frozen=True)
class FlowDerivatives:
    """Flow derivatives on one observation interval, on its fine grid."""

    t: np.ndarray
    dx: np.ndarray
    db: np.ndarray


def flow_derivatives(path: SamplePath, p: CirParams, k: int, substeps: int = 1) -> FlowDerivatives:
    """Evaluate d/dx X_t and d/db X_t on the k-th interval of ``substeps`` grid steps.

    d/dx X_t = exp{-b(t - t_k) - (sigma^2/8) int du/X + (sigma/2) int dB/sqrt(X)}
    d/db X_t = -int_{t_k}^t X_r (d/dx X_t) / (d/dx X_r) dr
    with left-point sums on the stored grid.
    """
    lo, hi = k * substeps, (k + 1) * substeps
    if k < 0 or hi > path.steps:
        raise ValueError("interval index out of range")
    X = path.Y[lo : hi + 1]
    if np.any(X[:-1] <= 0):
        raise ValueError("flow derivative undefined: nonpositive state on the interval")
    h = path.dt
    dB = path.dW[lo:hi]
    incr = -p.b * h - p.sigma**2 / 8.0 * h / X[:-1] + p.sigma / 2.0 * dB / np.sqrt(X[:-1])
    log_dx = np.concatenate(([0.0], np.cumsum(incr)))
    dx = np.exp(log_dx)
    acc = np.concatenate(([0.0], np.cumsum(X[:-1] / dx[:-1] * h)))
    db = -dx * acc
    return FlowDerivatives(path.t[lo : hi + 1], dx, db)


def time_average(path: SamplePath) -> float:
    """Left-Riemann approximation of (1/T) int_0^T Y ds."""
    return float(np.mean(path.Y[:-1]))
