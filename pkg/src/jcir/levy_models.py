"""Lévy measures of the driving subordinator.

Each measure lives on (0, inf) and exposes closed-form moments, tail masses,
the jump part of the Laplace exponent and an increment sampler.  The measures
with a density of the form ``c * z**(beta - 1) * exp(-theta * z)`` share one
implementation of the incomplete-gamma bookkeeping.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from scipy import integrate, special


@dataclass(frozen=True)
class JumpSplit:
    """Small/big jump decomposition of a Lévy measure at a threshold.

    Attributes
    ----------
    threshold : float
        Split level upsilon; jumps strictly above it are "big".
    big_rate : float
        Mass of the measure on (threshold, inf).
    small_mean : float
        Integral of z over (0, threshold].
    small_var_bound : float
        Integral of z**2 over (0, threshold].
    """

    threshold: float
    big_rate: float
    small_mean: float
    small_var_bound: float


def _upper_gamma(beta: float, x: float) -> float:
    """Unnormalised upper incomplete gamma Gamma(beta, x) for beta > -1, x > 0."""
    if beta > 0:
        return float(special.gammaincc(beta, x) * special.gamma(beta))
    if beta == 0:
        return float(special.exp1(x))
    # Gamma(beta, x) = (Gamma(beta + 1, x) - x**beta e^{-x}) / beta
    up = special.gammaincc(beta + 1.0, x) * special.gamma(beta + 1.0)
    return float((up - x**beta * math.exp(-x)) / beta)


class LevyMeasure:
    """Base class; subclasses implement the catalog members."""

    kind: str = "Base"
    finite_activity: bool = True

    # -- interface filled in by subclasses -------------------------------
    def params(self) -> dict:
        raise NotImplementedError

    @property
    def total_mass(self) -> float:
        raise NotImplementedError

    @property
    def tail_rate(self) -> float:
        """Exponential decay rate of the jump-size tail (``inf`` for bounded support)."""
        raise NotImplementedError

    def moment(self, p: float) -> float:
        raise NotImplementedError

    def split(self, upsilon: float) -> JumpSplit:
        raise NotImplementedError

    def laplace_exponent(self, u):
        """Jump part of the immigration mechanism, int (e^{uz} - 1) m(dz), for Re u <= 0."""
        raise NotImplementedError

    def laplace_exponent_deriv(self, u):
        """int z e^{uz} m(dz)."""
        raise NotImplementedError

    def density(self, z):
        """Density of the measure w.r.t. Lebesgue measure, or None for atoms."""
        return None

    def sample_jump_sizes(self, n: int, rng: np.random.Generator) -> np.ndarray:
        raise NotImplementedError(f"{self.kind} has no finite-activity jump sampler")

    def _exact_increments(self, dt: float, count: int, rng: np.random.Generator):
        """Exact J_dt samples, or None when the kind needs splitting."""
        return None

    def _big_jumps(self, upsilon: float, n: int, rng: np.random.Generator) -> np.ndarray:
        raise NotImplementedError(f"{self.kind} cannot sample jumps above a threshold")

    # -- shared behaviour ------------------------------------------------
    def moment_by_quadrature(self, p: float) -> float:
        """Adaptive quadrature of int z^p m(dz) with a truncated exponential tail."""
        if self.density(1.0) is None:
            return self.moment(p)
        rate = self.tail_rate
        zmax = 1.0 + (2.0 * p + 60.0) / rate if np.isfinite(rate) else 1e3

        def f(z):
            return z**p * self.density(z)

        with warnings.catch_warnings():
            warnings.simplefilter("error", integrate.IntegrationWarning)
            try:
                lo, _ = integrate.quad(f, 0.0, 1.0, limit=200, epsabs=0, epsrel=1e-12)
                hi, _ = integrate.quad(f, 1.0, zmax, limit=200, epsabs=0, epsrel=1e-12)
            except integrate.IntegrationWarning as exc:
                raise ValueError(f"moment of order {p} does not converge: {exc}") from exc
        total = lo + hi
        if not np.isfinite(total):
            raise ValueError(f"moment of order {p} diverges")
        return float(total)

    @property
    def first_moment(self) -> float:
        return self.moment(1.0)

    def to_dict(self) -> dict:
        return {"kind": self.kind, **self.params()}

    def sample_increments(
        self,
        dt: float,
        count: int,
        rng: np.random.Generator,
        upsilon: Optional[float] = None,
    ) -> np.ndarray:
        """I.i.d. samples of the subordinator increment over a step ``dt``.

        Exact laws are used when available.  Otherwise jumps above ``upsilon``
        (default ``sqrt(dt)``) are simulated as a compound Poisson process and
        the jumps below it are replaced by their mean ``dt * small_mean``; the
        resulting L2 error is at most ``dt * small_var_bound``.
        """
        if dt <= 0:
            raise ValueError("time step must be positive")
        if count < 1:
            raise ValueError("count must be at least 1")
        exact = self._exact_increments(dt, count, rng)
        if exact is not None:
            return exact
        ups = math.sqrt(dt) if upsilon is None else float(upsilon)
        sp = self.split(ups)
        n = rng.poisson(sp.big_rate * dt, size=count)
        out = np.full(count, dt * sp.small_mean)
        total = int(n.sum())
        if total:
            sizes = self._big_jumps(ups, total, rng)
            owner = np.repeat(np.arange(count), n)
            out += np.bincount(owner, weights=sizes, minlength=count)
        return out


@dataclass(frozen=True)
class Zero(LevyMeasure):
    """The empty measure: no jumps at all."""

    kind = "Zero"

    def params(self) -> dict:
        return {}

    @property
    def total_mass(self) -> float:
        return 0.0

    @property
    def tail_rate(self) -> float:
        return math.inf

    def moment(self, p: float) -> float:
        return 0.0

    def split(self, upsilon: float) -> JumpSplit:
        _check_threshold(upsilon)
        return JumpSplit(upsilon, 0.0, 0.0, 0.0)

    def laplace_exponent(self, u):
        u = np.asarray(u)
        return np.zeros(u.shape, dtype=np.result_type(u, float))

    def laplace_exponent_deriv(self, u):
        return self.laplace_exponent(u)

    def sample_jump_sizes(self, n, rng):
        return np.zeros(n)

    def _exact_increments(self, dt, count, rng):
        return np.zeros(count)


@dataclass(frozen=True)
class DiracAtom(LevyMeasure):
    """Point mass ``rate`` at jump size ``location`` (a scaled Poisson process)."""

    rate: float
    location: float
    kind = "DiracAtom"

    def __post_init__(self):
        if self.rate < 0:
            raise ValueError("DiracAtom rate must be >= 0")
        if self.location <= 0:
            raise ValueError("DiracAtom location must be > 0")

    def params(self) -> dict:
        return {"rate": self.rate, "location": self.location}

    @property
    def total_mass(self) -> float:
        return self.rate

    @property
    def tail_rate(self) -> float:
        return math.inf

    def moment(self, p: float) -> float:
        return self.rate * self.location**p

    def split(self, upsilon: float) -> JumpSplit:
        _check_threshold(upsilon)
        if upsilon < self.location:
            return JumpSplit(upsilon, self.rate, 0.0, 0.0)
        return JumpSplit(upsilon, 0.0, self.moment(1), self.moment(2))

    def laplace_exponent(self, u):
        return self.rate * np.expm1(np.asarray(u) * self.location)

    def laplace_exponent_deriv(self, u):
        return self.rate * self.location * np.exp(np.asarray(u) * self.location)

    def sample_jump_sizes(self, n, rng):
        return np.full(n, self.location)

    def _exact_increments(self, dt, count, rng):
        return self.location * rng.poisson(self.rate * dt, size=count).astype(float)


@dataclass(frozen=True)
class _GammaKernel(LevyMeasure):
    """Measures with density ``coef * z**(beta-1) * exp(-theta*z)``."""

    def _kernel(self) -> tuple[float, float, float]:
        """Return (coef, beta, theta)."""
        raise NotImplementedError

    @property
    def tail_rate(self) -> float:
        return self._kernel()[2]

    def density(self, z):
        c, beta, theta = self._kernel()
        z = np.asarray(z, dtype=float)
        return c * z ** (beta - 1.0) * np.exp(-theta * z)

    @property
    def total_mass(self) -> float:
        c, beta, theta = self._kernel()
        if beta <= 0:
            return math.inf
        return c * special.gamma(beta) / theta**beta

    def moment(self, p: float) -> float:
        c, beta, theta = self._kernel()
        if beta + p <= 0:
            raise ValueError("moment diverges at the origin")
        return float(c * special.gamma(beta + p) / theta ** (beta + p))

    def _small_moment(self, upsilon: float, p: float) -> float:
        c, beta, theta = self._kernel()
        return float(self.moment(p) * special.gammainc(beta + p, theta * upsilon))

    def split(self, upsilon: float) -> JumpSplit:
        _check_threshold(upsilon)
        c, beta, theta = self._kernel()
        big = c * theta ** (-beta) * _upper_gamma(beta, theta * upsilon)
        return JumpSplit(upsilon, big, self._small_moment(upsilon, 1.0), self._small_moment(upsilon, 2.0))

    def _big_jumps(self, upsilon, n, rng):
        # Rejection from the shifted exponential upsilon + Exp(theta);
        # the acceptance ratio (z/upsilon)^(beta-1) is <= 1 when beta <= 1.
        c, beta, theta = self._kernel()
        if beta > 1:
            raise NotImplementedError("threshold sampling requires beta <= 1")
        out = np.empty(n)
        filled = 0
        while filled < n:
            need = n - filled
            z = upsilon + rng.exponential(1.0 / theta, size=2 * need + 8)
            keep = z[rng.random(z.size) < (z / upsilon) ** (beta - 1.0)][:need]
            out[filled : filled + keep.size] = keep
            filled += keep.size
        return out


@dataclass(frozen=True)
class CompoundPoissonExponential(_GammaKernel):
    """m(dz) = C * lam * exp(-lam z) dz: jumps at rate C with Exp(lam) sizes."""

    C: float
    lam: float
    kind = "CompoundPoissonExponential"

    def __post_init__(self):
        if self.C <= 0 or self.lam <= 0:
            raise ValueError("CompoundPoissonExponential needs C > 0 and lam > 0")

    def params(self) -> dict:
        return {"C": self.C, "lam": self.lam}

    def _kernel(self):
        return self.C * self.lam, 1.0, self.lam

    @property
    def total_mass(self) -> float:
        return self.C

    def laplace_exponent(self, u):
        u = np.asarray(u)
        return self.C * u / (self.lam - u)

    def laplace_exponent_deriv(self, u):
        u = np.asarray(u)
        return self.C * self.lam / (self.lam - u) ** 2

    def sample_jump_sizes(self, n, rng):
        return rng.exponential(1.0 / self.lam, size=n)

    def _exact_increments(self, dt, count, rng):
        n = rng.poisson(self.C * dt, size=count)
        return rng.gamma(n.astype(float), 1.0 / self.lam)


@dataclass(frozen=True)
class GammaProcess(_GammaKernel):
    """m(dz) = gamma * z^{-1} * exp(-lam z) dz; increments are gamma distributed."""

    gamma: float
    lam: float
    kind = "GammaProcess"
    finite_activity = False

    def __post_init__(self):
        if self.gamma <= 0 or self.lam <= 0:
            raise ValueError("GammaProcess needs gamma > 0 and lam > 0")

    def params(self) -> dict:
        return {"gamma": self.gamma, "lam": self.lam}

    def _kernel(self):
        return self.gamma, 0.0, self.lam

    def laplace_exponent(self, u):
        return -self.gamma * np.log1p(-np.asarray(u) / self.lam)

    def laplace_exponent_deriv(self, u):
        return self.gamma / (self.lam - np.asarray(u))

    def _exact_increments(self, dt, count, rng):
        return rng.gamma(self.gamma * dt, 1.0 / self.lam, size=count)


@dataclass(frozen=True)
class GammaDensity(_GammaKernel):
    """m(dz) = lam^alpha z^{alpha-1} e^{-lam z} / |Gamma(alpha)| dz with alpha > -1, alpha != 0.

    For alpha > 0 this is a compound Poisson process with unit rate and
    Gamma(alpha, lam) jumps; for alpha < 0 the measure has infinite mass.
    """

    alpha: float
    lam: float
    kind = "GammaDensity"

    def __post_init__(self):
        if not self.alpha > -1 or self.alpha == 0:
            raise ValueError("GammaDensity needs alpha in (-1, 0) or alpha > 0")
        if self.lam <= 0:
            raise ValueError("GammaDensity needs lam > 0")

    @property
    def finite_activity(self) -> bool:
        return self.alpha > 0

    def params(self) -> dict:
        return {"alpha": self.alpha, "lam": self.lam}

    def _kernel(self):
        return self.lam**self.alpha / abs(special.gamma(self.alpha)), self.alpha, self.lam

    def _sign(self) -> float:
        return 1.0 if self.alpha > 0 else -1.0

    def laplace_exponent(self, u):
        u = np.asarray(u)
        return self._sign() * ((self.lam / (self.lam - u)) ** self.alpha - 1.0)

    def laplace_exponent_deriv(self, u):
        u = np.asarray(u)
        return self._sign() * self.alpha * self.lam**self.alpha * (self.lam - u) ** (-self.alpha - 1.0)

    def sample_jump_sizes(self, n, rng):
        if self.alpha < 0:
            return super().sample_jump_sizes(n, rng)
        return rng.gamma(self.alpha, 1.0 / self.lam, size=n)

    def _exact_increments(self, dt, count, rng):
        if self.alpha < 0:
            return None
        n = rng.poisson(dt, size=count)
        return rng.gamma(self.alpha * n, 1.0 / self.lam)


@dataclass(frozen=True)
class InverseGaussian(_GammaKernel):
    """m(dz) = delta / sqrt(2 pi z^3) * exp(-gamma^2 z / 2) dz."""

    delta: float
    gamma: float
    kind = "InverseGaussian"
    finite_activity = False

    def __post_init__(self):
        if self.delta <= 0 or self.gamma <= 0:
            raise ValueError("InverseGaussian needs delta > 0 and gamma > 0")

    def params(self) -> dict:
        return {"delta": self.delta, "gamma": self.gamma}

    def _kernel(self):
        return self.delta / math.sqrt(2 * math.pi), -0.5, 0.5 * self.gamma**2

    def laplace_exponent(self, u):
        u = np.asarray(u)
        return self.delta * (self.gamma - np.sqrt(self.gamma**2 - 2.0 * u))

    def laplace_exponent_deriv(self, u):
        u = np.asarray(u)
        return self.delta / np.sqrt(self.gamma**2 - 2.0 * u)

    def _exact_increments(self, dt, count, rng):
        mean = self.delta * dt / self.gamma
        return rng.wald(mean, (self.delta * dt) ** 2, size=count)


@dataclass(frozen=True)
class CustomDensity(LevyMeasure):
    """User-supplied Lévy density with numerical moments.

    Parameters
    ----------
    func : callable
        Vectorised density on (0, inf).
    decay_rate : float
        Exponential decay rate of ``func`` used to truncate quadratures.
    big_jump_ppf : callable, optional
        ``big_jump_ppf(q, upsilon)`` returning quantiles of the normalised
        restriction of the density to (upsilon, inf).  Required for sampling.
    name : str
        Label used when the measure is serialised.
    """

    func: Callable = field(compare=False)
    decay_rate: float = 1.0
    big_jump_ppf: Optional[Callable] = field(default=None, compare=False)
    name: str = "custom"
    kind = "CustomDensity"
    finite_activity = False

    def __post_init__(self):
        if self.decay_rate <= 0:
            raise ValueError("decay_rate must be positive")
        self.moment(1.0)

    def params(self) -> dict:
        return {"name": self.name, "decay_rate": self.decay_rate}

    @property
    def tail_rate(self) -> float:
        return self.decay_rate

    def density(self, z):
        return self.func(np.asarray(z, dtype=float))

    def _zmax(self, p: float = 2.0) -> float:
        return 1.0 + (2.0 * p + 60.0) / self.decay_rate

    def _quad(self, f, a, b):
        with warnings.catch_warnings():
            warnings.simplefilter("error", integrate.IntegrationWarning)
            val, _ = integrate.quad(f, a, b, limit=200, epsabs=1e-14, epsrel=1e-11)
        return val

    def moment(self, p: float) -> float:
        try:
            return self.moment_by_quadrature(p)
        except (ValueError, integrate.IntegrationWarning) as exc:
            label = "finite first moment" if p == 1 else f"finite moment of order {p:g}"
            raise ValueError(f"custom density fails the {label} requirement: {exc}") from exc

    @property
    def total_mass(self) -> float:
        try:
            return self._quad(self.func, 0.0, 1.0) + self._quad(self.func, 1.0, self._zmax(0))
        except integrate.IntegrationWarning:
            return math.inf

    def split(self, upsilon: float) -> JumpSplit:
        _check_threshold(upsilon)
        zmax = max(self._zmax(), upsilon + 1.0)
        big = self._quad(self.func, upsilon, zmax)
        small1 = self._quad(lambda z: z * self.func(z), 0.0, upsilon)
        small2 = self._quad(lambda z: z * z * self.func(z), 0.0, upsilon)
        return JumpSplit(upsilon, big, small1, small2)

    def _complex_quad(self, g, u):
        zmax = self._zmax()
        out = []
        for uk in np.atleast_1d(np.asarray(u, dtype=complex)).ravel():
            re = self._quad(lambda z: (g(uk, z) * self.func(z)).real, 0.0, 1.0) + self._quad(
                lambda z: (g(uk, z) * self.func(z)).real, 1.0, zmax
            )
            im = self._quad(lambda z: (g(uk, z) * self.func(z)).imag, 0.0, 1.0) + self._quad(
                lambda z: (g(uk, z) * self.func(z)).imag, 1.0, zmax
            )
            out.append(re + 1j * im)
        res = np.array(out).reshape(np.shape(u))
        return res if np.iscomplexobj(u) else res.real

    def laplace_exponent(self, u):
        return self._complex_quad(lambda uk, z: np.expm1(uk * z), u)

    def laplace_exponent_deriv(self, u):
        return self._complex_quad(lambda uk, z: z * np.exp(uk * z), u)

    def _big_jumps(self, upsilon, n, rng):
        if self.big_jump_ppf is None:
            raise NotImplementedError("custom density has no inverse-CDF sampler (big_jump_ppf)")
        return np.asarray(self.big_jump_ppf(rng.random(n), upsilon), dtype=float)


def _check_threshold(upsilon: float) -> None:
    if not upsilon > 0:
        raise ValueError("split threshold must be positive")


_KINDS = {
    "Zero": Zero,
    "DiracAtom": DiracAtom,
    "CompoundPoissonExponential": CompoundPoissonExponential,
    "GammaProcess": GammaProcess,
    "GammaDensity": GammaDensity,
    "InverseGaussian": InverseGaussian,
}


def from_dict(record: dict) -> LevyMeasure:
    """Build a measure from a ``{kind: ..., <parameters>}`` record."""
    record = dict(record)
    kind = record.pop("kind", None)
    if kind not in _KINDS:
        raise ValueError(f"unknown Lévy measure kind {kind!r}; expected one of {sorted(_KINDS)}")
    try:
        return _KINDS[kind](**record)
    except TypeError as exc:
        raise ValueError(f"bad parameters for {kind}: {exc}") from exc


# Module-level helpers mirroring the operation names.

def first_moment(m: LevyMeasure) -> float:
    return m.moment(1.0)


def pth_moment(m: LevyMeasure, p: float) -> float:
    if not p > 1:
        raise ValueError("p must exceed 1")
    return m.moment(p)


def split(m: LevyMeasure, upsilon: float) -> JumpSplit:
    return m.split(upsilon)


def sample_increments(m: LevyMeasure, dt: float, count: int, rng: np.random.Generator, upsilon=None):
    return m.sample_increments(dt, count, rng, upsilon)
