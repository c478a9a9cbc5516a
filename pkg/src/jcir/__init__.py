"""Jump-type CIR processes: simulation, transition densities, likelihood
inference for the growth rate b and Monte Carlo checks of its local
asymptotics."""

from .cir_sim import CirParams, Regime, classify, simulate_ensemble, simulate_path
from .levy_models import (
    CompoundPoissonExponential,
    CustomDensity,
    DiracAtom,
    GammaDensity,
    GammaProcess,
    InverseGaussian,
    LevyMeasure,
    Zero,
)

__all__ = [
    "CirParams",
    "Regime",
    "classify",
    "simulate_ensemble",
    "simulate_path",
    "LevyMeasure",
    "Zero",
    "DiracAtom",
    "CompoundPoissonExponential",
    "GammaProcess",
    "GammaDensity",
    "InverseGaussian",
    "CustomDensity",
]
