"""Bayesian adjustment models and their sampler."""

from .diagnostics import ess, rhat
from .fit import ConvergenceDiagnostic, ParameterDraws, SamplerConfig, dump_draws, fit
from .models import FORMULAS, ModelSpec, PriorPlan, autoscale_priors, model_from_formula

__all__ = ["ess", "rhat", "ConvergenceDiagnostic", "ParameterDraws", "SamplerConfig", "dump_draws",
           "fit", "FORMULAS", "ModelSpec", "PriorPlan", "autoscale_priors",
           "model_from_formula"]
