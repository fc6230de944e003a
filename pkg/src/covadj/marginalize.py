"""G-computation of marginal treatment effects from conditional posterior draws.

For every posterior draw the fitted model is evaluated on two counterfactual
copies of the enrolled participants' covariates, one with everyone treated
and one with everyone on control, and the predictions are averaged over rows.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
from scipy.special import expit

from .design import design_matrix, has_interactions
from .inference.fit import ParameterDraws
from .splines import SplineBasis, i_spline_eval

log = logging.getLogger(__name__)

ESTIMANDS = {"continuous": "DM", "binary": "RR", "tte": "HR"}
NULL_VALUE = {"DM": 0.0, "RR": 1.0, "HR": 1.0}
UNRELIABLE_FRACTION = 0.01


@dataclass(frozen=True)
class MarginalPosterior:
    """Draws of a marginal estimand.

    ``draws`` keeps one entry per posterior draw; entries that could not be
    computed are NaN and counted in ``n_excluded``.
    """

    estimand: str
    draws: np.ndarray
    model: str = ""
    eval_time: float | None = None

    @property
    def n_excluded(self) -> int:
        return int(np.count_nonzero(~np.isfinite(self.draws)))

    @property
    def excluded_fraction(self) -> float:
        return self.n_excluded / self.draws.size if self.draws.size else 1.0

    @property
    def unreliable(self) -> bool:
        return self.excluded_fraction > UNRELIABLE_FRACTION

    @property
    def finite(self) -> np.ndarray:
        return self.draws[np.isfinite(self.draws)]

    def median(self) -> float:
        f = self.finite
        return float(np.median(f)) if f.size else float("nan")


def _counterfactual_designs(draws: ParameterDraws, X, names, arms=(1.0, 0.0)):
    X = np.asarray(X, dtype=float)
    ones = np.ones((X.shape[0], 1))
    D1 = np.hstack([ones, design_matrix(draws.design_terms, arms[0], X, names)])
    D0 = np.hstack([ones, design_matrix(draws.design_terms, arms[1], X, names)])
    return D1, D0


def marginal_dm(draws: ParameterDraws, X, names, arms=(1.0, 0.0)) -> MarginalPosterior:
    """Difference in means. Without interactions this is the treatment draw itself.

    ``arms`` gives the treatment values of the (numerator, denominator) copies;
    ``(0, 1)`` reverses the contrast.
    """
    if not has_interactions(draws.design_terms) and tuple(arms) == (1.0, 0.0):
        return MarginalPosterior("DM", draws.phi.copy(), draws.model)
    D1, D0 = _counterfactual_designs(draws, X, names, arms)
    contrast = D1.mean(axis=0) - D0.mean(axis=0)
    return MarginalPosterior("DM", draws.coefficients @ contrast, draws.model)


def marginal_rr(draws: ParameterDraws, X, names, arms=(1.0, 0.0)) -> MarginalPosterior:
    """Relative risk: mean treated risk over mean control risk."""
    D1, D0 = _counterfactual_designs(draws, X, names, arms)
    B = draws.coefficients
    p1 = expit(B @ D1.T).mean(axis=1)
    p0 = expit(B @ D0.T).mean(axis=1)
    bad = p0 < 1e-12
    with np.errstate(divide="ignore", invalid="ignore"):
        rr = np.where(bad, np.nan, p1 / np.where(bad, 1.0, p0))
    if bad.any():
        log.warning("relative risk: %d draw(s) with vanishing control risk excluded", int(bad.sum()))
    return MarginalPosterior("RR", rr, draws.model)


def _cloglog_survival(H: np.ndarray) -> np.ndarray:
    """``log(-log(mean(exp(-H))))`` per row of ``H``; NaN where the mean is 0 or 1."""
    F = (-np.expm1(-H)).mean(axis=1)
    S = 1.0 - F
    ok = (F > 0) & (S > 0)
    out = np.full(H.shape[0], np.nan)
    out[ok] = np.log(-np.log1p(-F[ok]))
    return out


def marginal_hr(draws: ParameterDraws, X, names, t: float,
                basis: SplineBasis | None = None, arms=(1.0, 0.0)) -> MarginalPosterior:
    """Marginal hazard ratio at time ``t`` via the cloglog survival contrast."""
    basis = basis or draws.basis
    if basis is None:
        raise ValueError("marginal_hr needs the spline basis used for the fit")
    I_t = i_spline_eval(basis, [t], clamp=True)[0]
    H0 = draws.psi @ I_t
    D1, D0 = _counterfactual_designs(draws, X, names, arms)
    B = draws.coefficients
    c1 = _cloglog_survival(H0[:, None] * np.exp(B @ D1.T))
    c0 = _cloglog_survival(H0[:, None] * np.exp(B @ D0.T))
    hr = np.exp(c1 - c0)
    n_bad = int(np.count_nonzero(~np.isfinite(hr)))
    if n_bad:
        log.warning("hazard ratio: %d draw(s) with degenerate marginal survival excluded", n_bad)
    return MarginalPosterior("HR", hr, draws.model, eval_time=float(t))


def marginalize(draws: ParameterDraws, X, names, t: float | None = None) -> MarginalPosterior:
    """Dispatch on the endpoint of ``draws``."""
    if draws.endpoint == "continuous":
        return marginal_dm(draws, X, names)
    if draws.endpoint == "binary":
        return marginal_rr(draws, X, names)
    if t is None:
        raise ValueError("time-to-event marginalization needs an evaluation time")
    return marginal_hr(draws, X, names, t)
