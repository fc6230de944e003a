"""Adjustment model specifications and autoscaled priors."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from ..design import TREATMENT, design_matrix, parse_term
from ..dgm import ENDPOINTS, DgmSpec, TrialDataset
from ..errors import ConfigError, FitError

log = logging.getLogger(__name__)

FORMULAS = ("correct", "no_quad", "correct_noise", "correct_prior",
            "correct_strong_prior", "unadjusted")
STRENGTHS = ("default", "centered", "centered_strong")

# intercept prior sd for the log baseline-hazard scale of the spline model
TTE_INTERCEPT_SD = 20.0


@dataclass(frozen=True)
class ModelSpec:
    """One adjustment model.

    ``terms`` are the covariate terms besides treatment (``"A"`` is always
    included first). ``prior_center`` maps a term to the location used by the
    centered prior variants.
    """

    name: str
    endpoint: str
    terms: tuple[str, ...] = ()
    strength: str = "default"
    prior_center: tuple[tuple[str, float], ...] = ()
    dirichlet: float = 1.0
    spline_degree: int = 3
    spline_knots: int = 5

    def __post_init__(self):
        if self.endpoint not in ENDPOINTS:
            raise ConfigError(f"model {self.name}: unknown endpoint {self.endpoint!r}")
        if self.strength not in STRENGTHS:
            raise ConfigError(f"model {self.name}: unknown prior strength {self.strength!r}")
        if TREATMENT in self.terms:
            raise ConfigError(f"model {self.name}: treatment is implicit, do not list 'A'")
        for t in self.terms:
            parse_term(t)
        if len(set(self.terms)) != len(self.terms):
            raise ConfigError(f"model {self.name}: duplicate terms")
        if self.dirichlet <= 0:
            raise ConfigError(f"model {self.name}: dirichlet concentration must be > 0")
        if self.strength != "default":
            missing = [t for t in self.terms if t not in dict(self.prior_center)]
            if missing:
                raise ConfigError(f"model {self.name}: no prior center for {missing}")

    @property
    def design_terms(self) -> tuple[str, ...]:
        return (TREATMENT, *self.terms)

    @property
    def adjusted(self) -> bool:
        return bool(self.terms)


def model_from_formula(name: str, dgm: DgmSpec, **kw) -> ModelSpec:
    """Build one of the named adjustment models for ``dgm``."""
    prognostic = dgm.prognostic_terms()
    center = tuple((t, float(b)) for t, b in zip(dgm.terms, dgm.beta) if t in prognostic)
    if name == "correct":
        return ModelSpec(name, dgm.endpoint, prognostic, **kw)
    if name == "no_quad":
        terms = tuple(t for t in prognostic if parse_term(t)[0] != "square")
        return ModelSpec(name, dgm.endpoint, terms, **kw)
    if name == "correct_noise":
        return ModelSpec(name, dgm.endpoint, prognostic + dgm.noise_names(), **kw)
    if name == "correct_prior":
        return ModelSpec(name, dgm.endpoint, prognostic, "centered", center, **kw)
    if name == "correct_strong_prior":
        return ModelSpec(name, dgm.endpoint, prognostic, "centered_strong", center, **kw)
    if name == "unadjusted":
        return ModelSpec(name, dgm.endpoint, (), **kw)
    raise ConfigError(f"unknown model formula {name!r}; expected one of {FORMULAS}")


@dataclass(frozen=True)
class PriorPlan:
    """Normal priors on the centered scale plus the auxiliary prior.

    ``loc``/``scale`` cover ``(intercept, A, terms...)``. ``sigma_rate`` is the
    exponential rate of the residual sd (continuous only); ``dirichlet`` is the
    simplex concentration of the spline weights (time-to-event only).
    """

    loc: np.ndarray
    scale: np.ndarray
    ybar: float
    s_y: float
    s_x: np.ndarray
    strength: str = "default"
    sigma_rate: float | None = None
    dirichlet: float | None = None
    x_mean: np.ndarray = field(default=None, repr=False)


def autoscale_priors(data: TrialDataset, spec: ModelSpec) -> PriorPlan:
    """rstanarm-style priors scaled by the outcome and design column sds."""
    if data.n == 0:
        raise FitError("cannot build priors on an empty dataset")
    D = design_matrix(spec.design_terms, data.A, data.X, data.names)
    if data.n >= 2:
        s_x = D.std(axis=0, ddof=1)
    else:
        s_x = np.zeros(D.shape[1])
    const = ~(s_x > 0)
    if np.any(const):
        log.warning("model %s: constant design column(s) %s, using s_x = 1",
                    spec.name, [spec.design_terms[j] for j in np.flatnonzero(const)])
        s_x = np.where(const, 1.0, s_x)

    if spec.endpoint == "continuous":
        y = np.asarray(data.y, dtype=float)
        ybar = float(y.mean())
        s_y = float(y.std(ddof=1)) if data.n >= 2 else 0.0
        if not s_y > 0:
            log.warning("model %s: constant outcome, using s_y = 1", spec.name)
            s_y = 1.0
        icpt = (ybar, 2.5 * s_y)
    else:
        ybar, s_y = 0.0, 1.0
        icpt = (0.0, TTE_INTERCEPT_SD if spec.endpoint == "tte" else 2.5)

    loc = np.zeros(D.shape[1])
    scale = 2.5 * s_y / s_x
    if spec.strength != "default":
        center = dict(spec.prior_center)
        # treatment keeps the default prior; covariate terms move to their DGM values
        for j, term in enumerate(spec.design_terms[1:], start=1):
            loc[j] = center[term]
            if spec.strength == "centered_strong":
                scale[j] = s_y / s_x[j]
    return PriorPlan(
        loc=np.concatenate([[icpt[0]], loc]),
        scale=np.concatenate([[icpt[1]], scale]),
        ybar=ybar, s_y=s_y, s_x=s_x, strength=spec.strength,
        sigma_rate=1.0 / s_y if spec.endpoint == "continuous" else None,
        dirichlet=spec.dirichlet if spec.endpoint == "tte" else None,
        x_mean=D.mean(axis=0),
    )
