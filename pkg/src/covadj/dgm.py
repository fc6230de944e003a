"""Data generating mechanisms for the three endpoints.

Covariates are jointly independent, treatment is assigned by simple
randomization, and outcomes follow

* continuous:     ``Y ~ Normal(xi, sigma^2)``
* binary:         ``Y ~ Bernoulli(expit(xi))``
* time-to-event:  ``T = -log(U) / (lambda * exp(xi))``, ``U ~ Uniform(0, 1)``

with ``xi = beta0 + phi * A + sum_j beta_j * term_j(X)``.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np
from scipy.special import expit

from .design import design_matrix, parse_term
from .errors import CalibrationError, ConfigError, ResamplingError

log = logging.getLogger(__name__)

ENDPOINTS = ("continuous", "binary", "tte")


@dataclass(frozen=True)
class TruncNormSpec:
    """Post-truncation summary targets for a stratified truncated normal covariate.

    ``xi``/``tau`` are the mean and sd of the pre-truncation normal generator.
    ``mean_tol``/``sd_tol`` are the calibration tolerances, in units of ``sigma``.
    """

    min: float
    q1: float
    q3: float
    max: float
    mu: float
    sigma: float
    q2: float | None = None
    xi: float | None = None
    tau: float | None = None
    mean_tol: float = 0.02
    sd_tol: float = 0.02

    def __post_init__(self):
        if self.q2 is None:
            object.__setattr__(self, "q2", 0.5 * (self.q1 + self.q3))
        if not (self.min < self.q1 < self.q2 < self.q3 < self.max):
            raise ConfigError(
                f"truncated normal needs min < q1 < q2 < q3 < max, got "
                f"{self.min}, {self.q1}, {self.q2}, {self.q3}, {self.max}")
        if self.sigma <= 0:
            raise ConfigError("truncated normal target sigma must be > 0")
        if self.tau is not None and self.tau <= 0:
            raise ConfigError("truncated normal tau must be > 0")

    @property
    def cuts(self) -> tuple[float, float, float, float, float]:
        return (self.min, self.q1, self.q2, self.q3, self.max)


@dataclass(frozen=True)
class CovariateSpec:
    name: str
    dist: str  # "bernoulli" | "normal" | "truncnorm"
    p: float | None = None
    trunc: TruncNormSpec | None = None
    role: str = "prognostic"  # or "noise"

    def __post_init__(self):
        if self.dist == "bernoulli":
            if self.p is None or not 0.0 <= self.p <= 1.0:
                raise ConfigError(f"covariate {self.name}: bernoulli p must be in [0, 1], got {self.p}")
        elif self.dist == "truncnorm":
            if self.trunc is None:
                raise ConfigError(f"covariate {self.name}: truncnorm needs a TruncNormSpec")
        elif self.dist != "normal":
            raise ConfigError(f"covariate {self.name}: unknown distribution {self.dist!r}")
        if self.role not in ("prognostic", "noise"):
            raise ConfigError(f"covariate {self.name}: role must be prognostic or noise")


@dataclass(frozen=True)
class DgmSpec:
    """One data generating mechanism.

    ``terms``/``beta`` hold the covariate part of the linear predictor, e.g.
    ``("x1", "x2", "x3", "x3^2", "x5")``; the squared term reuses column
    ``x3``. ``beta0`` is the intercept (calibrated for binary endpoints).
    """

    endpoint: str
    covariates: tuple[CovariateSpec, ...]
    terms: tuple[str, ...]
    beta: tuple[float, ...]
    beta0: float = 0.0
    p_ctr: float | None = None
    lam: float | None = None
    sigma: float | None = None
    n_max: int = 100
    oversample: int = 250

    def __post_init__(self):
        if self.endpoint not in ENDPOINTS:
            raise ConfigError(f"unknown endpoint {self.endpoint!r}")
        if len(self.terms) != len(self.beta):
            raise ConfigError("DGM terms and beta must have equal length")
        if self.endpoint == "binary" and (self.p_ctr is None or not 0 < self.p_ctr < 1):
            raise ConfigError("binary DGM needs p_ctr in (0, 1)")
        if self.endpoint == "tte" and (self.lam is None or self.lam <= 0):
            raise ConfigError("time-to-event DGM needs lam > 0")
        if self.endpoint == "continuous" and (self.sigma is None or self.sigma <= 0):
            raise ConfigError("continuous DGM needs sigma > 0")
        if self.n_max < 1:
            raise ConfigError("n_max must be >= 1")
        names = self.names
        if len(set(names)) != len(names):
            raise ConfigError("duplicate covariate names")
        roles = {c.name: c.role for c in self.covariates}
        for term, b in zip(self.terms, self.beta):
            kind, cov = parse_term(term)
            if kind not in ("main", "square"):
                raise ConfigError(f"DGM term {term!r}: only main and squared covariate terms allowed")
            if cov not in roles:
                raise ConfigError(f"DGM term {term!r} references unknown covariate {cov!r}")
            if roles[cov] == "noise" and b != 0:
                raise ConfigError(f"noise covariate {cov!r} has nonzero coefficient")

    @property
    def names(self) -> tuple[str, ...]:
        return tuple(c.name for c in self.covariates)

    @property
    def beta_star(self) -> tuple[float, ...]:
        return (self.beta0, *self.beta)

    def prognostic_terms(self) -> tuple[str, ...]:
        return tuple(t for t, b in zip(self.terms, self.beta) if b != 0)

    def noise_names(self) -> tuple[str, ...]:
        return tuple(c.name for c in self.covariates if c.role == "noise")

    def with_intercept(self, beta0: float) -> "DgmSpec":
        return replace(self, beta0=float(beta0))


@dataclass(frozen=True)
class TrialDataset:
    """Per-participant records, rows in enrollment order.

    Continuous and binary data carry ``y``; time-to-event data carry
    ``time`` (event or censoring time since enrollment) and ``event``
    (1 observed, 0 censored).
    """

    A: np.ndarray
    X: np.ndarray
    names: tuple[str, ...]
    y: np.ndarray | None = None
    time: np.ndarray | None = None
    event: np.ndarray | None = None
    enroll_time: np.ndarray | None = None

    @property
    def n(self) -> int:
        return int(self.A.shape[0])

    def subset(self, idx) -> "TrialDataset":
        def pick(a):
            return None if a is None else a[idx]
        return TrialDataset(self.A[idx], self.X[idx], self.names, pick(self.y),
                            pick(self.time), pick(self.event), pick(self.enroll_time))


# ---------------------------------------------------------------------------
# covariates


def _stratum_counts(n: int) -> list[int]:
    base, rem = divmod(n, 4)
    return [base + (1 if s < rem else 0) for s in range(4)]


def _stratified_pick(pool: np.ndarray, spec: TruncNormSpec, n: int,
                     rng: np.random.Generator | None) -> np.ndarray:
    """Take ``n/4`` pool values from each quartile stratum.

    The pool is i.i.d., so taking the first members of a stratum is a simple
    random sample of it. Short strata are filled with replacement.
    """
    lo, q1, q2, q3, hi = spec.cuts
    pool = pool[(pool >= lo) & (pool <= hi)]
    strata = np.searchsorted(np.array([q1, q2, q3]), pool, side="left")
    parts = []
    for s, need in enumerate(_stratum_counts(n)):
        members = pool[strata == s]
        if need == 0:
            continue
        if members.size == 0:
            raise ResamplingError(
                f"stratum {s} of [{lo}, {hi}] is empty after truncation; "
                f"increase the oversample factor or revise xi/tau")
        if members.size < need:
            log.warning("stratum %d has %d members for %d draws; resampling with replacement",
                        s, members.size, need)
            if rng is None:
                idx = np.arange(need) % members.size
            else:
                idx = rng.integers(0, members.size, need)
            parts.append(members[idx])
        else:
            parts.append(members[:need])
    return np.concatenate(parts)


def sample_truncated_normal(spec: TruncNormSpec, n: int, rng: np.random.Generator,
                            oversample: int = 250, xi: float | None = None,
                            tau: float | None = None) -> np.ndarray:
    """Draw ``n`` values whose quartiles match ``(q1, q2, q3)`` by construction.

    A pool of ``oversample * n`` draws from ``Normal(xi, tau^2)`` is truncated
    to ``[min, max]``; a quarter of the output is then taken from each of the
    strata ``[min, q1]``, ``(q1, q2]``, ``(q2, q3]``, ``(q3, max]``.
    """
    xi = spec.xi if xi is None else xi
    tau = spec.tau if tau is None else tau
    if xi is None or tau is None:
        raise ConfigError("truncated normal needs xi and tau; run fit_truncation first")
    if tau <= 0:
        raise ConfigError("tau must be > 0")
    if n < 1:
        raise ConfigError("n must be >= 1")
    pool = xi + tau * rng.standard_normal(int(oversample) * n)
    out = _stratified_pick(pool, spec, n, rng)
    return rng.permutation(out)


@dataclass(frozen=True)
class TruncationFit:
    xi: float
    tau: float
    mean: float
    sd: float
    iterations: int


def fit_truncation(spec: TruncNormSpec, rng: np.random.Generator, *,
                   start: tuple[float, float] | None = None, n_ref: int = 100_000,
                   oversample: int = 20, damping: float = 0.5,
                   max_iter: int = 500) -> TruncationFit:
    """Find generator ``(xi, tau)`` whose stratified output matches ``mu``/``sigma``.

    Damped moment matching: ``xi += damping * (mu - mean)`` and
    ``tau *= (sigma / sd) ** damping``, each applied only while its moment is
    outside tolerance. The same standard-normal pool is reused across
    iterations so the achieved moments are a deterministic function of
    ``(xi, tau)``.

    Raises
    ------
    CalibrationError
        If both moments are not within tolerance after ``max_iter`` updates.
    """
    if start is None:
        start = (spec.xi if spec.xi is not None else spec.mu,
                 spec.tau if spec.tau is not None else spec.sigma)
    xi, tau = float(start[0]), float(start[1])
    z = rng.standard_normal(int(oversample) * n_ref)
    mean_tol = spec.mean_tol * spec.sigma
    sd_tol = spec.sd_tol * spec.sigma
    for it in range(max_iter + 1):
        try:
            vals = _stratified_pick(xi + tau * z, spec, n_ref, None)
        except ResamplingError as exc:
            raise CalibrationError(f"truncation fit left an empty stratum at xi={xi:.4g}, "
                                   f"tau={tau:.4g}: {exc}") from exc
        m, s = float(vals.mean()), float(vals.std(ddof=1))
        mean_ok = abs(m - spec.mu) <= mean_tol
        sd_ok = abs(s - spec.sigma) <= sd_tol
        if mean_ok and sd_ok:
            return TruncationFit(xi, tau, m, s, it)
        if it == max_iter:
            break
        if not mean_ok:
            xi += damping * (spec.mu - m)
        if not sd_ok:
            tau *= (spec.sigma / s) ** damping
    raise CalibrationError(
        f"truncation fit did not converge in {max_iter} iterations: "
        f"mean residual {m - spec.mu:+.4g}, sd residual {s - spec.sigma:+.4g} "
        f"(xi={xi:.4g}, tau={tau:.4g})")


def generate_covariates(spec: DgmSpec, n: int, rng: np.random.Generator
                        ) -> tuple[np.ndarray, np.ndarray]:
    """Return ``(A, X)``: treatment ~ Bernoulli(0.5) and the covariate matrix.

    Columns of ``X`` follow ``spec.covariates``; squared terms are not
    materialized.
    """
    if n < 1:
        raise ConfigError("n must be >= 1")
    A = (rng.random(n) < 0.5).astype(float)
    X = np.empty((n, len(spec.covariates)))
    for j, cov in enumerate(spec.covariates):
        if cov.dist == "bernoulli":
            X[:, j] = rng.random(n) < cov.p
        elif cov.dist == "normal":
            X[:, j] = rng.standard_normal(n)
        else:
            X[:, j] = sample_truncated_normal(cov.trunc, n, rng, oversample=spec.oversample)
    return A, X


# ---------------------------------------------------------------------------
# outcomes


def linear_predictor(spec: DgmSpec, A: np.ndarray, X: np.ndarray, phi: float) -> np.ndarray:
    xi = spec.beta0 + phi * np.asarray(A, dtype=float)
    if spec.terms:
        xi = xi + design_matrix(spec.terms, A, X, spec.names) @ np.asarray(spec.beta)
    return xi


def exponential_time(u, lam: float, xi) -> np.ndarray:
    """Inverse-transform draw ``S^{-1}(u)`` for hazard ``lam * exp(xi)``."""
    return -np.log(u) / (lam * np.exp(xi))


def generate_outcomes(spec: DgmSpec, A: np.ndarray, X: np.ndarray, phi: float,
                      rng: np.random.Generator) -> np.ndarray:
    """Outcome vector: ``y`` for continuous/binary, uncensored event times for TTE."""
    xi = linear_predictor(spec, A, X, phi)
    n = xi.shape[0]
    if spec.endpoint == "continuous":
        return xi + spec.sigma * rng.standard_normal(n)
    if spec.endpoint == "binary":
        return (rng.random(n) < expit(xi)).astype(float)
    u = rng.random(n)
    u[u == 0.0] = np.finfo(float).tiny
    return exponential_time(u, spec.lam, xi)


# ---------------------------------------------------------------------------
# calibration and ascertainment


@dataclass(frozen=True)
class InterceptCalibration:
    beta0: float
    mc_se: float
    n_datasets: int
    roots: np.ndarray = field(repr=False)


def _bisect_intercept(offset: np.ndarray, target: float, lo: float, hi: float,
                      tol: float, max_iter: int = 400) -> float:
    def f(b):
        return float(np.sum(expit(b + offset))) - target

    flo, fhi = f(lo), f(hi)
    if flo > 0 or fhi < 0:
        raise CalibrationError(
            f"no sign change for the intercept in [{lo}, {hi}]: f(lo)={flo:.4g}, f(hi)={fhi:.4g}")
    for _ in range(max_iter):
        mid = 0.5 * (lo + hi)
        fm = f(mid)
        if abs(fm) <= tol or mid in (lo, hi):
            return mid
        if fm < 0:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def calibrate_intercept(spec: DgmSpec, rng: np.random.Generator, *, n_datasets: int = 5000,
                        n_per: int = 5000, bracket: tuple[float, float] = (-20.0, 20.0),
                        tol: float = 1e-8) -> InterceptCalibration:
    """Intercept giving marginal control event risk ``p_ctr``.

    For each generated dataset the root of
    ``sum_{control} expit(b + x_i beta) - l * p_ctr`` is found by bisection;
    the calibrated intercept is the mean of the roots.
    """
    if spec.endpoint != "binary":
        raise ConfigError("intercept calibration applies to the binary endpoint only")
    roots = np.empty(n_datasets)
    beta = np.asarray(spec.beta)
    for d in range(n_datasets):
        A, X = generate_covariates(spec, n_per, rng)
        ctrl = A == 0
        if spec.terms:
            offset = design_matrix(spec.terms, A[ctrl], X[ctrl], spec.names) @ beta
        else:
            offset = np.zeros(int(ctrl.sum()))
        roots[d] = _bisect_intercept(offset, offset.size * spec.p_ctr, *bracket, tol)
    se = float(roots.std(ddof=1) / math.sqrt(n_datasets)) if n_datasets > 1 else 0.0
    return InterceptCalibration(float(roots.mean()), se, n_datasets, roots)


@dataclass(frozen=True)
class Ascertainment:
    gamma: float
    mc_se: float
    n_used: int
    n_skipped: int


def ascertain_marginal_estimand(spec: DgmSpec, phi: float, rng: np.random.Generator, *,
                                n_datasets: int = 5000, n_per: int = 5000,
                                horizon: float = 75.0) -> Ascertainment:
    """Large-sample value of the marginal estimand for conditional effect ``phi``.

    Binary: mean over datasets of the ratio of arm event fractions.
    Time-to-event: mean over datasets of
    ``exp(log(-log S1) - log(-log S0))`` with ``Sa`` the empirical fraction
    of arm ``a`` surviving past ``horizon``. The continuous difference in
    means is collapsible, so ``phi`` is returned directly.
    """
    if spec.endpoint == "continuous":
        return Ascertainment(float(phi), 0.0, 0, 0)
    vals = []
    skipped = 0
    for _ in range(n_datasets):
        A, X = generate_covariates(spec, n_per, rng)
        out = generate_outcomes(spec, A, X, phi, rng)
        trt, ctl = A == 1, A == 0
        if spec.endpoint == "binary":
            p1, p0 = out[trt].mean(), out[ctl].mean()
            if p1 == 0 or p0 == 0:
                skipped += 1
                continue
            vals.append(p1 / p0)
        else:
            s1, s0 = np.mean(out[trt] > horizon), np.mean(out[ctl] > horizon)
            if s1 in (0.0, 1.0) or s0 in (0.0, 1.0):
                skipped += 1
                continue
            vals.append(math.exp(math.log(-math.log(s1)) - math.log(-math.log(s0))))
    if not vals:
        raise CalibrationError("every ascertainment dataset was skipped")
    vals = np.asarray(vals)
    se = float(vals.std(ddof=1) / math.sqrt(vals.size)) if vals.size > 1 else 0.0
    if skipped:
        log.info("ascertainment skipped %d of %d datasets", skipped, n_datasets)
    return Ascertainment(float(vals.mean()), se, int(vals.size), skipped)


def truncated_columns(spec: DgmSpec) -> list[int]:
    return [j for j, c in enumerate(spec.covariates) if c.dist == "truncnorm"]


def with_fitted_truncation(spec: DgmSpec, rng: np.random.Generator) -> DgmSpec:
    """Copy of ``spec`` whose truncated covariates carry fitted ``(xi, tau)``."""
    covs = []
    for c in spec.covariates:
        if c.dist == "truncnorm":
            fit = fit_truncation(c.trunc, rng)
            c = replace(c, trunc=replace(c.trunc, xi=fit.xi, tau=fit.tau))
        covs.append(c)
    return replace(spec, covariates=tuple(covs))


def covariate_names(specs: Sequence[CovariateSpec]) -> tuple[str, ...]:
    return tuple(c.name for c in specs)
