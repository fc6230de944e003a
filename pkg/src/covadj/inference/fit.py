"""Posterior sampling for the three outcome models."""

from __future__ import annotations

import csv
import logging
import os
from dataclasses import dataclass

import numpy as np

from ..design import design_matrix
from ..dgm import TrialDataset
from ..errors import FitError
from ..splines import SplineBasis, default_basis, i_spline_eval, m_spline_eval
from . import kernels
from .diagnostics import rhat
from .models import ModelSpec, PriorPlan, autoscale_priors

log = logging.getLogger(__name__)

INTERCEPT = "(Intercept)"
_FAMILY = {"continuous": kernels.GAUSSIAN, "binary": kernels.LOGISTIC,
           "tte": kernels.SPLINE_PH}
_DUMMY1 = np.zeros(1)
_DUMMY2 = np.zeros((1, 1))


@dataclass(frozen=True)
class SamplerConfig:
    chains: int = 3
    warmup: int = 1000
    keep: int = 1000
    int_time: float = 1.5
    max_steps: int = 256
    target_accept: float = 0.8
    rhat_threshold: float = 1.05
    init_radius: float = 2.0

    def __post_init__(self):
        if self.chains < 2:
            raise ValueError("at least two chains are needed for R-hat")
        if self.keep < 4 or self.warmup < 0:
            raise ValueError("keep must be >= 4 and warmup >= 0")
        if not 0 < self.target_accept < 1:
            raise ValueError("target_accept must be in (0, 1)")


@dataclass(frozen=True)
class ParameterDraws:
    """Posterior draws on the natural (uncentered) parameterization.

    ``values`` has shape ``(chains, kept, n_params)``; column names are
    ``(Intercept)``, ``A``, the model terms, then ``sigma`` (continuous) or
    ``psi[1]..psi[L]`` (time-to-event).
    """

    names: tuple[str, ...]
    values: np.ndarray
    design_terms: tuple[str, ...]
    endpoint: str
    model: str = ""
    basis: SplineBasis | None = None

    @property
    def n_draws(self) -> int:
        return self.values.shape[0] * self.values.shape[1]

    @property
    def flat(self) -> np.ndarray:
        return self.values.reshape(-1, self.values.shape[2])

    def __getitem__(self, name: str) -> np.ndarray:
        return self.flat[:, self.names.index(name)]

    @property
    def coefficients(self) -> np.ndarray:
        """``(S, 1 + len(design_terms))`` matrix of intercept and term coefficients."""
        return self.flat[:, :1 + len(self.design_terms)]

    @property
    def phi(self) -> np.ndarray:
        return self["A"]

    @property
    def psi(self) -> np.ndarray:
        if self.endpoint != "tte":
            raise AttributeError("psi only exists for the time-to-event model")
        return self.flat[:, 1 + len(self.design_terms):]

    @property
    def sigma2(self) -> np.ndarray:
        return self["sigma"] ** 2


@dataclass(frozen=True)
class ConvergenceDiagnostic:
    rhat: dict
    max_rhat: float
    n_divergent: int
    accept_rate: float
    step_size: tuple[float, ...]
    threshold: float = 1.05

    @property
    def converged(self) -> bool:
        return bool(self.max_rhat <= self.threshold)


@dataclass
class _Problem:
    family: int
    X: np.ndarray
    y: np.ndarray
    event: np.ndarray
    Mb: np.ndarray
    Ib: np.ndarray
    G: np.ndarray
    h: np.ndarray
    sc: np.ndarray
    loc: np.ndarray
    scale: np.ndarray
    dim: int

    def args(self):
        return (self.family, self.X, self.y, self.event, self.Mb, self.Ib, self.G,
                self.h, self.sc, self.loc, self.scale)

    def logp(self, theta):
        grad = np.empty_like(theta)
        return kernels.logp_grad(theta, *self.args(), grad), grad


def spline_basis_for(data: TrialDataset, spec: ModelSpec) -> SplineBasis:
    """Default knot layout for a time-to-event dataset."""
    time = np.asarray(data.time, dtype=float)
    event = np.asarray(data.event)
    return default_basis(time[event > 0], upper=float(time.max()),
                         degree=spec.spline_degree, n_interior=spec.spline_knots)


def build_problem(data: TrialDataset, spec: ModelSpec, prior: PriorPlan,
                  basis: SplineBasis | None = None) -> tuple[_Problem, SplineBasis | None]:
    D = design_matrix(spec.design_terms, data.A, data.X, data.names)
    Dc = D - prior.x_mean
    Z = np.column_stack([np.ones(data.n), Dc])
    P = Z.shape[1]
    loc = np.ascontiguousarray(prior.loc, dtype=float)
    scale = np.ascontiguousarray(prior.scale, dtype=float)
    family = _FAMILY[spec.endpoint]
    if family == kernels.GAUSSIAN:
        y = np.asarray(data.y, dtype=float)
        return _Problem(family, _DUMMY2, _DUMMY1, _DUMMY1, _DUMMY2, _DUMMY2,
                        Z.T @ Z, Z.T @ y, np.array([data.n, y @ y, prior.sigma_rate]),
                        loc, scale, P + 1), None
    if family == kernels.LOGISTIC:
        y = np.asarray(data.y, dtype=float)
        return _Problem(family, np.ascontiguousarray(Z), y, _DUMMY1, _DUMMY2, _DUMMY2,
                        _DUMMY2, _DUMMY1, _DUMMY1, loc, scale, P), None
    event = np.asarray(data.event, dtype=float)
    if basis is None:
        basis = spline_basis_for(data, spec)
    Mb = m_spline_eval(basis, data.time, clamp=True)
    Ib = i_spline_eval(basis, data.time, clamp=True)
    return _Problem(family, np.ascontiguousarray(Z), _DUMMY1, event, Mb, Ib, _DUMMY2,
                    _DUMMY1, np.array([prior.dirichlet]), loc, scale,
                    P + basis.L - 1), basis


def _initial_point(problem: _Problem, prior: PriorPlan, rng: np.random.Generator,
                   radius: float) -> np.ndarray:
    for _ in range(100):
        theta = rng.uniform(-radius, radius, problem.dim)
        theta[0] += prior.loc[0]
        if problem.family == kernels.GAUSSIAN:
            theta[-1] += np.log(prior.s_y)
        lp, grad = problem.logp(theta)
        if np.isfinite(lp) and np.all(np.isfinite(grad)):
            return theta
    raise FitError("could not find an initial point with finite log posterior")


def _to_natural(raw: np.ndarray, problem: _Problem, prior: PriorPlan) -> np.ndarray:
    """Undo centering and the softmax/log transforms, shape preserved."""
    P = len(prior.loc)
    out_cols = []
    b = raw[..., 1:P]
    beta0 = raw[..., 0] - b @ prior.x_mean
    out_cols.append(beta0[..., None])
    out_cols.append(b)
    if problem.family == kernels.GAUSSIAN:
        out_cols.append(np.exp(raw[..., P:P + 1]))
    elif problem.family == kernels.SPLINE_PH:
        z = raw[..., P:]
        full = np.concatenate([z, np.zeros(z.shape[:-1] + (1,))], axis=-1)
        full -= full.max(axis=-1, keepdims=True)
        e = np.exp(full)
        out_cols.append(e / e.sum(axis=-1, keepdims=True))
    return np.concatenate(out_cols, axis=-1)


def fit(data: TrialDataset, spec: ModelSpec, rng: np.random.Generator,
        sampler: SamplerConfig | None = None, prior: PriorPlan | None = None,
        basis: SplineBasis | None = None) -> tuple[ParameterDraws, ConvergenceDiagnostic]:
    """Sample the posterior of ``spec`` given ``data``.

    Runs ``sampler.chains`` chains sequentially, each discarding ``warmup``
    adaptation iterations. Non-convergence is reported through the diagnostic,
    never raised.
    """
    sampler = sampler or SamplerConfig()
    if data.n == 0:
        raise FitError("cannot fit an empty dataset")
    if spec.endpoint == "tte" and not np.any(np.asarray(data.event) > 0):
        raise FitError("time-to-event fit needs at least one observed event")
    prior = prior or autoscale_priors(data, spec)
    problem, basis = build_problem(data, spec, prior, basis)
    flag, end = kernels.adaptation_windows(sampler.warmup)
    n_iter = sampler.warmup + sampler.keep

    raw = np.empty((sampler.chains, sampler.keep, problem.dim))
    n_div = 0
    acc = []
    eps = []
    for c in range(sampler.chains):
        theta0 = _initial_point(problem, prior, rng, sampler.init_radius)
        z = rng.standard_normal((n_iter, problem.dim))
        u_acc = rng.random(n_iter)
        u_jit = rng.random(n_iter)
        draws, accept, divergent, _, step, _ = kernels.hmc_chain(
            theta0, sampler.warmup, sampler.keep, z, u_acc, u_jit, flag, end,
            sampler.int_time, sampler.max_steps, sampler.target_accept, *problem.args())
        raw[c] = draws
        n_div += int(divergent[sampler.warmup:].sum())
        acc.append(accept[sampler.warmup:].mean())
        eps.append(float(step))

    values = _to_natural(raw, problem, prior)
    if not np.all(np.isfinite(values)):
        bad = np.argwhere(~np.isfinite(values))[0]
        raise FitError(f"non-finite draw in model {spec.name}: chain {bad[0]}, "
                       f"draw {bad[1]}, unconstrained state {raw[bad[0], bad[1]].tolist()}")

    names = [INTERCEPT, *spec.design_terms]
    if spec.endpoint == "continuous":
        names.append("sigma")
    elif spec.endpoint == "tte":
        names += [f"psi[{k + 1}]" for k in range(basis.L)]
    r = rhat(values, split=True)
    diag = ConvergenceDiagnostic(
        rhat=dict(zip(names, map(float, r))), max_rhat=float(np.nanmax(r)),
        n_divergent=n_div, accept_rate=float(np.mean(acc)), step_size=tuple(eps),
        threshold=sampler.rhat_threshold)
    draws = ParameterDraws(tuple(names), values, spec.design_terms, spec.endpoint,
                           spec.name, basis)
    return draws, diag


def dump_draws(draws: ParameterDraws, path: str | os.PathLike, replicate: int,
               analysis_index: int) -> None:
    """Append draws in long format for offline audit."""
    new = not os.path.exists(path)
    with open(path, "a", newline="") as fh:
        w = csv.writer(fh)
        if new:
            w.writerow(["replicate", "analysis_index", "chain", "draw", "parameter", "value"])
        m, n, d = draws.values.shape
        for c in range(m):
            for s in range(n):
                for j in range(d):
                    w.writerow([replicate, analysis_index, c, s, draws.names[j],
                                repr(float(draws.values[c, s, j]))])
