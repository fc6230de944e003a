"""One adaptive trial: staged enrollment, interim fits and the superiority rule."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .dgm import DgmSpec, TrialDataset, generate_covariates, generate_outcomes
from .errors import AnalysisError, ConfigError, CovadjError
from .inference.fit import SamplerConfig, dump_draws, fit
from .inference.models import ModelSpec
from .marginalize import MarginalPosterior, marginalize
from .splines import default_basis

log = logging.getLogger(__name__)

SUPERIOR_INTERIM = "superior_at_interim"
SUPERIOR_FINAL = "superior_at_final"
NOT_SUPERIOR = "not_superior"


@dataclass(frozen=True)
class InterimSchedule:
    mode: str
    step: int

    def __post_init__(self):
        if self.mode not in ("per_enrollment", "per_events"):
            raise ConfigError(f"unknown schedule mode {self.mode!r}")
        if self.step < 1:
            raise ConfigError("schedule step must be >= 1")


@dataclass(frozen=True)
class DesignSpec:
    """Decision rule and interim schedule.

    Superiority is declared when ``T > u`` where ``T`` is the posterior
    probability that the marginal effect lies on the ``direction`` side of
    ``gamma0``.
    """

    schedule: InterimSchedule
    n_max: int
    u: float = 0.99
    gamma0: float = 0.0
    direction: str = "less"
    horizon: float = 75.0
    enroll_end: float = 50.0

    def __post_init__(self):
        if not 0 < self.u < 1:
            raise ConfigError(f"threshold u must be in (0, 1), got {self.u}")
        if self.direction not in ("less", "greater"):
            raise ConfigError(f"direction must be 'less' or 'greater', got {self.direction!r}")
        if self.n_max < 1:
            raise ConfigError("n_max must be >= 1")
        if self.schedule.mode == "per_enrollment" and self.schedule.step > self.n_max:
            raise ConfigError("schedule step exceeds n_max")
        if not 0 < self.enroll_end <= self.horizon:
            raise ConfigError("need 0 < enroll_end <= horizon")


@dataclass(frozen=True)
class Analysis:
    index: int          # 1-based
    n_enrolled: int
    time: float | None  # calendar time (time-to-event only)
    final: bool


@dataclass
class TrialResult:
    """Outcome of one replicate for one model and effect size."""

    decision: str
    stop_analysis: int
    n_analyses: int
    n_enrolled: int
    T: list = field(default_factory=list)
    n_at_analysis: list = field(default_factory=list)
    median: float = float("nan")
    mean: float = float("nan")
    rmse: float = float("nan")
    stop_time: float | None = None
    n_events: int | None = None
    n_nonconverged: int = 0
    max_rhat: float = float("nan")
    excluded_fraction: float = 0.0
    unreliable: bool = False
    errors: list = field(default_factory=list)

    @property
    def superior(self) -> bool:
        return self.decision in (SUPERIOR_INTERIM, SUPERIOR_FINAL)

    @property
    def stopped_early(self) -> bool:
        return self.decision == SUPERIOR_INTERIM


def posterior_prob_superiority(mp: MarginalPosterior, design: DesignSpec) -> float:
    """Fraction of finite draws strictly on the alternative side of ``gamma0``."""
    d = mp.finite
    if d.size == 0:
        raise AnalysisError("all marginal draws were excluded")
    if design.direction == "less":
        return float(np.count_nonzero(d < design.gamma0)) / d.size
    return float(np.count_nonzero(d > design.gamma0)) / d.size


def rmse(draws: np.ndarray, gamma_true: float) -> float:
    """Root posterior expected squared error of the draws about ``gamma_true``."""
    d = np.asarray(draws, dtype=float)
    d = d[np.isfinite(d)]
    return float(np.sqrt(np.mean((d - gamma_true) ** 2)))


# ---------------------------------------------------------------------------
# data and schedule


def generate_trial(dgm: DgmSpec, phi: float, n_max: int, cov_rng: np.random.Generator,
                   out_rng: np.random.Generator, enroll_end: float = 50.0) -> TrialDataset:
    """All ``n_max`` participants with complete (uncensored) outcomes.

    Time-to-event enrollment times are sorted Uniform(0, enroll_end); the other
    endpoints use the enrollment order ``1..n_max``.
    """
    A, X = generate_covariates(dgm, n_max, cov_rng)
    if dgm.endpoint == "tte":
        enroll = np.sort(cov_rng.uniform(0.0, enroll_end, n_max))
        t = generate_outcomes(dgm, A, X, phi, out_rng)
        return TrialDataset(A, X, dgm.names, time=t, event=np.ones(n_max), enroll_time=enroll)
    y = generate_outcomes(dgm, A, X, phi, out_rng)
    return TrialDataset(A, X, dgm.names, y=y, enroll_time=np.arange(1.0, n_max + 1))


def analysis_schedule(full: TrialDataset, design: DesignSpec, endpoint: str) -> list[Analysis]:
    """Every analysis the trial would run if it never stopped."""
    sched = design.schedule
    n_max = min(design.n_max, full.n)
    out: list[Analysis] = []
    if endpoint == "tte":
        if sched.mode != "per_events":
            raise ConfigError("time-to-event trials need an event-driven schedule")
        cal = np.sort(full.enroll_time + full.time)
        k = 1
        while k * sched.step <= cal.size:
            c = float(cal[k * sched.step - 1])
            if c >= design.horizon:
                break
            out.append(Analysis(k, int(np.count_nonzero(full.enroll_time < c)), c, False))
            k += 1
        out.append(Analysis(len(out) + 1, int(np.count_nonzero(full.enroll_time < design.horizon)),
                            float(design.horizon), True))
        return out
    if sched.mode == "per_enrollment":
        points = list(range(sched.step, n_max, sched.step))
    else:
        if endpoint != "binary":
            raise ConfigError("event-driven schedules need a binary or time-to-event endpoint")
        cum = np.cumsum(full.y[:n_max])
        points = []
        k = 1
        while True:
            hit = np.flatnonzero(cum >= k * sched.step)
            if hit.size == 0 or hit[0] + 1 >= n_max:
                break
            points.append(int(hit[0]) + 1)
            k += 1
    out = [Analysis(i + 1, n, None, False) for i, n in enumerate(points)]
    out.append(Analysis(len(out) + 1, n_max, None, True))
    return out


def data_at(full: TrialDataset, analysis: Analysis, endpoint: str) -> TrialDataset:
    """Data visible at an analysis; time-to-event rows are censored at its calendar time."""
    if endpoint != "tte":
        return full.subset(slice(0, analysis.n_enrolled))
    c = analysis.time
    idx = np.flatnonzero(full.enroll_time < c)
    enroll = full.enroll_time[idx]
    t_true = full.time[idx]
    # compare on the calendar scale the trigger times were computed on
    event = enroll + t_true <= c
    time = np.where(event, t_true, c - enroll)
    return TrialDataset(full.A[idx], full.X[idx], full.names, time=time,
                        event=event.astype(float), enroll_time=enroll)


# ---------------------------------------------------------------------------
# the trial


FitFn = Callable[..., tuple]


def analyze(data: TrialDataset, model: ModelSpec, rng: np.random.Generator,
            sampler: SamplerConfig, eval_time: float | None = None, fit_fn: FitFn = fit):
    """Fit one model and marginalize; returns ``(MarginalPosterior, diagnostic, draws)``."""
    basis = None
    if model.endpoint == "tte":
        ev = data.time[data.event > 0]
        if ev.size == 0:
            raise AnalysisError("no observed events at this analysis")
        basis = default_basis(ev, upper=float(eval_time), degree=model.spline_degree,
                              n_interior=model.spline_knots)
    draws, diag = fit_fn(data, model, rng, sampler, basis=basis)
    mp = marginalize(draws, data.X, data.names, t=eval_time)
    return mp, diag, draws


def run_trial(full: TrialDataset, model: ModelSpec, design: DesignSpec, gamma_true: float,
              seed: np.random.SeedSequence, sampler: SamplerConfig | None = None,
              fit_fn: FitFn = fit, dump_path=None, replicate: int = 0) -> TrialResult:
    """Run the sequential design on pre-generated data until stop or final analysis.

    ``seed`` is spawned once per analysis, so analysis ``k`` always uses the
    same sampler stream regardless of what happened earlier.
    """
    sampler = sampler or SamplerConfig()
    endpoint = model.endpoint
    schedule = analysis_schedule(full, design, endpoint)
    T_values: list[float] = []
    n_values: list[int] = []
    errors: list[str] = []
    n_bad = 0
    max_rhat = 0.0
    last_mp = None
    last = schedule[-1]
    decision = NOT_SUPERIOR
    for a in schedule:
        data = data_at(full, a, endpoint)
        rng = np.random.default_rng(np.random.SeedSequence(
            seed.entropy, spawn_key=tuple(seed.spawn_key) + (a.index,)))
        n_values.append(a.n_enrolled)
        try:
            mp, diag, draws = analyze(data, model, rng, sampler, a.time, fit_fn)
            T = posterior_prob_superiority(mp, design)
        except CovadjError as exc:
            errors.append(f"analysis {a.index}: {exc}")
            T_values.append(float("nan"))
            log.warning("replicate %d, model %s, analysis %d failed: %s",
                        replicate, model.name, a.index, exc)
            last = a
            continue
        if dump_path is not None:
            dump_draws(draws, dump_path, replicate, a.index)
        n_bad += int(not diag.converged)
        max_rhat = max(max_rhat, diag.max_rhat)
        T_values.append(T)
        last_mp = mp
        last = a
        if T > design.u:
            decision = SUPERIOR_FINAL if a.final else SUPERIOR_INTERIM
            break

    res = TrialResult(decision=decision, stop_analysis=last.index, n_analyses=len(T_values),
                      n_enrolled=last.n_enrolled, T=T_values, n_at_analysis=n_values,
                      stop_time=last.time, n_nonconverged=n_bad,
                      max_rhat=max_rhat if last_mp is not None else float("nan"),
                      errors=errors)
    if endpoint == "tte":
        res.n_events = int(data_at(full, last, endpoint).event.sum())
    if last_mp is not None:
        f = last_mp.finite
        res.median = float(np.median(f))
        res.mean = float(np.mean(f))
        res.rmse = rmse(f, gamma_true)
        res.excluded_fraction = last_mp.excluded_fraction
        res.unreliable = last_mp.unreliable
    return res
