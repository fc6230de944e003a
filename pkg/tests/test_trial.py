import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from covadj.dgm import TrialDataset
from covadj.errors import AnalysisError, ConfigError, FitError
from covadj.inference.fit import ConvergenceDiagnostic, ParameterDraws, SamplerConfig
from covadj.inference.models import ModelSpec, model_from_formula
from covadj.marginalize import MarginalPosterior
from covadj.trial import (NOT_SUPERIOR, SUPERIOR_FINAL, SUPERIOR_INTERIM, DesignSpec,
                          InterimSchedule, analysis_schedule, data_at, generate_trial,
                          posterior_prob_superiority, rmse, run_trial)

from conftest import sim_dgm


def _design(mode="per_enrollment", step=100, n_max=500, **kw):
    return DesignSpec(InterimSchedule(mode, step), n_max, **kw)


def _trial(endpoint, n_max, seed=0, phi=0.0):
    g = np.random.default_rng(seed)
    return generate_trial(sim_dgm(endpoint), phi, n_max, g, g)


class ScriptedFit:
    """Stand-in for ``fit`` whose treatment draws give a chosen T at each analysis."""

    def __init__(self, T_by_analysis, fail_at=()):
        self.T = list(T_by_analysis)
        self.fail_at = set(fail_at)
        self.calls = []

    def __call__(self, data, model, rng, sampler, basis=None):
        k = len(self.calls)
        self.calls.append(data.n)
        if k + 1 in self.fail_at:
            raise FitError("scripted failure")
        n_neg = int(round(self.T[k] * 1000))
        phi = np.where(np.arange(1000) < n_neg, -1.0, 1.0)
        names = ["(Intercept)", "A"]
        cols = [np.zeros(1000), phi]
        if model.endpoint == "continuous":
            names.append("sigma")
            cols.append(np.ones(1000))
        if model.endpoint == "tte":
            names += [f"psi[{k + 1}]" for k in range(basis.L)]
            cols += [np.full(1000, 1.0 / basis.L)] * basis.L
        values = np.column_stack(cols)[None]
        draws = ParameterDraws(tuple(names), values, ("A",), model.endpoint, model.name, basis)
        diag = ConvergenceDiagnostic({"A": 1.0}, 1.0, 0, 0.8, (0.1,))
        return draws, diag


# --- decision statistic -------------------------------------------------------

def test_probability_counts_draws_below_null():
    mp = MarginalPosterior("DM", np.array([-1.0, -1.0, -1.0, 1.0]))
    assert posterior_prob_superiority(mp, _design()) == 0.75


def test_draws_at_null_count_for_null():
    mp = MarginalPosterior("RR", np.ones(10))
    assert posterior_prob_superiority(mp, _design(gamma0=1.0)) == 0.0


def test_direction_greater_and_excluded_draws():
    mp = MarginalPosterior("DM", np.array([0.5, np.nan, -0.5, 2.0]))
    assert posterior_prob_superiority(mp, _design(direction="greater")) == pytest.approx(2 / 3)
    with pytest.raises(AnalysisError):
        posterior_prob_superiority(MarginalPosterior("DM", np.full(3, np.nan)), _design())


@given(st.lists(st.floats(-5, 5), min_size=1, max_size=50))
def test_probability_in_unit_interval(vals):
    T = posterior_prob_superiority(MarginalPosterior("DM", np.array(vals)), _design())
    assert 0.0 <= T <= 1.0


def test_rmse_helper():
    assert rmse(np.array([1.0, -1.0]), 0.0) == 1.0
    assert rmse(np.full(5, 0.3), 0.3) == 0.0


def test_design_validation():
    with pytest.raises(ConfigError):
        _design(u=1.2)
    with pytest.raises(ConfigError):
        InterimSchedule("per_enrollment", 0)
    with pytest.raises(ConfigError):
        _design(direction="sideways")


# --- schedules -----------------------------------------------------------------

def test_continuous_schedule_for_500():
    sched = analysis_schedule(_trial("continuous", 500), _design(), "continuous")
    assert [a.n_enrolled for a in sched] == [100, 200, 300, 400, 500]
    assert [a.final for a in sched] == [False] * 4 + [True]


def test_binary_event_schedule():
    full = _trial("binary", 200, seed=3)
    sched = analysis_schedule(full, _design("per_events", 20, 200), "binary")
    cum = np.cumsum(full.y)
    for a in sched[:-1]:
        assert cum[a.n_enrolled - 1] == 20 * a.index
        assert cum[a.n_enrolled - 2] < 20 * a.index
    assert sched[-1].n_enrolled == 200 and sched[-1].final


def test_tte_schedule_event_triggers():
    full = _trial("tte", 200, seed=4)
    design = _design("per_events", 20, 200)
    sched = analysis_schedule(full, design, "tte")
    cal = np.sort(full.enroll_time + full.time)
    for a in sched[:-1]:
        assert a.time == cal[20 * a.index - 1] and a.time < 75
        assert int(np.sum(cal <= a.time)) == 20 * a.index
    assert sched[-1].time == 75.0 and sched[-1].final
    # an interim that would land after the horizon becomes the final analysis
    assert cal[20 * len(sched) - 1] >= 75 if 20 * len(sched) <= cal.size else True


@given(st.integers(0, 2**32 - 1), st.sampled_from([10, 20, 50]))
def test_tte_information_is_monotone(seed, step):
    full = _trial("tte", 200, seed=seed)
    sched = analysis_schedule(full, _design("per_events", step, 200), "tte")
    times = [a.time for a in sched]
    assert times == sorted(times) and len(set(times)) == len(times)
    n = [a.n_enrolled for a in sched]
    assert all(b >= a for a, b in zip(n, n[1:]))
    events = [data_at(full, a, "tte").event.sum() for a in sched]
    assert all(b >= a for a, b in zip(events, events[1:]))


@given(st.integers(0, 2**32 - 1))
def test_censoring_at_every_analysis(seed):
    full = _trial("tte", 200, seed=seed, phi=-0.5)
    for a in analysis_schedule(full, _design("per_events", 20, 200), "tte"):
        d = data_at(full, a, "tte")
        follow = a.time - d.enroll_time
        assert np.all(d.enroll_time < a.time)
        assert d.n == np.count_nonzero(full.enroll_time < a.time)
        at_risk = d.event == 0
        assert np.array_equal(d.time[at_risk], follow[at_risk])
        assert np.all(d.enroll_time[~at_risk] + d.time[~at_risk] <= a.time)
        assert np.all(d.time > 0)


def test_generated_tte_enrollment_window():
    full = _trial("tte", 300, seed=9)
    assert np.all((full.enroll_time >= 0) & (full.enroll_time <= 50))
    assert np.all(np.diff(full.enroll_time) >= 0) and np.all(full.event == 1)


# --- the sequential rule -----------------------------------------------------------

MODEL = ModelSpec("unadjusted", "continuous")


def test_first_interim_above_threshold_stops():
    fake = ScriptedFit([0.995, 0.5, 0.5, 0.5, 0.5])
    res = run_trial(_trial("continuous", 500), MODEL, _design(), -0.3,
                    np.random.SeedSequence(1), fit_fn=fake)
    assert res.decision == SUPERIOR_INTERIM and res.stopped_early
    assert res.stop_analysis == 1 and res.n_enrolled == 100
    assert fake.calls == [100]  # nothing is fitted after the stop
    assert res.T == [0.995]


def test_threshold_is_strict():
    fake = ScriptedFit([0.99] * 5)
    res = run_trial(_trial("continuous", 500), MODEL, _design(), 0.0,
                    np.random.SeedSequence(1), fit_fn=fake)
    assert res.decision == NOT_SUPERIOR and fake.calls == [100, 200, 300, 400, 500]
    assert res.n_enrolled == 500 and not res.superior


def test_superior_at_final():
    fake = ScriptedFit([0.2, 0.5, 0.9, 0.95, 0.999])
    res = run_trial(_trial("continuous", 500), MODEL, _design(), -0.3,
                    np.random.SeedSequence(1), fit_fn=fake)
    assert res.decision == SUPERIOR_FINAL and res.superior and not res.stopped_early
    assert res.median == -1.0
    assert res.rmse == pytest.approx(np.sqrt((999 * 0.7**2 + 1.3**2) / 1000))


def test_failed_analysis_is_recorded_and_trial_continues():
    fake = ScriptedFit([0.5, 0.5, 0.5, 0.5, 0.5], fail_at=[2])
    res = run_trial(_trial("continuous", 500), MODEL, _design(), 0.0,
                    np.random.SeedSequence(1), fit_fn=fake)
    assert len(res.errors) == 1 and "analysis 2" in res.errors[0]
    assert np.isnan(res.T[1]) and res.n_analyses == 5


def test_tte_stop_reports_events_and_time():
    full = _trial("tte", 200, seed=2)
    fake = ScriptedFit([0.2, 0.999] + [0.0] * 20)
    res = run_trial(full, ModelSpec("u", "tte"), _design("per_events", 20, 200, gamma0=1.0),
                    1.0, np.random.SeedSequence(1), fit_fn=fake)
    assert res.stop_analysis == 2 and res.n_events == 40
    assert res.stop_time < 75


def test_real_trial_is_deterministic():
    sampler = SamplerConfig(chains=3, warmup=200, keep=200)
    full = _trial("continuous", 200, seed=5, phi=-0.5)
    model = model_from_formula("correct", sim_dgm("continuous"))
    design = _design(step=40, n_max=200)
    a = run_trial(full, model, design, -0.5, np.random.SeedSequence(11, spawn_key=(0,)), sampler)
    b = run_trial(full, model, design, -0.5, np.random.SeedSequence(11, spawn_key=(0,)), sampler)
    assert repr(a) == repr(b)
    assert all(0 <= t <= 1 for t in a.T) and a.n_enrolled <= 200
    assert a.n_at_analysis == sorted(set(a.n_at_analysis))


def test_analysis_streams_do_not_depend_on_history():
    # analysis k draws from its own stream, so a failed earlier analysis changes nothing later
    full = _trial("continuous", 500)
    seen = {}

    def spy(tag):
        def f(data, model, rng, sampler, basis=None):
            seen.setdefault(tag, []).append(rng.random())
            if tag == "fail" and data.n == 100:
                raise FitError("boom")
            return ScriptedFit([0.5])(data, model, rng, sampler, basis)
        return f

    for tag in ("ok", "fail"):
        run_trial(full, MODEL, _design(), 0.0, np.random.SeedSequence(3), fit_fn=spy(tag))
    assert seen["ok"][1:] == seen["fail"][1:]
