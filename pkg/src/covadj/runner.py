"""Replicate orchestration, persistence and calibration reports."""

from __future__ import annotations

import csv
import hashlib
import json
import logging
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from importlib.metadata import PackageNotFoundError, version
from pathlib import Path
from typing import Sequence

import numpy as np

from .config import ScenarioConfig
from .dgm import ascertain_marginal_estimand, calibrate_intercept, fit_truncation
from .opchar import LONG_COLUMNS, Record, long_rows, summarize, write_csv
from .trial import TrialResult, generate_trial, run_trial

log = logging.getLogger(__name__)

# purposes in the seed spawn key
COVARIATES, OUTCOMES, SAMPLER, CALIBRATION, ASCERTAIN = range(5)

TRIAL_COLUMNS = ("endpoint", "n_max", "model", "gamma_idx", "gamma_true", "replicate",
                 "decision", "stop_analysis", "n_analyses", "n_enrolled", "stop_time",
                 "n_events", "median", "mean", "rmse", "max_rhat", "n_nonconverged",
                 "excluded_fraction", "unreliable", "T", "n_at_analysis", "failure", "errors")


def package_version() -> str:
    try:
        return version("artifact")
    except PackageNotFoundError:
        return "unknown"


def seed_sequence(master: int, *key: int) -> np.random.SeedSequence:
    """Counter-based stream: independent of worker assignment and execution order."""
    return np.random.SeedSequence(int(master), spawn_key=tuple(int(k) for k in key))


def rng_for(master: int, *key: int) -> np.random.Generator:
    return np.random.default_rng(seed_sequence(master, *key))


# ---------------------------------------------------------------------------
# replicate tasks


@dataclass(frozen=True)
class _Task:
    config: ScenarioConfig
    replicate: int
    effect_idx: tuple[int, ...]
    model_idx: tuple[int, ...]
    dump_dir: str | None = None


def run_replicate(config: ScenarioConfig, replicate: int, effect_idx: Sequence[int] | None = None,
                  model_idx: Sequence[int] | None = None, fit_fn=None,
                  dump_dir: str | None = None) -> list[Record]:
    """All (effect, model) cells of one replicate.

    Covariates are shared across effect sizes and models; outcomes are shared
    across models for a given effect size.
    """
    effect_idx = range(len(config.effects)) if effect_idx is None else effect_idx
    model_idx = range(len(config.models)) if model_idx is None else model_idx
    kw = {} if fit_fn is None else {"fit_fn": fit_fn}
    records = []
    for g in effect_idx:
        gamma, phi = config.effects[g]
        full = generate_trial(config.dgm, phi, config.n_max,
                              rng_for(config.seed, replicate, COVARIATES),
                              rng_for(config.seed, replicate, OUTCOMES, g),
                              enroll_end=config.design.enroll_end)
        for m in model_idx:
            model = config.models[m]
            dump = None
            if dump_dir is not None:
                dump = os.path.join(dump_dir, f"draws_{model.name}_g{g}.csv")
            res = run_trial(full, model, config.design, gamma,
                            seed_sequence(config.seed, replicate, SAMPLER, g, m),
                            config.sampler, dump_path=dump, replicate=replicate, **kw)
            records.append(Record(config.endpoint, config.n_max, model.name, g, gamma,
                                  replicate, res))
    return records


def _execute(task: _Task) -> list[Record]:
    return run_replicate(task.config, task.replicate, task.effect_idx, task.model_idx,
                         dump_dir=task.dump_dir)


def _failed(task: _Task, reason: str) -> list[Record]:
    cfg = task.config
    return [Record(cfg.endpoint, cfg.n_max, cfg.models[m].name, g, cfg.effects[g][0],
                   task.replicate, None, reason)
            for g in task.effect_idx for m in task.model_idx]


def run_replicates(config: ScenarioConfig, replicates: int | None = None, workers: int = 1,
                   effect_idx: Sequence[int] | None = None,
                   model_idx: Sequence[int] | None = None,
                   dump_dir: str | None = None) -> list[Record]:
    """Run replicate tasks, retrying a failed task once before recording it as failed."""
    R = config.replicates if replicates is None else replicates
    eff = tuple(range(len(config.effects))) if effect_idx is None else tuple(effect_idx)
    mod = tuple(range(len(config.models))) if model_idx is None else tuple(model_idx)
    tasks = [_Task(config, r, eff, mod, dump_dir) for r in range(R)]
    records: list[Record] = []
    if workers <= 1:
        for task in tasks:
            records.extend(_with_retry(task))
        return records
    with ProcessPoolExecutor(max_workers=workers) as pool:
        futures = {pool.submit(_execute, t): t for t in tasks}
        retry = []
        for fut, task in futures.items():
            try:
                records.extend(fut.result())
            except Exception as exc:  # noqa: BLE001 - any worker failure is retried
                log.warning("replicate %d failed (%s), retrying", task.replicate, exc)
                retry.append((task, pool.submit(_execute, task)))
        for task, fut in retry:
            try:
                records.extend(fut.result())
            except Exception as exc:  # noqa: BLE001
                records.extend(_failed(task, f"{type(exc).__name__}: {exc}"))
    return records


def _with_retry(task: _Task) -> list[Record]:
    for attempt in range(2):
        try:
            return _execute(task)
        except Exception as exc:  # noqa: BLE001
            if attempt == 1:
                return _failed(task, f"{type(exc).__name__}: {exc}")
            log.warning("replicate %d failed (%s), retrying", task.replicate, exc)
    raise AssertionError("unreachable")


# ---------------------------------------------------------------------------
# persistence


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, bool):
        return "1" if v else "0"
    if isinstance(v, (float, np.floating)):
        # shortest round-trip repr, so re-aggregation reproduces the original summary
        return "nan" if not math.isfinite(v) else repr(float(v))
    return str(v)


def record_row(rec: Record) -> dict:
    r = rec.result
    row = {"endpoint": rec.endpoint, "n_max": rec.n_max, "model": rec.model,
           "gamma_idx": rec.gamma_idx, "gamma_true": rec.gamma_true,
           "replicate": rec.replicate, "failure": rec.failure or ""}
    if r is None:
        return row
    row.update(decision=r.decision, stop_analysis=r.stop_analysis, n_analyses=r.n_analyses,
               n_enrolled=r.n_enrolled, stop_time=r.stop_time, n_events=r.n_events,
               median=r.median, mean=r.mean, rmse=r.rmse, max_rhat=r.max_rhat,
               n_nonconverged=r.n_nonconverged, excluded_fraction=r.excluded_fraction,
               unreliable=r.unreliable, T=";".join(_fmt(t) for t in r.T),
               n_at_analysis=";".join(str(n) for n in r.n_at_analysis),
               errors=" | ".join(r.errors))
    return row


def write_trials(records: Sequence[Record], path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(TRIAL_COLUMNS)
        for rec in sorted(records, key=lambda r: r.key):
            row = record_row(rec)
            w.writerow([_fmt(row.get(c)) for c in TRIAL_COLUMNS])


def read_trials(path) -> list[Record]:
    def num(s, cast=float):
        return None if s == "" else cast(s)

    out = []
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            res = None
            if not row["failure"]:
                res = TrialResult(
                    decision=row["decision"], stop_analysis=int(row["stop_analysis"]),
                    n_analyses=int(row["n_analyses"]), n_enrolled=int(row["n_enrolled"]),
                    T=[float(t) for t in row["T"].split(";") if t],
                    n_at_analysis=[int(n) for n in row["n_at_analysis"].split(";") if n],
                    median=float(row["median"]), mean=float(row["mean"]),
                    rmse=float(row["rmse"]), stop_time=num(row["stop_time"]),
                    n_events=num(row["n_events"], int),
                    n_nonconverged=int(row["n_nonconverged"]),
                    max_rhat=float(row["max_rhat"]),
                    excluded_fraction=float(row["excluded_fraction"]),
                    unreliable=row["unreliable"] == "1",
                    errors=[e for e in row["errors"].split(" | ") if e])
            out.append(Record(row["endpoint"], int(row["n_max"]), row["model"],
                              int(row["gamma_idx"]), float(row["gamma_true"]),
                              int(row["replicate"]), res, row["failure"] or None))
    return out


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


def write_outputs(config: ScenarioConfig, records: Sequence[Record], out_dir,
                  replicates: int) -> dict:
    """Persist trial records, aggregated metrics and a manifest; returns the manifest."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_trials(records, out / "trials.csv")
    write_csv(summarize(records, config.design.gamma0), out / "opchar.csv")
    write_csv(long_rows(records), out / "rmse_bias.csv", LONG_COLUMNS)
    return write_manifest(config, out, replicates, ["trials.csv", "opchar.csv", "rmse_bias.csv"])


def write_manifest(config: ScenarioConfig, out: Path, replicates: int, files: Sequence[str]) -> dict:
    manifest = {
        "scenario_id": config.id,
        "config_sha256": config.config_hash,
        "seed": config.seed,
        "replicates": replicates,
        "software_version": package_version(),
        "outputs": {f: sha256_file(out / f) for f in sorted(files)},
    }
    with open(out / "manifest.json", "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return manifest


def run_scenario(config: ScenarioConfig, out_dir, replicates: int | None = None,
                 workers: int = 1, effect_idx=None, model_idx=None,
                 dump_draws: bool = False) -> dict:
    """Run all replicates of ``config`` and persist the results store."""
    R = config.replicates if replicates is None else replicates
    dump_dir = None
    if dump_draws:
        dump_dir = str(Path(out_dir) / "draws")
        Path(dump_dir).mkdir(parents=True, exist_ok=True)
    records = run_replicates(config, R, workers, effect_idx, model_idx, dump_dir)
    return write_outputs(config, records, out_dir, R)


# ---------------------------------------------------------------------------
# calibration reports


def calibration_records(config: ScenarioConfig, n_datasets: int | None = None,
                        n_per: int | None = None) -> list[dict]:
    """Truncation fits and the calibrated intercept for the scenario's DGM."""
    cal = config.calibration
    nd = cal.n_datasets if n_datasets is None else n_datasets
    npr = cal.n_per if n_per is None else n_per
    recs = []
    for j, c in enumerate(config.dgm.covariates):
        if c.dist != "truncnorm":
            continue
        start = None if c.trunc.xi is None else (c.trunc.xi, c.trunc.tau)
        fit = fit_truncation(c.trunc, rng_for(config.seed, CALIBRATION, 1, j), start=start)
        recs.append({"scenario_id": config.id, "covariate": c.name, "xi": fit.xi,
                     "tau": fit.tau, "mean": fit.mean, "sd": fit.sd})
    if config.endpoint == "binary":
        res = calibrate_intercept(config.dgm, rng_for(config.seed, CALIBRATION, 0),
                                  n_datasets=nd, n_per=npr)
        recs.append({"scenario_id": config.id, "beta0_star": res.beta0, "mc_se": res.mc_se,
                     "n_datasets": nd, "n_per": npr})
    else:
        recs.append({"scenario_id": config.id, "beta0_star": config.dgm.beta0, "mc_se": 0.0,
                     "note": "intercept fixed by configuration"})
    return recs


def ascertain_records(config: ScenarioConfig, n_datasets: int | None = None,
                      n_per: int | None = None) -> list[dict]:
    cal = config.calibration
    nd = cal.n_datasets if n_datasets is None else n_datasets
    npr = cal.n_per if n_per is None else n_per
    recs = []
    for g, (gamma_table, phi) in enumerate(config.effects):
        res = ascertain_marginal_estimand(config.dgm, phi, rng_for(config.seed, ASCERTAIN, g),
                                          n_datasets=nd, n_per=npr, horizon=cal.horizon)
        recs.append({"scenario_id": config.id, "phi": phi, "gamma_M": res.gamma,
                     "mc_se": res.mc_se, "gamma_configured": gamma_table,
                     "n_used": res.n_used, "n_skipped": res.n_skipped})
    return recs
