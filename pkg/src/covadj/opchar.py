"""Operating characteristics aggregated over trial replicates.

Every reducer sorts its input by replicate key and sums with ``math.fsum``, so
the result does not depend on the order in which replicates finished.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .trial import TrialResult, rmse

CSV_COLUMNS = ("endpoint", "n_max", "model", "gamma_true", "metric", "estimate", "mc_se",
               "n_replicates")
LONG_COLUMNS = ("endpoint", "n_max", "model", "gamma_true", "replicate", "stop_analysis",
                "n_enrolled", "median", "median_bias", "rmse")


@dataclass(frozen=True)
class Estimate:
    estimate: float
    mc_se: float
    n: int


@dataclass(frozen=True)
class Record:
    """One replicate of one (model, effect size) cell."""

    endpoint: str
    n_max: int
    model: str
    gamma_idx: int
    gamma_true: float
    replicate: int
    result: TrialResult | None
    failure: str | None = None

    @property
    def key(self):
        return (self.endpoint, self.n_max, self.model, self.gamma_idx, self.replicate)


def _fraction(flags: Sequence[bool]) -> Estimate:
    n = len(flags)
    if n == 0:
        return Estimate(float("nan"), float("nan"), 0)
    p = math.fsum(1.0 for f in flags if f) / n
    return Estimate(p, math.sqrt(p * (1.0 - p) / n), n)


def _mean(values: Sequence[float]) -> Estimate:
    v = [float(x) for x in values if math.isfinite(x)]
    n = len(v)
    if n == 0:
        return Estimate(float("nan"), float("nan"), 0)
    m = math.fsum(v) / n
    sd = math.sqrt(math.fsum((x - m) ** 2 for x in v) / (n - 1)) if n > 1 else 0.0
    return Estimate(m, sd / math.sqrt(n), n)


def rejection_rate(results: Sequence[TrialResult]) -> Estimate:
    """Power, or the false positive rate when the true effect is null."""
    return _fraction([r.superior for r in results])


def stop_early_rate(results: Sequence[TrialResult]) -> Estimate:
    return _fraction([r.stopped_early for r in results])


def expected_sample_size(results: Sequence[TrialResult]) -> Estimate:
    return _mean([r.n_enrolled for r in results])


def posterior_median_bias(results: Sequence[TrialResult], gamma_true: float) -> Estimate:
    return _mean([r.median - gamma_true for r in results])


def rmse_per_replicate(draws, gamma_true: float) -> float:
    return rmse(draws, gamma_true)


def _sorted_cells(records: Iterable[Record]) -> dict:
    cells: dict = {}
    for rec in sorted(records, key=lambda r: r.key):
        cells.setdefault((rec.endpoint, rec.n_max, rec.model, rec.gamma_idx), []).append(rec)
    return cells


def summarize(records: Iterable[Record], gamma0: float) -> list[dict]:
    """One row per (cell, metric), in a fixed order."""
    rows = []
    for (endpoint, n_max, model, _), recs in _sorted_cells(records).items():
        gamma = recs[0].gamma_true
        ok = [r.result for r in recs if r.result is not None]
        rej_name = "alpha" if math.isclose(gamma, gamma0, abs_tol=1e-12) else "power"
        metrics = [
            (rej_name, rejection_rate(ok)),
            ("stop_early", stop_early_rate(ok)),
            ("expected_sample_size", expected_sample_size(ok)),
            ("median_bias", posterior_median_bias(ok, gamma)),
            ("mean_rmse", _mean([r.rmse for r in ok])),
            ("nonconverged_fraction", _fraction([r.n_nonconverged > 0 for r in ok])),
            ("unreliable_fraction", _fraction([r.unreliable for r in ok])),
            ("failed_fraction", _fraction([r.result is None for r in recs])),
        ]
        for name, est in metrics:
            rows.append({"endpoint": endpoint, "n_max": n_max, "model": model,
                         "gamma_true": gamma, "metric": name, "estimate": est.estimate,
                         "mc_se": est.mc_se, "n_replicates": est.n})
    return rows


def long_rows(records: Iterable[Record]) -> list[dict]:
    """Per-replicate RMSE and median bias for plotting."""
    out = []
    for rec in sorted(records, key=lambda r: r.key):
        r = rec.result
        if r is None:
            continue
        out.append({"endpoint": rec.endpoint, "n_max": rec.n_max, "model": rec.model,
                    "gamma_true": rec.gamma_true, "replicate": rec.replicate,
                    "stop_analysis": r.stop_analysis, "n_enrolled": r.n_enrolled,
                    "median": r.median, "median_bias": r.median - rec.gamma_true,
                    "rmse": r.rmse})
    return out


def _fmt(v) -> str:
    if isinstance(v, (float, np.floating)):
        return "nan" if not math.isfinite(v) else format(float(v), ".12g")
    return str(v)


def write_csv(rows: Sequence[dict], path, columns: Sequence[str] = CSV_COLUMNS) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for row in rows:
            w.writerow([_fmt(row[c]) for c in columns])


def lookup(rows: Sequence[dict], model: str, gamma: float, metric: str) -> dict:
    for row in rows:
        if (row["model"] == model and row["metric"] == metric
                and math.isclose(row["gamma_true"], gamma, abs_tol=1e-9)):
            return row
    raise KeyError((model, gamma, metric))
