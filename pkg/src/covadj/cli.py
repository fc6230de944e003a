"""Command line entry point: ``covadj {calibrate,ascertain,simulate,opchar,report}``."""

from __future__ import annotations

import argparse
import json
import logging
import math
import sys
from dataclasses import replace
from pathlib import Path

from .config import parse_config, preset_names
from .errors import ConfigError
from .marginalize import ESTIMANDS, NULL_VALUE
from .opchar import LONG_COLUMNS, long_rows, summarize, write_csv
from .runner import (ascertain_records, calibration_records, read_trials, run_scenario,
                     write_manifest)

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME = 0, 2, 3
log = logging.getLogger("covadj")


def _load(args):
    cfg = parse_config(args.config)
    if getattr(args, "seed", None) is not None:
        cfg = replace(cfg, seed=args.seed)
    return cfg


def _indices(text: str | None, names, what: str):
    if not text:
        return None
    out = []
    for tok in text.split(","):
        tok = tok.strip()
        if tok in names:
            out.append(names.index(tok))
        elif tok.isdigit() and int(tok) < len(names):
            out.append(int(tok))
        else:
            raise ConfigError(f"unknown {what} {tok!r}; available: {list(names)}")
    return tuple(sorted(set(out)))


def _emit(records, out: str | None, name: str):
    lines = [json.dumps(r, sort_keys=True) for r in records]
    for line in lines:
        print(line)
    if out:
        Path(out).mkdir(parents=True, exist_ok=True)
        (Path(out) / name).write_text("\n".join(lines) + "\n")


def cmd_calibrate(args) -> int:
    cfg = _load(args)
    _emit(calibration_records(cfg, args.n_datasets, args.n_per), args.out, "calibration.jsonl")
    return EXIT_OK


def cmd_ascertain(args) -> int:
    cfg = _load(args)
    _emit(ascertain_records(cfg, args.n_datasets, args.n_per), args.out, "ascertain.jsonl")
    return EXIT_OK


def cmd_simulate(args) -> int:
    cfg = _load(args)
    models = _indices(args.models, [m.name for m in cfg.models], "model")
    effects = _indices(args.effects, [str(g) for g in cfg.gammas], "effect")
    manifest = run_scenario(cfg, args.out, replicates=args.replicates, workers=args.workers,
                            effect_idx=effects, model_idx=models, dump_draws=args.dump_draws)
    print(json.dumps(manifest, indent=2, sort_keys=True))
    return EXIT_OK


def _reaggregate(out: Path):
    trials = out / "trials.csv"
    if not trials.exists():
        raise ConfigError(f"no trials.csv in {out}")
    records = read_trials(trials)
    if not records:
        raise ConfigError(f"{trials} holds no replicates")
    gamma0 = NULL_VALUE[ESTIMANDS[records[0].endpoint]]
    return records, summarize(records, gamma0)


def cmd_opchar(args) -> int:
    out = Path(args.out)
    records, rows = _reaggregate(out)
    write_csv(rows, out / "opchar.csv")
    write_csv(long_rows(records), out / "rmse_bias.csv", LONG_COLUMNS)
    if args.config:
        cfg = _load(args)
        reps = len({r.replicate for r in records})
        write_manifest(cfg, out, reps, ["trials.csv", "opchar.csv", "rmse_bias.csv"])
    print(f"wrote {out / 'opchar.csv'} ({len(rows)} rows)")
    return EXIT_OK


REPORT_METRICS = ("power", "alpha", "stop_early", "expected_sample_size", "median_bias",
                  "mean_rmse")


def cmd_report(args) -> int:
    out = Path(args.out)
    _, rows = _reaggregate(out)
    table = {}
    for r in rows:
        if r["metric"] in REPORT_METRICS:
            metric = "rejection" if r["metric"] in ("power", "alpha") else r["metric"]
            key = (r["endpoint"], r["n_max"], r["model"], r["gamma_true"])
            table.setdefault(key, {})[metric] = (r["estimate"], r["mc_se"])
    cols = ["rejection", "stop_early", "expected_sample_size", "median_bias", "mean_rmse"]
    lines = ["endpoint,n_max,model,gamma_true," + ",".join(f"{c},{c}_se" for c in cols)]
    for key, vals in table.items():
        cells = []
        for c in cols:
            est, se = vals.get(c, (math.nan, math.nan))
            cells += [format(est, ".6g"), format(se, ".3g")]
        lines.append(",".join(str(k) for k in key) + "," + ",".join(cells))
    (out / "report.csv").write_text("\n".join(lines) + "\n")
    width = max(len(k[2]) for k in table) + 2
    print(f"{'model':<{width}}{'gamma':>8}{'reject':>9}{'stop':>8}{'E[n]':>9}{'bias':>9}")
    for (_, _, model, gamma), vals in table.items():
        g = lambda c: vals.get(c, (math.nan,))[0]  # noqa: E731
        print(f"{model:<{width}}{gamma:>8.3g}{g('rejection'):>9.3f}{g('stop_early'):>8.3f}"
              f"{g('expected_sample_size'):>9.1f}{g('median_bias'):>9.3f}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="covadj", description=__doc__)
    p.add_argument("-v", "--verbose", action="store_true", help="log progress")
    sub = p.add_subparsers(dest="command", required=True)
    presets = ", ".join(preset_names())

    def common(sp, seed=True):
        sp.add_argument("--config", required=True,
                        help=f"scenario YAML file or preset id ({presets})")
        if seed:
            sp.add_argument("--seed", type=int, default=None, help="override the master seed")
        sp.add_argument("--out", default=None, help="output directory")

    for name, fn, helptext in (("calibrate", cmd_calibrate, "fit truncations and the intercept"),
                               ("ascertain", cmd_ascertain, "Monte Carlo marginal estimands")):
        sp = sub.add_parser(name, help=helptext)
        common(sp)
        sp.add_argument("--n-datasets", type=int, default=None)
        sp.add_argument("--n-per", type=int, default=None)
        sp.set_defaults(func=fn)

    sp = sub.add_parser("simulate", help="run a full scenario")
    common(sp)
    sp.add_argument("--replicates", type=int, default=None)
    sp.add_argument("--workers", type=int, default=1)
    sp.add_argument("--models", default=None, help="comma separated model names or indices")
    sp.add_argument("--effects", default=None, help="comma separated effect values or indices")
    sp.add_argument("--dump-draws", action="store_true", help="write every posterior draw")
    sp.set_defaults(func=cmd_simulate)

    sp = sub.add_parser("opchar", help="re-aggregate stored trial results")
    sp.add_argument("--out", required=True, help="directory holding trials.csv")
    sp.add_argument("--config", default=None, help="rewrite the manifest for this config")
    sp.set_defaults(func=cmd_opchar)

    sp = sub.add_parser("report", help="write a wide summary table")
    sp.add_argument("--out", required=True, help="directory holding trials.csv")
    sp.set_defaults(func=cmd_report)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.command == "simulate" and not args.out:
        print("error: simulate needs --out", file=sys.stderr)
        return EXIT_CONFIG
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except Exception as exc:  # noqa: BLE001 - surfaced as a runtime failure exit code
        print(f"runtime failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
