"""Command-line entry point: ``regsac <experiment> [--config FILE] ...``.

Exit codes: 0 success (blow-ups are reported, not failures), 2 configuration
error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import harness
from .diagnostics import CSV_HEADER, write_rows_csv
from .output import write_manifest, write_table_csv
from .solver import ConfigError
from .spectral import Field, save_snapshot

logger = logging.getLogger("regsac")

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERICAL = 3


class NumericalFailure(ArithmeticError):
    """Non-finite output that is not accounted for by a blow-up flag."""


def _snap_name(prefix, t):
    return f"{prefix}_t{t:.6f}".replace(".", "p")


def run_simulate(cfg, out):
    records = harness.run_ensemble(cfg)
    basis = cfg.solver.basis()
    files = []
    for m, rec in enumerate(records):
        p = out / f"diagnostics_{m:04d}.csv"
        write_rows_csv(p, rec.rows())
        files.append(p)
        for t, fld in rec.snapshots.items():
            files.extend(save_snapshot(fld, out / _snap_name(f"snapshot_{m:04d}", t), t, rec.seed))
        if not rec.blown_up and not np.all(np.isfinite(rec.final)):
            raise NumericalFailure(f"realization {m} produced non-finite values without a blow-up flag")
    results = {
        "realizations": len(records),
        "blown_up": [r.blown_up for r in records],
        "blowup_time": [r.blowup_time for r in records],
        "max_sup_norm": [r.max_sup_norm for r in records],
        "grid_points": basis.grid_points,
    }
    return results, files


def run_converge(cfg, out):
    res = harness.experiment_converge(cfg)
    e = res.errors
    if not np.all(np.isfinite(e.errors)):
        raise NumericalFailure("strong errors are not finite")
    p = write_table_csv(out / "strong_errors.csv", {"tau": e.taus, "error": e.errors, "stderr": e.stderrs})
    results = {
        "tau_ladder": list(e.taus),
        "tau_ref": e.tau_ref,
        "slope": res.fit.slope,
        "intercept": res.fit.intercept,
        "r_squared": res.fit.r_squared,
        "strictly_decreasing": res.strictly_decreasing,
    }
    return results, [p]


def run_energy_scan(cfg, out):
    res = harness.experiment_energy_scan(cfg)
    p = write_table_csv(out / "energy_scan.csv", res.columns())
    return {"deltas": list(res.deltas), "successive_gaps": res.successive_gaps()}, [p]


def run_coarsen(cfg, out):
    res = harness.experiment_coarsen(cfg)
    cols = {"time": res.times}
    for k, eps in enumerate(res.epsilons):
        cols[f"energy_{k}_epsilon={eps:g}"] = res.energies[eps]
    cols["energy_deterministic"] = res.deterministic
    files = [write_table_csv(out / "coarsen_energy.csv", cols)]
    basis = cfg.solver.basis()
    for k, eps in enumerate(res.epsilons):
        for t, v in res.snapshots[eps].items():
            files.extend(save_snapshot(Field(basis, v), out / _snap_name(f"snapshot_eps{k}", t), t, cfg.solver.seed))
    for t, v in res.deterministic_snapshots.items():
        files.extend(save_snapshot(Field(basis, v), out / _snap_name("snapshot_det", t), t, None))
    dev = {f"{eps:g}": res.max_deviation(eps) for eps in res.epsilons}
    return {"max_energy_deviation": dev, "tolerance": res.tolerance()}, files


def run_blowup(cfg, out):
    rep = harness.experiment_blowup(cfg)
    cols = {
        "realization": np.arange(len(rep.seeds)),
        "seed": np.array(rep.seeds, dtype=np.uint64),
        "case1_blown_up": rep.case1_blown,
        "case1_blowup_time": rep.case1_times,
        "case2_blown_up": rep.case2_blown,
        "case2_max_sup_norm": rep.case2_max_sup,
    }
    p = write_table_csv(out / "blowup.csv", cols)
    results = {"case1_blowups": int(rep.case1_blown.sum()), "case2_blowups": int(rep.case2_blown.sum())}
    return results, [p]


def run_energy_law(cfg, out):
    res = harness.experiment_energy_law(cfg)
    if not np.all(np.isfinite(res.residual)):
        raise NumericalFailure("energy-law residual is not finite")
    cols = {
        "time": res.times,
        "residual": res.residual,
        "stderr": res.stderr,
        "residual_half_tau": res.residual_half,
        "stderr_half_tau": res.stderr_half,
        "bound": res.bound,
    }
    p = write_table_csv(out / "energy_law.csv", cols)
    return {"C": res.C, "passed": res.passed}, [p]


RUNNERS = {
    "simulate": run_simulate,
    "converge": run_converge,
    "energy-scan": run_energy_scan,
    "coarsen": run_coarsen,
    "blowup-demo": run_blowup,
    "energy-law": run_energy_law,
}


def load_config(experiment: str, path: str | None, args) -> harness.ExperimentConfig:
    overrides = {}
    if path is not None:
        try:
            overrides = json.loads(Path(path).read_text())
        except OSError as exc:
            raise ConfigError(f"cannot read config file: {exc}") from exc
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config is not valid JSON: {exc}") from exc
        if not isinstance(overrides, dict):
            raise ConfigError("config must be a JSON object")
    if args.output_dir is not None:
        overrides["output_dir"] = args.output_dir
    if args.realizations is not None:
        overrides["realizations"] = args.realizations
    if args.workers is not None:
        overrides["n_workers"] = args.workers
    if args.seed is not None:
        overrides.setdefault("solver", {})
        overrides["solver"] = dict(overrides["solver"], seed=args.seed)
    return harness.resolve_config(experiment, overrides)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="regsac", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="experiment", required=True)
    for name in harness.EXPERIMENTS:
        sp = sub.add_parser(name, help=f"run the {name} experiment")
        sp.add_argument("-c", "--config", help="JSON config file (overrides the preset)")
        sp.add_argument("-o", "--output-dir", help="directory for tables, snapshots and the manifest")
        sp.add_argument("-M", "--realizations", type=int)
        sp.add_argument("--seed", type=int)
        sp.add_argument("--workers", type=int, help="process pool size for realization blocks")
        sp.add_argument("--print-config", action="store_true", help="print the resolved config and exit")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2), format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args.experiment, args.config, args)
    except (ConfigError, ValueError, TypeError) as exc:
        logger.error("config error: %s", exc)
        return EXIT_CONFIG
    if args.print_config:
        print(json.dumps(cfg.to_dict(), indent=2))
        return EXIT_OK
    out = Path(cfg.output_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        logger.error("config error: cannot create output directory: %s", exc)
        return EXIT_CONFIG
    try:
        results, files = RUNNERS[args.experiment](cfg, out)
    except ConfigError as exc:
        logger.error("config error: %s", exc)
        return EXIT_CONFIG
    except ArithmeticError as exc:
        logger.error("numerical failure: %s", exc)
        return EXIT_NUMERICAL
    manifest = write_manifest(out, cfg.to_dict(), results, files)
    logger.info("wrote %d files and %s", len(files), manifest)
    print(json.dumps({"output_dir": str(out), "results": json.loads(manifest.read_text())["results"]}, indent=2))
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
