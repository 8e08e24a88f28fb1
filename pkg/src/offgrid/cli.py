"""``offgrid`` command line: simulate, train, calibrate, sweep, report.

Exit codes: 0 success, 1 I/O error, 2 configuration error, 3 numerical
failure, 4 acceptance-check failure.
"""

import argparse
import json
import logging
import os
import sys
from importlib import resources

import numpy as np

from . import io as fio
from . import kernels
from .config import load_config
from .errors import (
    ConfigurationError,
    ConvergenceError,
    FingerprintMismatchError,
    IllConditionedError,
    InvalidInputError,
    NotInvertibleError,
    NotPSDError,
    SchemaError,
    TrainingDivergedError,
)
from .harness import build_detectors, complexity_report, scoring_timings
from .numerics import rng_stream
from .pipeline import calibrate_detectors, probe_inputs, sweep_detectors, train_model
from .scenario import draw_batch

log = logging.getLogger("offgrid")

EXIT_IO, EXIT_CONFIG, EXIT_NUMERIC, EXIT_CHECK = 1, 2, 3, 4
OUTPUT_ENV = "OFFGRID_OUTPUT_DIR"

# shorthand flag -> config path
SHORTHANDS = {
    "scenario": "scenario_id",
    "seed": "harness.seed",
    "train_seed": "training.seed",
    "workers": "harness.workers",
    "epochs": "training.epochs",
    "n_trials": "harness.n_trials",
    "n_h0": "harness.n_h0",
    "pfa": "harness.pfa",
    "detectors": "detectors",
    "output_dir": "output_dir",
}


def _config(args):
    overrides = list(args.set or [])
    for attr, path in SHORTHANDS.items():
        value = getattr(args, attr, None)
        if value is not None:
            overrides.append(f"{path}={value}")
    cfg = load_config(args.config, overrides)
    if getattr(args, "output_dir", None) is None and cfg.output_dir == "." and OUTPUT_ENV in os.environ:
        cfg.output_dir = os.environ[OUTPUT_ENV]
    return cfg


def _out_path(cfg, explicit, default_name):
    if explicit:
        return explicit
    os.makedirs(cfg.output_dir, exist_ok=True)
    return os.path.join(cfg.output_dir, default_name)


# --------------------------------------------------------------------------
# Subcommands
# --------------------------------------------------------------------------

def cmd_simulate(args):
    cfg = _config(args)
    h1 = args.hypothesis.upper() == "H1"
    rng = rng_stream(cfg.harness.seed, "simulate")
    if args.count < 0:
        raise ConfigurationError("count must be non-negative")
    if h1:
        snr = args.snr_db if args.snr_db is not None else rng.choice(cfg.harness.snr_grid, size=args.count)
        obs = draw_batch(cfg.scenario, args.count, rng, snr_db=snr)
    else:
        obs = draw_batch(cfg.scenario, args.count, rng)
    path = _out_path(cfg, args.out, f"dataset_{args.hypothesis.lower()}.csv")
    fio.write_dataset(path, obs, cfg.scenario.m, cfg.config_hash(), cfg.harness.seed)
    print(f"wrote {len(obs)} {args.hypothesis.upper()} observations to {path}")
    if len(obs):
        var = np.mean(np.abs(obs.z) ** 2, axis=0)
        print(f"per-pulse power: mean {var.mean():.4f} (min {var.min():.4f}, max {var.max():.4f})")
        if h1:
            lo, hi = cfg.scenario.cell.bounds
            print(f"theta0 range [{np.min(obs.theta0):.5f}, {np.max(obs.theta0):.5f}] within cell [{lo:.5f}, {hi:.5f}]")
    return 0


def cmd_train(args):
    cfg = _config(args)
    result, whitener = train_model(cfg)
    path = _out_path(cfg, args.out, "model.json")
    fio.save_model(path, result.params, whitener, cfg.scenario, cfg.training, result.history,
                   result.best_epoch, cfg.config_hash(), cfg.training.seed, probe_inputs(cfg, whitener))
    last = result.history[-1]
    print(f"trained {len(result.history)} epochs (best {result.best_epoch}); "
          f"final train loss {last['train_loss']:.5f}, val loss {last['val_loss']:.5f}")
    print(f"wrote {path}")
    return 0


def _load_model_for(cfg, path):
    if path is None:
        if "amortized" in cfg.detectors:
            raise ConfigurationError("the amortized detector needs --model")
        return None
    model = fio.load_model(path)
    model.check_scenario(cfg.scenario)
    return model


def cmd_calibrate(args):
    cfg = _config(args)
    model = _load_model_for(cfg, args.model)
    if model is not None:
        whitener, params, net_in = model.whitener, model.params, model.network_input
    else:
        from .pipeline import fit_whitener

        whitener, params, net_in = fit_whitener(cfg), None, "u"
    _, cal = calibrate_detectors(cfg, whitener, params, net_in)
    path = _out_path(cfg, args.out, "calibration.json")
    fio.save_calibration(path, cal, cfg.scenario, cfg.config_hash(), cfg.harness.seed, args.model)
    for name, r in cal.items():
        print(f"{name:>10}: tau={r.tau:.6f}  held-out pfa={r.achieved_pfa:.5f} +/- {r.achieved_pfa_se:.5f}")
    print(f"wrote {path}")
    return 0


def cmd_sweep(args):
    cfg = _config(args)
    if not args.calibration or not os.path.exists(args.calibration):
        raise ConfigurationError("sweep needs an existing --calibration file (run 'offgrid calibrate')")
    cal_doc = fio.load_calibration(args.calibration)
    if cal_doc["scenario"] != cfg.scenario.fingerprint():
        raise FingerprintMismatchError("calibration file was produced for a different scenario")
    model = _load_model_for(cfg, args.model)
    if model is not None and cal_doc.get("model_sha256") not in (None, fio.file_sha256(args.model)):
        raise FingerprintMismatchError("calibration file was produced with a different model file")
    if model is not None:
        whitener, params, net_in = model.whitener, model.params, model.network_input
    else:
        from .pipeline import fit_whitener

        whitener, params, net_in = fit_whitener(cfg), None, "u"
    dets = build_detectors(cfg.scenario, whitener, params, cfg.detectors, cfg.harness.scan_points, net_in)
    missing = [d.name for d in dets if d.name not in cal_doc["detectors"]]
    if missing:
        raise ConfigurationError(f"calibration file has no threshold for {missing}")
    taus = {d.name: cal_doc["detectors"][d.name]["tau"] for d in dets}
    sweep = sweep_detectors(cfg, dets, taus, whitener)
    csv_path = _out_path(cfg, args.out, f"sweep_{cfg.scenario_id}.csv")
    fio.write_sweep_csv(csv_path, sweep, cfg.config_hash(), cfg.scenario)
    timings = scoring_timings(whitener, cfg.scenario.cell, params, K=cfg.harness.scan_points)
    summary = {
        "config_hash": cfg.config_hash(),
        "config": cfg.to_dict(),
        "seeds": {"harness": cfg.harness.seed, "training": cfg.training.seed},
        "kernel_backend": kernels.BACKEND,
        "thresholds": taus,
        "complexity": complexity_report(sweep, timings),
        "timings_seconds_per_test": timings,
        "results_csv": os.path.basename(csv_path),
    }
    summary_path = args.summary or os.path.splitext(csv_path)[0] + "_summary.json"
    with open(summary_path, "w") as f:
        json.dump(summary, f, indent=1, sort_keys=True)
        f.write("\n")
    print(format_tables([(csv_path, list(sweep.rows()))]))
    print(f"wrote {csv_path} and {summary_path}")
    return 0


# --------------------------------------------------------------------------
# Report
# --------------------------------------------------------------------------

def _index(records):
    out = {}
    for r in records:
        out.setdefault(r["scenario"], {}).setdefault(r["detector"], {})[r["snr_db"]] = r["pd"]
    return out


def format_tables(files):
    """Aligned Pd tables (one per file and scenario) plus deltas vs the scan column."""
    lines = []
    for label, records in files:
        for scen, dets in _index(records).items():
            names = list(dets)
            snrs = sorted({s for d in dets.values() for s in d})
            lines.append(f"== {label} [scenario {scen}] Pd ==")
            lines.append("snr_db  " + "".join(f"{n:>11}" for n in names)
                         + ("".join(f"{'d(' + n + ')':>14}" for n in names if n != "scan") if "scan" in dets else ""))
            for s in snrs:
                row = f"{s:6g}  " + "".join(f"{dets[n].get(s, float('nan')):11.4f}" for n in names)
                if "scan" in dets:
                    base = dets["scan"].get(s, float("nan"))
                    row += "".join(f"{dets[n].get(s, float('nan')) - base:+14.4f}" for n in names if n != "scan")
                lines.append(row)
    return "\n".join(lines)


def format_file_deltas(files):
    """Per-detector Pd differences of every file against the first one."""
    (label0, rec0), rest = files[0], files[1:]
    ref = _index(rec0)
    lines = []
    for label, records in rest:
        idx = _index(records)
        for scen, dets in idx.items():
            for det, curve in dets.items():
                base = ref.get(scen, {}).get(det, {})
                deltas = [curve[s] - base[s] for s in curve if s in base]
                if deltas:
                    lines.append(f"{label} vs {label0} [{scen}/{det}]: max |delta| = {max(map(abs, deltas)):.4f}")
    return "\n".join(lines)


def check_against_reference(records, reference, tol):
    """Per (scenario, detector): worst absolute deviation and pass flag."""
    ref = _index(reference)
    out = []
    for scen, dets in _index(records).items():
        for det, curve in dets.items():
            base = ref.get(scen, {}).get(det)
            if not base:
                continue
            common = [s for s in curve if s in base]
            worst = max((abs(curve[s] - base[s]) for s in common), default=0.0)
            out.append((scen, det, len(common), worst, worst <= tol))
    return out


def default_reference_path():
    return str(resources.files("offgrid") / "data" / "reference_pd.csv")


def cmd_report(args):
    files = []
    metas = []
    for path in args.files:
        meta, records = fio.read_results_csv(path)
        files.append((path, records))
        metas.append(meta)
    geo = {(m.get("m"), m.get("rho")) for m in metas}
    if len(geo) > 1 and not args.force:
        raise ConfigurationError(f"results differ in (m, rho): {sorted(geo)}; use --force to compare anyway")
    print(format_tables(files))
    if len(files) > 1:
        print(format_file_deltas(files))
    if not args.check:
        return 0
    _, reference = fio.read_results_csv(args.reference or default_reference_path())
    failed = False
    for path, records in files:
        for scen, det, n, worst, ok in check_against_reference(records, reference, args.tolerance):
            failed |= not ok
            print(f"{'PASS' if ok else 'FAIL'} {path} [{scen}/{det}] {n} points, max |dPd| = {worst:.4f} "
                  f"(tol {args.tolerance})")
    return EXIT_CHECK if failed else 0


# --------------------------------------------------------------------------
# Entry point
# --------------------------------------------------------------------------

def _common(p):
    p.add_argument("--config", help="JSON run configuration")
    p.add_argument("--set", action="append", metavar="PATH=VALUE",
                   help="override one config path, e.g. scenario.rho=0.3 (repeatable)")
    p.add_argument("--scenario", choices=["a", "b", "c"], help="scenario preset (scenario_id)")
    p.add_argument("--seed", type=int, help="harness.seed")
    p.add_argument("--train-seed", type=int, help="training.seed")
    p.add_argument("--workers", type=int, help="harness.workers (0 = all cores)")
    p.add_argument("--output-dir", help=f"output_dir (default ${OUTPUT_ENV} or .)")
    p.add_argument("--epochs", type=int, help="training.epochs")
    p.add_argument("--n-trials", type=int, help="harness.n_trials")
    p.add_argument("--n-h0", type=int, help="harness.n_h0")
    p.add_argument("--pfa", type=float, help="harness.pfa")
    p.add_argument("--detectors", help="comma-separated detector list")


def build_parser():
    parser = argparse.ArgumentParser(prog="offgrid", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="write labeled observations to CSV")
    _common(p)
    p.add_argument("--count", type=int, required=True)
    p.add_argument("--hypothesis", choices=["H0", "H1", "h0", "h1"], default="H0")
    p.add_argument("--snr-db", type=float, help="H1 SNR (default: drawn from the SNR grid)")
    p.add_argument("--out")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("train", help="fit the whitener and train the Doppler regressor")
    _common(p)
    p.add_argument("--out")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("calibrate", help="empirical CFAR thresholds for every detector")
    _common(p)
    p.add_argument("--model")
    p.add_argument("--out")
    p.set_defaults(func=cmd_calibrate)

    p = sub.add_parser("sweep", help="Pd versus SNR for calibrated detectors")
    _common(p)
    p.add_argument("--model")
    p.add_argument("--calibration", required=True)
    p.add_argument("--out")
    p.add_argument("--summary")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("report", help="compare sweep CSVs and optionally check against reference curves")
    p.add_argument("files", nargs="+")
    p.add_argument("--check", action="store_true")
    p.add_argument("--reference")
    p.add_argument("--tolerance", type=float, default=0.03)
    p.add_argument("--force", action="store_true")
    p.set_defaults(func=cmd_report)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ConfigurationError, InvalidInputError, FingerprintMismatchError, SchemaError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except TrainingDivergedError as exc:
        print(f"error: training diverged at epoch {exc.epoch} (batch {exc.batch}): {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (IllConditionedError, NotInvertibleError, NotPSDError, ConvergenceError) as exc:
        print(f"error: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
