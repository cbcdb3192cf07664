"""Command-line front end.

Exit codes: 0 success, 2 usage error, 3 configuration error, 4 calibration
error, 5 MCMC failures (a failed single fit, or most replicates of a run
failing), 1 anything else.
"""

from __future__ import annotations

import argparse
import csv
import logging
import sys
from pathlib import Path

import numpy as np
import yaml

from . import __version__
from .calibration import CutoffCalib, PhiPriorCalib, calibrate_final_cutoff, calibrate_phi_prior
from .config import RunConfig, dump_config, load_cutoffs, parse_config, parse_config_text
from .designs.trials import LiuDesign, run_liu_trial, run_two_stage_trial
from .divergence import DistanceMeasure, distance_matrix
from .errors import CalibrationError, ChainFailure, ConfigError
from .harness import compare_methods, long_rows, oc_rows, run_scenario, to_csv
from .inference.fit import fit_model, posterior_prob_exceeds
from .inference.models import default_spec
from .kernel import CorrelationFn, build_corr_matrix

logger = logging.getLogger("baskettrial")

EXIT_OK, EXIT_OTHER, EXIT_USAGE, EXIT_CONFIG, EXIT_CALIBRATION, EXIT_CHAIN = 0, 1, 2, 3, 4, 5
FULL_REPLICATES = 5000


class _ChainDominated(Exception):
    pass


def _int_list(text):
    try:
        return [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}")


def _write(path, text):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text)
    logger.info("wrote %s", path)


def _emit(text, out):
    if out:
        _write(out, text)
    else:
        sys.stdout.write(text)


# -- distance ----------------------------------------------------------------

def cmd_distance(args):
    r = args.r
    n = args.n if len(args.n) > 1 else args.n * len(r)
    if len(n) != len(r):
        raise ConfigError("--n must give one size or one per indication")
    if any(not 0 <= ri <= ni for ni, ri in zip(n, r)):
        raise ConfigError("need 0 <= r <= n for every indication")
    measures = list(DistanceMeasure) if args.measure == "all" else [DistanceMeasure.parse(args.measure)]
    rows = [["i", "j", "n_i", "r_i", "n_j", "r_j"] + [m.value.upper() for m in measures]]
    if args.sweep:
        if len(r) != 1:
            raise ConfigError("--sweep takes a single fixed responder count in --r")
        n0 = n[0]
        for r2 in range(n0 + 1):
            d = [distance_matrix(m, [n0, n0], [r[0], r2])[0, 1] for m in measures]
            rows.append([1, 2, n0, r[0], n0, r2] + [f"{v:.6f}" for v in d])
        _emit(to_csv(rows), args.out)
        return EXIT_OK
    if len(r) < 2:
        raise ConfigError("need at least two responder counts (or use --sweep)")
    mats = [distance_matrix(m, n, r) for m in measures]
    for i in range(len(r)):
        for j in range(i + 1, len(r)):
            rows.append([i + 1, j + 1, n[i], r[i], n[j], r[j]]
                        + [f"{D[i, j]:.6f}" for D in mats])
    text = to_csv(rows)
    if args.phi is not None:
        fn = CorrelationFn(args.corr, args.phi)
        for m, D in zip(measures, mats):
            R = build_corr_matrix(D, fn)
            text += f"\ncorrelation ({m.value.upper()}, {fn.kind.value}, phi={args.phi:g})\n"
            text += to_csv([[f"{v:.6f}" for v in row] for row in R])
    _emit(text, args.out)
    return EXIT_OK


# -- config helpers ----------------------------------------------------------

def _load(args) -> RunConfig:
    cfg = parse_config(args.config)
    if not cfg.methods:
        raise ConfigError(f"{args.config}: no methods configured")
    return cfg


def _out_dir(args, cfg):
    return Path(getattr(args, "out_dir", None) or cfg.output.dir)


def _replicates(args, cfg):
    if getattr(args, "full", False):
        return FULL_REPLICATES
    return args.replicates or cfg.simulation.replicates


def _echo(cfg, out_dir, args=None):
    """Write the effective configuration (command-line overrides applied)."""
    data = yaml.safe_load(dump_config(cfg))
    if args is not None:
        sim = data["simulation"]
        sim["replicates"] = _replicates(args, cfg)
        if getattr(args, "seed", None) is not None:
            sim["seed"] = args.seed
        if getattr(args, "threads", None):
            sim["threads"] = args.threads
        data["scenario"]["name"] = _scenario_name(cfg, args)
    _write(out_dir / "effective_config.yaml", yaml.safe_dump(data, sort_keys=False))


def _calibration_seed(cfg, args):
    if cfg.calibration.seed is not None:
        return cfg.calibration.seed
    base = args.seed if getattr(args, "seed", None) is not None else cfg.simulation.seed
    return base + 1


def _calibrate(cfg, scn, args):
    calib = CutoffCalib(cfg.calibration.alpha, args.cal_replicates or cfg.calibration.replicates,
                        target=cfg.calibration.target)
    seed = _calibration_seed(cfg, args)
    out = {}
    for index, method in enumerate(scn.methods):
        design = scn.design_for(method)
        res = calibrate_final_cutoff(method.spec, design, calib, scn.mcmc, seed, index,
                                     scn.n_indications, scn.batch_size)
        if res.n_failed > res.n_used:
            raise _ChainDominated(f"{method.label}: {res.n_failed} of "
                                  f"{res.n_failed + res.n_used} null replicates failed")
        out[method.label] = {"Q": float(res.Q),
                             "null_reject_pct": [round(100 * float(a), 3) for a in res.achieved],
                             "replicates": res.n_used, "failed": res.n_failed}
        logger.info("%s: Q = %.4f", method.label, res.Q)
    return out


def _cutoffs(cfg, scn, args, out_dir):
    if args.calibration:
        return load_cutoffs(args.calibration)
    if cfg.calibration.file:
        return load_cutoffs(cfg.calibration.file)
    missing = [m.label for m in scn.methods if m.Q is None]
    if missing and args.calibrate:
        table = _calibrate(cfg, scn, args)
        _write(out_dir / "calibration.yaml", yaml.safe_dump({"cutoffs": table}, sort_keys=False))
        return {k: v["Q"] for k, v in table.items()}
    if missing:
        raise ConfigError(f"no final cutoff Q for {missing}; set Q in the config, pass "
                          f"--calibration FILE, or use --calibrate")
    return {}


# -- fit ---------------------------------------------------------------------

def _read_dataset(path):
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"dataset not found: {path}")
    with path.open(newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or not {"n", "r"} <= set(reader.fieldnames):
            raise ConfigError(f"{path}: dataset needs columns 'indication', 'n', 'r'")
        rows = list(reader)
    try:
        names = [row.get("indication") or str(k + 1) for k, row in enumerate(rows)]
        n = np.array([int(row["n"]) for row in rows])
        r = np.array([int(row["r"]) for row in rows])
    except ValueError as exc:
        raise ConfigError(f"{path}: {exc}") from None
    if n.size == 0 or np.any(n < 1) or np.any(r < 0) or np.any(r > n):
        raise ConfigError(f"{path}: need n >= 1 and 0 <= r <= n on every row")
    return names, n, r


def cmd_fit(args):
    names, n, r = _read_dataset(args.data)
    cfg = parse_config(args.config) if args.config else parse_config_text("{}")
    if args.model is None:
        entries = cfg.methods[:1]
    else:
        entries = [m for m in cfg.methods if m.model == args.model]
    spec = entries[0].spec() if entries else default_spec(args.model or "cbhm")
    try:
        q0 = np.broadcast_to(np.asarray(cfg.scenario.q0, float), (len(n),))
        q1 = np.broadcast_to(np.asarray(cfg.scenario.q1, float), (len(n),))
    except ValueError:
        raise ConfigError("per-indication q0/q1 in the config do not match the dataset") from None
    seed = args.seed if args.seed is not None else cfg.simulation.seed
    samples = fit_model(spec, (n, r), q0, q1, cfg.mcmc.build(seed))
    mean, sd, rhat = samples.mean(), samples.sd(), samples.rhat()
    rows = [["indication", "n", "r", "mean", "sd", "prob_exceeds_q0", "rhat"]]
    for i in range(len(n)):
        rows.append([names[i], int(n[i]), int(r[i]), f"{mean[i]:.6f}", f"{sd[i]:.6f}",
                     f"{posterior_prob_exceeds(samples, i, q0[i]):.6f}", f"{rhat[i]:.4f}"])
    _emit(to_csv(rows), args.out)
    return EXIT_OK


# -- trial -------------------------------------------------------------------

def cmd_trial(args):
    cfg = _load(args)
    seed = args.seed if args.seed is not None else cfg.simulation.seed
    scn = cfg.scenario_config(seed=seed)
    out_dir = _out_dir(args, cfg)
    cutoffs = {} if args.Q is not None else _cutoffs(cfg, scn, args, out_dir)
    rows = [["method", "indication", "enrolled", "responders", "stopped_early", "rejected_h0",
             "interim_prob", "final_prob", "estimate", "path"]]
    for index, method in enumerate(scn.methods):
        Q = args.Q if args.Q is not None else cutoffs.get(method.label, method.Q)
        design = scn.design_for(method, Q)
        if isinstance(design, LiuDesign):
            res = run_liu_trial(scn.truth, design, scn.mcmc, seed, args.replicate, index, method.spec)
        else:
            res = run_two_stage_trial(scn.truth, method.spec, design, scn.mcmc, seed,
                                      args.replicate, index)
        for row in res.rows():
            rows.append([method.label] + [_cell(v) for v in row.values()])
    _emit(to_csv(rows), args.out)
    return EXIT_OK


def _cell(v):
    if isinstance(v, bool):
        return int(v)
    if isinstance(v, float):
        return f"{v:.6g}"
    return v


# -- calibration -------------------------------------------------------------

def cmd_calibrate_phi(args):
    calib = PhiPriorCalib(M=args.M, alpha_q=args.alpha_q, rho_lb=args.rho_lb, rho_ub=args.rho_ub,
                          measure=args.measure, corr=args.corr, n=(args.n,) * args.I,
                          q0=args.q0, q1=args.q1, draw_a=args.draw_a)
    res = calibrate_phi_prior(calib, args.seed)
    text = yaml.safe_dump({"measure": calib.measure.value, "corr": calib.corr.value,
                           "M": calib.M, "seed": args.seed, "d_t": round(res.d_t, 6),
                           "a_interval": [round(res.a_lb, 6), round(res.a_ub, 6)],
                           "phi_shape": round(res.a, 6)}, sort_keys=False)
    sys.stdout.write(text)
    if args.out:
        _write(args.out, text)
    return EXIT_OK


def cmd_calibrate_q(args):
    cfg = _load(args)
    scn = cfg.scenario_config()
    out_dir = _out_dir(args, cfg)
    _echo(cfg, out_dir)
    table = _calibrate(cfg, scn, args)
    text = yaml.safe_dump({"cutoffs": table}, sort_keys=False)
    sys.stdout.write(text)
    _write(Path(args.out) if args.out else out_dir / "calibration.yaml", text)
    return EXIT_OK


# -- simulate / compare ------------------------------------------------------

def _scenario_name(cfg, args):
    if cfg.scenario.name != "scenario":
        return cfg.scenario.name
    return Path(args.config).stem


def _simulate(cfg, args, out_dir):
    seed = args.seed if args.seed is not None else cfg.simulation.seed
    scn = cfg.scenario_config(_replicates(args, cfg), seed, args.threads)
    cutoffs = _cutoffs(cfg, scn, args, out_dir)
    results = run_scenario(scn, cutoffs)
    for label, oc in results.items():
        total = oc.n_replicates + oc.n_failed
        if oc.n_failed * 2 > total:
            raise _ChainDominated(f"{label}: {oc.n_failed} of {total} replicates failed")
    return scn, results


def cmd_simulate(args):
    cfg = _load(args)
    out_dir = _out_dir(args, cfg)
    _echo(cfg, out_dir, args)
    scn, results = _simulate(cfg, args, out_dir)
    name = _scenario_name(cfg, args)
    _write(out_dir / f"oc_{name}.csv", to_csv(oc_rows(name, results)))
    if args.long or cfg.output.long_format:
        _write(out_dir / f"replicates_{name}.csv", to_csv(long_rows(results)))
    return EXIT_OK


def cmd_compare(args):
    runs = []
    for path in args.config:
        cfg = parse_config(path)
        if not cfg.methods:
            raise ConfigError(f"{path}: no methods configured")
        sub = argparse.Namespace(**{**vars(args), "config": path})
        out_dir = _out_dir(args, cfg) / Path(path).stem
        _echo(cfg, out_dir, sub)
        runs.append(_simulate(cfg, sub, out_dir))
    _emit(compare_methods(runs), args.out)
    return EXIT_OK


# -- parser ------------------------------------------------------------------

def build_parser():
    p = argparse.ArgumentParser(prog="baskettrial", description="Basket-trial analysis methods "
                                "and operating-characteristics simulation.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", metavar="COMMAND")
    _add = sub.add_parser

    def add_parser(name, **kw):
        return _add(name, parents=[common], **kw)

    sub.add_parser = add_parser

    d = sub.add_parser("distance", help="distances between beta posteriors")
    d.add_argument("--n", type=_int_list, default=[24], help="sample size(s), comma separated")
    d.add_argument("--r", type=_int_list, required=True, help="responder counts, comma separated")
    d.add_argument("--measure", default="all", choices=["b", "h", "kl", "all"])
    d.add_argument("--sweep", action="store_true",
                   help="vary the second responder count over 0..n against the fixed --r")
    d.add_argument("--phi", type=float, help="also print the correlation matrix at this range")
    d.add_argument("--corr", default="exp", choices=["exp", "sqexp"])
    d.add_argument("--out", help="write CSV here instead of stdout")
    d.set_defaults(func=cmd_distance)

    f = sub.add_parser("fit", help="posterior summaries for one dataset")
    f.add_argument("--data", required=True, help="CSV with columns indication,n,r")
    f.add_argument("--model", help="default: the first method in --config, else cbhm",
                   choices=["independent", "bhm", "exnex", "liu", "cbhm"])
    f.add_argument("--config", help="config file with model hyperparameters and MCMC settings")
    f.add_argument("--seed", type=int)
    f.add_argument("--out")
    f.set_defaults(func=cmd_fit)

    def run_args(sp, calibrate=True):
        sp.add_argument("--config", required=True)
        sp.add_argument("--seed", type=int)
        sp.add_argument("--out-dir", help="output directory (default from the config)")
        sp.add_argument("--cal-replicates", type=int, help="null replicates for calibration")
        if calibrate:
            sp.add_argument("--calibration", help="cutoff file written by calibrate-q")
            sp.add_argument("--calibrate", action="store_true",
                            help="calibrate missing cutoffs under the global null first")

    t = sub.add_parser("trial", help="simulate one trial")
    run_args(t)
    t.add_argument("--replicate", type=int, default=0, help="replicate index (selects the data)")
    t.add_argument("--Q", type=float, help="final cutoff for every method")
    t.add_argument("--out")
    t.set_defaults(func=cmd_trial, replicates=None, threads=None)

    cp = sub.add_parser("calibrate-phi", help="calibrate the CBHM range prior")
    cp.add_argument("--measure", default="b", choices=["b", "h", "kl"])
    cp.add_argument("--corr", default="exp", choices=["exp", "sqexp"])
    cp.add_argument("--M", type=int, default=5000, help="simulations per pair and scenario")
    cp.add_argument("--alpha-q", type=float, default=0.05)
    cp.add_argument("--rho-lb", type=float, default=0.3)
    cp.add_argument("--rho-ub", type=float, default=0.5)
    cp.add_argument("--n", type=int, default=24)
    cp.add_argument("--I", type=int, default=6)
    cp.add_argument("--q0", type=float, default=0.2)
    cp.add_argument("--q1", type=float, default=0.4)
    cp.add_argument("--draw-a", action="store_true", help="draw the shape uniformly from the interval")
    cp.add_argument("--seed", type=int, default=0)
    cp.add_argument("--out")
    cp.set_defaults(func=cmd_calibrate_phi)

    cq = sub.add_parser("calibrate-q", help="calibrate final cutoffs under the global null")
    run_args(cq, calibrate=False)
    cq.add_argument("--out", help="cutoff file (default OUT_DIR/calibration.yaml)")
    cq.set_defaults(func=cmd_calibrate_q)

    for name, func, hlp in (("simulate", cmd_simulate, "operating characteristics of a scenario"),
                            ("compare", cmd_compare, "side-by-side table for several configs")):
        s = sub.add_parser(name, help=hlp)
        if name == "simulate":
            run_args(s)
            s.add_argument("--long", action="store_true", help="also write per-replicate CSV")
        else:
            s.add_argument("--config", required=True, nargs="+")
            s.add_argument("--seed", type=int)
            s.add_argument("--out-dir")
            s.add_argument("--cal-replicates", type=int)
            s.add_argument("--calibration")
            s.add_argument("--calibrate", action="store_true")
            s.add_argument("--out", help="comparison CSV (default stdout)")
        s.add_argument("--replicates", type=int)
        s.add_argument("--full", action="store_true", help=f"{FULL_REPLICATES} replicates")
        s.add_argument("--threads", type=int)
        s.set_defaults(func=func)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code else EXIT_OK
    if args.command is None:
        parser.print_usage(sys.stderr)
        return EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    for name in ("replicates", "threads", "cal_replicates"):
        v = getattr(args, name, None)
        if v is not None and v < 1:
            print(f"--{name.replace('_', '-')} must be >= 1", file=sys.stderr)
            return EXIT_USAGE
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except CalibrationError as exc:
        print(f"calibration error: {exc}", file=sys.stderr)
        return EXIT_CALIBRATION
    except (ChainFailure, _ChainDominated) as exc:
        print(f"MCMC failure: {exc}", file=sys.stderr)
        return EXIT_CHAIN
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_OTHER


if __name__ == "__main__":
    sys.exit(main())
