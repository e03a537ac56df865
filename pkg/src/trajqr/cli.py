"""Command-line interface: ``trajqr <subcommand> [options]``."""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .io import (BENCH_COLUMNS, BETA_COLUMNS, InputError, beta_rows, file_sha256, fmt,
                 ingest_csv, load_draws, parse_grid, read_config_file, save_draws, write_json,
                 write_table, write_dataset_csv)
from .model import AutoBandwidth, FixedBandwidth, ModelConfig
from .rng import ErrorFamily

log = logging.getLogger("trajqr")

# typed settings shared by flags and the config file: key -> (parser, default)
_SETTINGS = {
    "k": (int, 1),
    "t_star": (float, 0.0),
    "error_family": (ErrorFamily.parse, ErrorFamily.LAPLACE),
    "tau_grid": (lambda s: parse_grid(s, "tau_grid"), "0.1:0.9:0.1"),
    "h": (float, None),
    "h_grid": (lambda s: parse_grid(s, "h_grid"), None),
    "n_c": (int, 20),
    "n_b": (int, 200),
    "alpha": (float, 0.05),
    "seed": (int, 0),
    "workers": (int, None),
    "format": (str, "csv"),
    "sigma2": (float, None),
    "restarts": (int, 5),
    "tau": (float, 0.5),
    "tau_window": (lambda s: tuple(float(v) for v in s.split(",")), None),
    "case": (str, "case1"),
    "n": (int, 500),
    "reps": (int, 200),
}


class ArgumentParser(argparse.ArgumentParser):
    def error(self, message):
        raise InputError(message, field="arguments")


def _common(p: argparse.ArgumentParser, *groups):
    p.add_argument("--config", help="flat key = value settings file; flags override it")
    p.add_argument("--output", "-o", required=True, help="output directory")
    p.add_argument("--seed", type=str)
    p.add_argument("--workers", type=str, help="parallel workers (default: all cores)")
    p.add_argument("--format", type=str, choices=["csv", "json"])
    if "data" in groups:
        p.add_argument("--input", required=True, help="long-format CSV: subject_id,time,y")
        p.add_argument("--covariates", required=True,
                       help="CSV: subject_id,<covariates...>[,delta]")
    if "model" in groups:
        p.add_argument("--k", type=str, help="polynomial order of the trajectories")
        p.add_argument("--t-star", dest="t_star", type=str, help="time at which the slope is taken")
        p.add_argument("--error-family", dest="error_family", type=str,
                       help="normal or laplace")
        p.add_argument("--tau-grid", dest="tau_grid", type=str, help="e.g. 0.1:0.9:0.1")
        p.add_argument("--sigma2", type=str, help="known error variance (default: estimated)")
        p.add_argument("--restarts", type=str)
        bw = p.add_mutually_exclusive_group()
        bw.add_argument("--h", type=str, help="fixed bandwidth")
        bw.add_argument("--h-grid", dest="h_grid", type=str,
                        help="bandwidth candidates, e.g. 0.8:1.5:0.1 (automatic selection)")
        p.add_argument("--n-c", dest="n_c", type=str, help="SIMEX replicates per candidate")


def build_parser() -> ArgumentParser:
    parser = ArgumentParser(prog="trajqr", description=__doc__)
    parser.add_argument("--version", action="version", version=__version__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=ArgumentParser)

    p = sub.add_parser("fit", help="fit the corrected estimator with resampling inference")
    _common(p, "data", "model")
    p.add_argument("--n-b", dest="n_b", type=str, help="resampling replicates")
    p.add_argument("--alpha", type=str)

    p = sub.add_parser("simulate", help="write a simulated dataset and its hidden truth")
    _common(p)
    p.add_argument("--case", type=str)
    p.add_argument("--n", type=str)

    p = sub.add_parser("bench", help="Monte-Carlo replication study")
    _common(p, "model")
    p.add_argument("--case", type=str)
    p.add_argument("--n", type=str)
    p.add_argument("--reps", type=str)
    p.add_argument("--n-b", dest="n_b", type=str)
    p.add_argument("--alpha", type=str)

    p = sub.add_parser("test-constancy", help="constancy test from persisted draws")
    _common(p)
    p.add_argument("--draws", required=True, help="draws.bin written by 'fit'")
    p.add_argument("--tau-window", dest="tau_window", type=str, required=True,
                   help="tau_L,tau_U")
    p.add_argument("--alpha", type=str)

    p = sub.add_parser("select-h", help="SIMEX bandwidth selection")
    _common(p, "data", "model")
    p.add_argument("--tau", type=str)
    return parser


def resolve_settings(args: argparse.Namespace) -> dict:
    """Defaults, then the config file, then flags; every value parsed and typed."""
    raw = {k: (d, None) for k, (_, d) in _SETTINGS.items()}
    if getattr(args, "config", None):
        for key, (val, line) in read_config_file(args.config).items():
            if key not in _SETTINGS:
                raise InputError(f"{args.config}: line {line}: unknown key {key!r}",
                                 field=f"{args.config}:{line}")
            raw[key] = (val, f"{args.config}:{line}")
    for key in _SETTINGS:
        val = getattr(args, key, None)
        if val is not None:
            raw[key] = (val, "--" + key.replace("_", "-"))
    if getattr(args, "h", None) is not None:
        raw["h_grid"] = (None, None)
    elif getattr(args, "h_grid", None) is not None:
        raw["h"] = (None, None)
    out = {}
    for key, (val, where) in raw.items():
        parse = _SETTINGS[key][0]
        if val is None or not isinstance(val, str):
            out[key] = parse(val) if isinstance(val, str) else val
            continue
        try:
            out[key] = parse(val)
        except InputError:
            raise
        except (ValueError, TypeError) as exc:
            raise InputError(f"invalid value {val!r} for {key}: {exc}",
                             field=where or key) from None
    if isinstance(out["tau_grid"], str):
        out["tau_grid"] = parse_grid(out["tau_grid"], "tau_grid")
    if out["format"] not in ("csv", "json"):
        raise InputError("format must be csv or json", field="format")
    if out["workers"] is None:
        out["workers"] = os.cpu_count() or 1
    return out


def model_config(s: dict) -> ModelConfig:
    if s["h_grid"] is not None:
        bw = AutoBandwidth(s["h_grid"], s["n_c"])
    else:
        bw = FixedBandwidth(0.8 if s["h"] is None else s["h"])
    try:
        return ModelConfig(k=s["k"], t_star=s["t_star"], error_family=s["error_family"],
                           tau_grid=s["tau_grid"], bandwidth=bw, seed=s["seed"],
                           sigma2=s["sigma2"], restarts=s["restarts"])
    except ValueError as exc:
        raise InputError(str(exc), field="model configuration") from None


def _echo(s: dict) -> dict:
    return {k: (list(v) if isinstance(v, tuple) else v) for k, v in s.items()}


def _ext(s):
    return "json" if s["format"] == "json" else "csv"


def cmd_fit(args, s, out: Path) -> dict:
    from .estimator import fit_all
    from .inference import resample_fit

    cfg = model_config(s)
    ds = ingest_csv(args.input, args.covariates)
    _warn_conditioning(ds, cfg)
    fit = fit_all(ds, cfg)
    draws = resample_fit(fit.stage1, cfg, fit.beta_hat, fit.tau_grid, fit.h_used, s["n_b"],
                         s["alpha"], sigma2_known=cfg.sigma2)
    table = out / f"beta.{_ext(s)}"
    write_table(table, BETA_COLUMNS, beta_rows(fit, draws), s["format"])
    save_draws(out / "draws.bin", draws, fit.covariate_names)
    manifest = {
        "command": "fit", "settings": _echo(s),
        "inputs": {str(args.input): file_sha256(args.input),
                   str(args.covariates): file_sha256(args.covariates)},
        "sigma2_hat": fit.stage1.sigma2_hat, "sigma2_used": fit.sigma2_used,
        "h_used": fit.h_used, "n_subjects": ds.n, "n_used": fit.stage1.n_used,
        "excluded": {str(k): v.value for k, v in fit.stage1.excluded.items()},
        "resampling": {"n_b_requested": draws.n_b_requested, "n_b_dropped": draws.n_b_dropped,
                       "flagged": draws.flagged},
        "diagnostics": [d.__dict__ for d in fit.diagnostics],
    }
    if fit.bandwidth_search is not None:
        b = fit.bandwidth_search
        manifest["bandwidth_search"] = {"tau": b.tau, "h1": b.h1, "h2": b.h2,
                                        "selected": b.selected, "h_grid": b.h_grid,
                                        "m1": b.m1_curve, "m2": b.m2_curve,
                                        "disqualified": b.disqualified}
    write_json(out / "manifest.json", manifest)
    return {"table": str(table), "draws": str(out / "draws.bin")}


def _warn_conditioning(ds, cfg):
    if cfg.k >= 2:
        tmin = min(float(s.times[0]) for s in ds.subjects)
        tmax = max(float(s.times[-1]) for s in ds.subjects)
        if tmin < 0 or tmax > 100:
            log.warning("time range [%g, %g] outside [0, 100] with k=%d: "
                        "polynomial design may be ill-conditioned", tmin, tmax, cfg.k)


def cmd_simulate(args, s, out: Path) -> dict:
    from .simgen import SimScenario, generate

    try:
        sc = SimScenario(s["case"], s["n"], s["seed"])
    except ValueError as exc:
        raise InputError(str(exc), field="--case") from None
    sim = generate(sc)
    write_dataset_csv(sim.dataset, out / "longitudinal.csv", out / "covariates.csv")
    q = sim.alpha.shape[1]
    rows = [(s_.id, sim.b[i], *sim.alpha[i]) for i, s_ in enumerate(sim.dataset.subjects)]
    write_table(out / "truth.csv", ("subject_id", "B") + tuple(f"alpha{j}" for j in range(q)),
                rows)
    write_json(out / "scenario.json", {"case": sc.case.value, "n": sc.n, "seed": sc.seed,
                                       "k": sc.k, "t_star": sc.t_star,
                                       "error_family": sc.error_family.value})
    return {"dir": str(out)}


def cmd_bench(args, s, out: Path) -> dict:
    from .simgen import SimScenario, run_replication

    try:
        sc = SimScenario(s["case"], s["n"], s["seed"])
    except ValueError as exc:
        raise InputError(str(exc), field="--case") from None
    cfg = model_config(s)
    report = run_replication(sc, cfg, s["reps"], n_b=s["n_b"], alpha=s["alpha"],
                             workers=s["workers"])
    table = out / f"bench.{_ext(s)}"
    write_table(table, BENCH_COLUMNS, report.rows(), s["format"])
    write_json(out / "bench_manifest.json", {"command": "bench", "settings": _echo(s),
                                             "n_reps_used": report.n_reps,
                                             "n_failed": report.n_failed})
    return {"table": str(table)}


def cmd_test_constancy(args, s, out: Path) -> dict:
    from .inference import constancy_test

    if s["tau_window"] is None or len(s["tau_window"]) != 2:
        raise InputError("--tau-window needs two values: tau_L,tau_U", field="--tau-window")
    draws, header = load_draws(args.draws)
    names = header.get("coef_names") or [f"b{j}" for j in range(draws.beta_hat.shape[0])]
    rows = []
    for j, name in enumerate(names):
        try:
            r = constancy_test(draws, draws.beta_hat, j, s["tau_window"], s["alpha"])
        except ValueError as exc:
            raise InputError(str(exc), field="--tau-window") from None
        rows.append((name, r.statistic, r.lower, r.upper, r.reject, r.tau_window[0],
                     r.tau_window[1], r.alpha))
    table = out / f"constancy.{_ext(s)}"
    write_table(table, ("coef_name", "statistic", "region_lower", "region_upper", "reject",
                        "tau_L", "tau_U", "alpha"), rows, s["format"])
    return {"table": str(table)}


def cmd_select_h(args, s, out: Path) -> dict:
    from .bandwidth import select_bandwidth
    from .model import stage_one

    if s["h_grid"] is None:
        raise InputError("select-h needs --h-grid", field="--h-grid")
    cfg = model_config(s)
    ds = ingest_csv(args.input, args.covariates).canonical()
    s1 = stage_one(ds, cfg)
    sigma2 = s1.sigma2_hat if cfg.sigma2 is None else cfg.sigma2
    b = select_bandwidth(s1, cfg, s["tau"], s["h_grid"], s["n_c"], sigma2)
    table = out / f"bandwidth.{_ext(s)}"
    write_table(table, ("h", "m1", "m2"), zip(b.h_grid, b.m1_curve, b.m2_curve), s["format"])
    write_json(out / "bandwidth.json", {"tau": b.tau, "h1": b.h1, "h2": b.h2,
                                        "selected": b.selected, "n_candidates": len(b.h_grid),
                                        "disqualified": b.disqualified, "ridged": b.ridged,
                                        "settings": _echo(s)})
    return {"table": str(table), "selected": b.selected}


COMMANDS = {"fit": cmd_fit, "simulate": cmd_simulate, "bench": cmd_bench,
            "test-constancy": cmd_test_constancy, "select-h": cmd_select_h}


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                            format="%(levelname)s %(name)s: %(message)s")
        s = resolve_settings(args)
        out = Path(args.output)
        try:
            out.mkdir(parents=True, exist_ok=True)
        except OSError as exc:
            raise InputError(f"cannot create output directory: {exc}", field="--output") from None
        result = COMMANDS[args.command](args, s, out)
    except InputError as exc:
        print(json.dumps({"error": exc.as_dict()}), file=sys.stderr)
        return 2
    except OSError as exc:
        print(json.dumps({"error": {"message": str(exc), "field": getattr(exc, "filename", None)
                                    and str(exc.filename)}}), file=sys.stderr)
        return 3
    except (ValueError, RuntimeError) as exc:
        print(json.dumps({"error": {"message": str(exc), "field": None}}), file=sys.stderr)
        return 1
    print(json.dumps(result, default=fmt))
    return 0


if __name__ == "__main__":
    sys.exit(main())
