"""Command-line interface: ``bunching simulate | filter | estimate | report``.

Samples are CSV files with a ``y`` column of log incomes (optionally
``y_tilde``, ``weight``, ``x1..xd``).  Results are JSON documents carrying
``"schema": 1`` or plot-ready CSV tables.  Exit status is 0 on success, 2
for usage errors and 3 for numerical failures.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import math
import sys
import tempfile
from pathlib import Path

import numpy as np

from . import __version__
from ._optim import ConvergenceError
from .bounds import bounds_curve, partial_id_set
from .budget_model import TaxSchedule
from .cqr import three_step_cqr
from .density_cdf import (
    FilterError,
    bunching_mass_hat,
    histogram,
    max_slope_m1,
    polynomial_cdf_filter,
    saez_filter,
    side_limits,
)
from .point_estimators import (
    EstimationError,
    concave_gap_eps,
    detect_gap_concave,
    detect_gap_upper,
    notch_eps,
    trapezoid_eps_logs,
    uniform_eps,
)
from .simulator import PRESETS, Sample, SimConfig, experiment_preset, simulate
from .tobit import fit_midcensored, fit_truncated, implied_unconditional, truncation_path

EXIT_OK, EXIT_USAGE, EXIT_NUMERIC = 0, 2, 3
ESTIMATORS = ("trapezoid", "uniform", "bounds", "notch", "tobit", "tobit-path", "cqr", "concave-gap")


class UsageError(Exception):
    pass


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, np.generic):
        obj = obj.item()
    if isinstance(obj, float) and not math.isfinite(obj):
        return None if math.isnan(obj) else ("inf" if obj > 0 else "-inf")
    return obj


def _dump(doc) -> str:
    return json.dumps(_jsonable(doc), indent=2, sort_keys=False) + "\n"


class _Output:
    """Route data either to files in ``--out`` or to stdout."""

    def __init__(self, args):
        self.stdout = getattr(args, "stdout", False)
        self.out = Path(args.out) if getattr(args, "out", None) else None
        if self.out is None and not self.stdout:
            self.stdout = True
        if self.out is not None:
            self.out.mkdir(parents=True, exist_ok=True)

    def write(self, name, text):
        if self.stdout:
            sys.stdout.write(text)
        if self.out is not None:
            (self.out / name).write_text(text, encoding="utf-8")

    def write_with(self, name, writer):
        """Call ``writer(path)`` for file output; capture it for stdout."""
        if self.out is not None:
            writer(self.out / name)
        if self.stdout:
            with tempfile.TemporaryDirectory() as tmp:
                path = Path(tmp) / name
                writer(path)
                sys.stdout.write(path.read_text(encoding="utf-8"))


# ---------------------------------------------------------------------------
# argument helpers


def _floats(text):
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from exc


def _kink_args(p):
    g = p.add_argument_group("kink")
    g.add_argument("--schedule", help="schedule JSON file; k, s0, s1 are read at --cutoff")
    g.add_argument("--cutoff", type=int, default=0, help="zero-based cutoff index in the schedule")
    g.add_argument("--k", type=float, help="log cutoff")
    g.add_argument("--s0", type=float, help="log net-of-tax slope below the cutoff")
    g.add_argument("--s1", type=float, help="log net-of-tax slope above the cutoff")


def _schedule(args):
    if not args.schedule:
        return None
    path = Path(args.schedule)
    if not path.exists():
        raise UsageError(f"schedule file {path} not found")
    return TaxSchedule.from_json(path.read_text(encoding="utf-8"))


def _kink(args):
    sched = _schedule(args)
    if sched is not None:
        c = args.cutoff
        if not 0 <= c < sched.n_cutoffs:
            raise UsageError(f"cutoff {c} out of range")
        return float(sched.log_cutoffs[c]), float(sched.log_slopes[c]), float(sched.log_slopes[c + 1])
    if None in (args.k, args.s0, args.s1):
        raise UsageError("give --schedule or all of --k, --s0, --s1")
    return args.k, args.s0, args.s1


def _load(args) -> Sample:
    path = Path(args.input)
    if not path.exists():
        raise UsageError(f"input file {path} not found")
    k, s0, s1 = _kink(args)
    return Sample.from_csv(path, k, s0, s1)


# ---------------------------------------------------------------------------
# simulate


def cmd_simulate(args) -> int:
    if args.config:
        path = Path(args.config)
        if not path.exists():
            raise UsageError(f"config file {path} not found")
        cfg = SimConfig.from_dict(json.loads(path.read_text(encoding="utf-8")))
        if args.n is not None:
            cfg = dataclasses.replace(cfg, n=args.n)
        if args.seed is not None:
            cfg = dataclasses.replace(cfg, seed=args.seed)
    else:
        if args.preset not in PRESETS:
            raise UsageError(f"unknown preset {args.preset!r}; choose from {', '.join(PRESETS)}")
        cfg = experiment_preset(args.preset, n=args.n, seed=args.seed or 0)
    if args.friction_mode:
        cfg = dataclasses.replace(cfg, friction_mode=args.friction_mode)
    smp = simulate(cfg)
    out = _Output(args)
    out.write_with("sample.csv", smp.to_csv)
    manifest = {
        "schema": 1,
        "preset": cfg.name,
        "seed": cfg.seed,
        "n": cfg.n,
        "eps": cfg.eps,
        "k": cfg.k,
        "s0": cfg.s0,
        "s1": cfg.s1,
        "B_hat": bunching_mass_hat(smp),
        "B_hat_observed": bunching_mass_hat(smp.replace(y=smp.y_tilde)),
        "config": cfg.to_dict(),
    }
    if out.out is not None:
        (out.out / "manifest.json").write_text(_dump(manifest), encoding="utf-8")
    else:
        sys.stderr.write(_dump({k: manifest[k] for k in ("preset", "seed", "n", "B_hat")}))
    return EXIT_OK


# ---------------------------------------------------------------------------
# filter


def cmd_filter(args) -> int:
    smp = _load(args)
    if args.method == "polynomial":
        for name in ("delta_minus", "delta_plus", "l", "u"):
            if getattr(args, name) is None:
                raise UsageError(f"--{name.replace('_', '-')} is required for the polynomial filter")
        res = polynomial_cdf_filter(smp, None, args.delta_minus, args.delta_plus, args.l, args.u, args.order)
        y_f = res.y_filtered
    else:
        levels = np.exp(smp.y_tilde)
        K = math.exp(smp.k)
        res = saez_filter(levels, K, args.delta, args.binwidth, weights=smp.weights)
        y_f = np.log(res.y_filtered)
        y_f[res.y_filtered == K] = smp.k
    filtered = smp.replace(y=y_f)
    summary = res.to_dict()
    true_share = bunching_mass_hat(smp)
    if not np.allclose(smp.y, smp.y_tilde) and true_share > 0:
        # frictionless incomes are present (simulated input): compare
        summary["B_input_frictionless"] = true_share
        summary["underestimates_B"] = bool(res.B_hat < 0.9 * true_share)
    out = _Output(args)
    out.write_with("filtered.csv", filtered.to_csv)
    if out.out is not None:
        (out.out / "filter.json").write_text(_dump(summary), encoding="utf-8")
        res.to_csv(out.out / "cdf.csv")
    else:
        sys.stderr.write(_dump(summary))
    return EXIT_OK


# ---------------------------------------------------------------------------
# estimate


def _density_inputs(smp, args):
    B = bunching_mass_hat(smp)
    sl = side_limits(smp, bandwidth=args.bandwidth, binwidth=args.binwidth)
    n_eff = smp.weights.sum() ** 2 / (smp.weights @ smp.weights)
    se_B = math.sqrt(B * (1 - B) / n_eff)
    return B, sl, se_B


def _m1(smp, sl):
    hist = histogram(smp, sl.binwidth, align_at_k=True)
    return max_slope_m1(hist)


def _estimate(method, smp, args, sched=None):
    """Return a JSON-ready dict (and optionally a CSV writer) for one method."""
    if method == "trapezoid":
        B, sl, se_B = _density_inputs(smp, args)
        est = trapezoid_eps_logs(B, sl.f_minus, sl.f_plus, smp.s0, smp.s1, se=(se_B, sl.se_minus, sl.se_plus))
        return est.to_dict(), None
    if method == "uniform":
        B, sl, se_B = _density_inputs(smp, args)
        f = 0.5 * (sl.f_minus + sl.f_plus)
        est = uniform_eps(B, f, smp.s0, smp.s1, se=(se_B, 0.5 * math.hypot(sl.se_minus, sl.se_plus)))
        return est.to_dict(), None
    if method == "bounds":
        B, sl, _ = _density_inputs(smp, args)
        m1 = _m1(smp, sl)
        grid = None if args.M_grid in (None, "auto") else _floats(args.M_grid)
        curve = bounds_curve(B, sl.f_minus, sl.f_plus, smp.s0, smp.s1, grid, m1=m1)
        doc = {
            "schema": 1,
            "method": "bounds",
            "B": B,
            "f_minus": sl.f_minus,
            "f_plus": sl.f_plus,
            "m0": curve.m0,
            "m1": m1,
            "M_half_line": curve.M_half_line,
            "at_m1": dataclasses.asdict(partial_id_set(B, sl.f_minus, sl.f_plus, smp.s0, smp.s1, m1)),
        }
        return doc, curve.to_csv
    if method == "notch":
        if sched is None:
            raise UsageError("the notch estimator needs --schedule")
        Y_I = detect_gap_upper(smp.y, smp.k)
        est = notch_eps(Y_I, sched, args.cutoff, log=True)
        return est.to_dict(), None
    if method == "concave-gap":
        lo, up = detect_gap_concave(smp.y, smp.k)
        return concave_gap_eps(lo, up, smp.s0, smp.s1).to_dict(), None
    if method == "tobit":
        cov = not args.no_covariates
        if args.fraction is None or args.fraction >= 1:
            fit = fit_midcensored(smp, covariates=cov)
        else:
            fit = fit_truncated(smp, data_fraction=args.fraction, covariates=cov)
        doc = fit.to_dict()
        doc["method"] = "tobit"
        doc["sup_distance"] = implied_unconditional(fit, smp).sup_distance
        return doc, None
    if method == "tobit-path":
        fr = _floats(args.fractions)
        path = truncation_path(smp, fr, covariates=not args.no_covariates, jobs=args.jobs)
        doc = {"schema": 1, "method": "tobit-path", "rows": path.rows}
        return doc, path.to_csv
    if method == "cqr":
        fit = three_step_cqr(smp, tau=args.tau)
        doc = fit.to_dict()
        doc["method"] = "cqr"
        return doc, None
    raise UsageError(f"unknown estimator {method!r}")


def cmd_estimate(args) -> int:
    smp = _load(args)
    sched = _schedule(args)
    doc, csv_writer = _estimate(args.method, smp, args, sched)
    out = _Output(args)
    stem = args.method.replace("-", "_")
    if args.format == "csv" and csv_writer is not None:
        out.write_with(f"{stem}.csv", csv_writer)
        if out.out is not None:
            (out.out / f"{stem}.json").write_text(_dump(doc), encoding="utf-8")
        return EXIT_OK
    out.write(f"{stem}.json", _dump(doc))
    if out.out is not None and csv_writer is not None:
        csv_writer(out.out / f"{stem}.csv")
    return EXIT_OK


# ---------------------------------------------------------------------------
# report


def cmd_report(args) -> int:
    methods = [m.strip() for m in (args.methods or "").split(",") if m.strip()]
    if not methods:
        raise UsageError("--methods must name at least one estimator")
    bad = [m for m in methods if m not in ESTIMATORS]
    if bad:
        raise UsageError(f"unknown estimator(s): {', '.join(bad)}")
    smp = _load(args)
    sched = _schedule(args)
    results, errors = {}, {}
    for m in methods:
        try:
            results[m], _ = _estimate(m, smp, args, sched)
        except (EstimationError, ConvergenceError, FilterError, ValueError) as exc:
            errors[m] = str(exc)
    containment = {}
    try:
        B, sl, _ = _density_inputs(smp, args)
        m1 = _m1(smp, sl)
        m0 = bounds_curve(B, sl.f_minus, sl.f_plus, smp.s0, smp.s1, [m1]).m0
        sets = {"m1": partial_id_set(B, sl.f_minus, sl.f_plus, smp.s0, smp.s1, m1)}
        if m0 is not None and m0 > 0:
            sets["m0"] = partial_id_set(B, sl.f_minus, sl.f_plus, smp.s0, smp.s1, m0)
        for m, doc in results.items():
            eps = doc.get("eps_hat")
            if eps is None:
                continue
            containment[m] = {name: s.contains(eps, tol=1e-9) for name, s in sets.items()}
        bounds_doc = {name: dataclasses.asdict(s) for name, s in sets.items()}
    except (EstimationError, ValueError) as exc:
        bounds_doc = {"error": str(exc)}
    doc = {
        "schema": 1,
        "n": smp.n,
        "k": smp.k,
        "s0": smp.s0,
        "s1": smp.s1,
        "methods": results,
        "errors": errors,
        "bounds": bounds_doc,
        "inside_bounds": containment,
    }
    _Output(args).write("report.json", _dump(doc))
    return EXIT_NUMERIC if errors and not results else EXIT_OK


# ---------------------------------------------------------------------------
# parser


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="bunching", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    def common_io(sp, needs_input=True):
        if needs_input:
            sp.add_argument("--input", required=True, help="sample CSV")
        sp.add_argument("--out", help="output directory")
        sp.add_argument("--stdout", action="store_true", help="write data to stdout")

    sp = sub.add_parser("simulate", help="draw a sample from a preset or config")
    src = sp.add_mutually_exclusive_group(required=True)
    src.add_argument("--preset", help=f"one of {', '.join(PRESETS)}")
    src.add_argument("--config", help="SimConfig JSON file")
    sp.add_argument("--n", type=int)
    sp.add_argument("--seed", type=int)
    sp.add_argument("--friction-mode", choices=("bunchers", "all"))
    common_io(sp, needs_input=False)
    sp.set_defaults(func=cmd_simulate)

    sp = sub.add_parser("filter", help="remove optimization frictions")
    sp.add_argument("method", choices=("polynomial", "saez"))
    common_io(sp)
    _kink_args(sp)
    sp.add_argument("--delta-minus", type=float)
    sp.add_argument("--delta-plus", type=float)
    sp.add_argument("--l", type=float)
    sp.add_argument("--u", type=float)
    sp.add_argument("--order", type=int, default=7)
    sp.add_argument("--delta", type=float, default=1500.0, help="level window for the saez filter")
    sp.add_argument("--binwidth", type=float)
    sp.set_defaults(func=cmd_filter)

    def est_opts(sp):
        _kink_args(sp)
        sp.add_argument("--bandwidth", type=float)
        sp.add_argument("--binwidth", type=float)
        sp.add_argument("--M-grid", dest="M_grid", default="auto", help="'auto' or comma-separated values")
        sp.add_argument("--fraction", type=float, help="tobit data fraction in (0, 1]")
        sp.add_argument("--fractions", default="1.0,0.75,0.5,0.25")
        sp.add_argument("--no-covariates", action="store_true")
        sp.add_argument("--tau", type=float, default=0.5)
        sp.add_argument("--jobs", type=int, default=1)

    sp = sub.add_parser("estimate", help="run one estimator")
    sp.add_argument("method", choices=ESTIMATORS)
    common_io(sp)
    est_opts(sp)
    sp.add_argument("--format", choices=("json", "csv"), default="json")
    sp.set_defaults(func=cmd_estimate)

    sp = sub.add_parser("report", help="run several estimators on one sample")
    common_io(sp)
    est_opts(sp)
    sp.add_argument("--methods", default="trapezoid,uniform,bounds,tobit")
    sp.set_defaults(func=cmd_report)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if exc.code is not None else EXIT_OK
    try:
        return args.func(args)
    except UsageError as exc:
        sys.stderr.write(f"bunching: error: {exc}\n")
        return EXIT_USAGE
    except (ConvergenceError, EstimationError, np.linalg.LinAlgError) as exc:
        sys.stderr.write(f"bunching: numerical failure: {exc}\n")
        return EXIT_NUMERIC
    except (FilterError, ValueError, OSError) as exc:
        sys.stderr.write(f"bunching: error: {exc}\n")
        return EXIT_USAGE


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
