"""
Command-line interface.

    gsacpd calibrate data.csv -o model.json --basis poly --order 2 --mde-delta 0.5
    gsacpd detect model.json < stream.txt
    gsacpd simulate --dist pearson3 --gamma3 2 --delta 0.5 > series.csv
    gsacpd bench manifest.json -o report.json
    gsacpd oc-curve manifest.json --grid 100,1000 --csv oc.csv

Exit codes: 0 success, 2 usage or validation error, 3 numeric failure.
Errors are written to stderr as a single JSON object.
"""

from __future__ import annotations

import argparse
import json
import math
import os
import sys
import warnings
from importlib import resources

import numpy as np

from . import jsonio
from .basis import BasisSpec, excess_kurtosis, select_basis
from .bench import ExperimentManifest, alarms_csv, oc_csv, oc_curve, report_json, run_experiment
from .calibration import CalibratedModel, MdeSpec, calibrate, log1p_transform, min_calibration_size
from .detector import DetectorState, llr, step
from .distributions import (
    DistributionSwap,
    Gaussian,
    GaussianMixture,
    LogNormal,
    MeanShift,
    Pareto,
    PearsonIII,
    ScaleShift,
    SeriesSpec,
    StudentT,
    generate_series,
    series_from_csv,
    series_to_csv,
)
from .errors import CalibrationError, CalibrationFailedError, GsaError, NumericError, ParameterError
from .threshold import ThresholdSpec, compute_threshold

SEED_ENV = "GSACPD_SEED"
REPRO = {"table-4-2": "table-4-2.json"}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _fail(code, kind, message):
    sys.stderr.write(json.dumps({"error": kind, "message": message}) + "\n")
    return code


def _default_seed():
    raw = os.environ.get(SEED_ENV)
    if raw is None:
        return 0
    try:
        return int(raw)
    except ValueError:
        raise ParameterError(f"{SEED_ENV} must be an integer, got {raw!r}") from None


def _read_text(path):
    if path in (None, "-"):
        return sys.stdin.read()
    try:
        with open(path, encoding="utf-8", newline="") as fh:
            return fh.read()
    except OSError as exc:
        raise ParameterError(f"cannot read {path}: {exc.strerror}") from None


def _write_text(path, text):
    if path in (None, "-"):
        sys.stdout.write(text)
    else:
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)


def _load_json(path):
    try:
        return json.loads(_read_text(path))
    except json.JSONDecodeError as exc:
        raise ParameterError(f"{path}: invalid JSON ({exc.msg} at line {exc.lineno})") from None


def model_to_json(model: CalibratedModel) -> str:
    return jsonio.dumps(model.to_dict(), 17) + "\n"


def model_from_json(text: str) -> CalibratedModel:
    try:
        d = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParameterError(f"malformed model JSON: {exc.msg}") from None
    if not isinstance(d, dict):
        raise ParameterError("model JSON must be an object")
    return CalibratedModel.from_dict(d)


# calibrate ----------------------------------------------------------------


def _floats(text):
    try:
        return tuple(float(v) for v in text.split(","))
    except ValueError:
        raise ParameterError(f"expected comma-separated numbers, got {text!r}") from None


def cmd_calibrate(a):
    x = series_from_csv(_read_text(a.input))
    need = max(100, min_calibration_size(a.order or 1))
    if x.size < need:
        what = f"order {a.order}" if a.order else "basis selection"
        raise CalibrationError(f"calibration sample too short for {what}: need n >= {need}, got {x.size}")
    seed = a.seed if a.seed is not None else _default_seed()
    xt = log1p_transform(x) if a.log1p else x
    if a.basis is None:
        basis = select_basis(xt, a.clip, a.order)
    else:
        ex = _floats(a.exponents) if a.exponents else None
        basis = BasisSpec(a.basis, a.order or 1, a.clip, ex)
    if a.mde_deltas is not None:
        mde = MdeSpec(_floats(a.mde_deltas), a.mde_mode if a.mde_mode != "shift" else "relative",
                      a.var_inflation)
    else:
        mde = MdeSpec(a.mde_delta, "shift", a.var_inflation, a.cov1)
    model = calibrate(x, basis, mde, a.winsor, rule=a.rule, log1p=a.log1p)
    spec = ThresholdSpec(kind=a.threshold, eps=a.eps, scale=a.scale, ar1_rho=a.ar1_rho,
                         arl0_target=a.arl0_target, runs=a.runs)
    h = compute_threshold(model, spec, cal_sample=xt, seed=seed)
    model = model.with_threshold(h, a.threshold)
    _write_text(a.output, model_to_json(model))
    d = model.diagnostics
    rows = [
        ("basis", f"{basis.family} s={basis.order} clip={basis.clip_bound:g}"),
        ("excess kurtosis", f"{excess_kurtosis(xt):.4g}"),
        ("cond(F)", f"{d.cond_f:.4g} ({d.solver_level})"),
        ("J(s)", f"{d.j_s:.6g}"),
        ("eta", f"{d.eta:.6g}"),
        ("E0 / Var0", f"{model.e0:.6g} / {model.var0:.6g}"),
        ("threshold", f"{h:.6g} ({a.threshold}, rule {a.rule})"),
    ]
    for k, v in rows:
        sys.stderr.write(f"{k:>16}  {v}\n")
    return 0


# detect ---------------------------------------------------------------------


def cmd_detect(a):
    model = model_from_json(_read_text(a.model))
    rule = a.rule or model.rule
    if model.threshold is None:
        raise ParameterError("model has no threshold; recalibrate with --threshold")
    if rule != model.rule and "srp" in (rule, model.rule):
        raise ParameterError(
            f"model threshold was calibrated for rule {model.rule!r}; an srp threshold lives on a "
            "different scale. Recalibrate with `--rule srp --threshold arl0`.")
    if a.log1p != model.log1p:
        raise ParameterError(
            f"log1p preprocessing mismatch: model has log1p={model.log1p}, stream flag is {a.log1p}")
    h = model.threshold
    state = DetectorState(rule)
    skipped = 0
    traj = [] if a.trajectory else None
    event = None
    src = sys.stdin if a.input in (None, "-") else open(a.input, encoding="utf-8")
    try:
        for lineno, line in enumerate(src, start=1):
            text = line.strip()
            if not text or (lineno == 1 and text == "x"):
                continue  # blank line, or the header written by simulate
            try:
                x = float(text)
                if not math.isfinite(x) or (model.log1p and x <= -1):
                    raise ValueError
            except ValueError:
                skipped += 1
                sys.stderr.write(f"warning: line {lineno}: skipped malformed value {text[:40]!r}\n")
                continue
            lam = llr(model, x)
            state, alarm = step(state, lam, h)
            if traj is not None:
                traj.append((state.t, lam, state.value))
            if alarm:
                event = {"t": state.t, "stat": state.value, "lambda": lam}
                break
    finally:
        if src is not sys.stdin:
            src.close()
    if traj is not None:
        lines = ["t,lambda,stat"] + [f"{t},{lam!r},{s!r}" for t, lam, s in traj]
        _write_text(a.trajectory, "\n".join(lines) + "\n")
    if event is not None:
        sys.stdout.write(jsonio.dumps(event, 17) + "\n")
    sys.stderr.write(f"summary: samples={state.t} skipped={skipped} alarm={'yes' if event else 'no'}\n")
    return 0


# simulate -------------------------------------------------------------------


def _dist_from_args(name, a):
    if name == "gaussian":
        return Gaussian(a.mu, a.sigma)
    if name == "pearson3":
        return PearsonIII(a.gamma3)
    if name == "student_t":
        return StudentT(a.nu)
    if name == "pareto":
        return Pareto(a.b)
    if name == "lognormal":
        return LogNormal(a.sigma_log)
    if name == "mixture":
        comps = _floats(a.mixture)
        if len(comps) % 3:
            raise ParameterError("--mixture takes weight,mu,sigma triples")
        return GaussianMixture(tuple(comps[i:i + 3] for i in range(0, len(comps), 3)))
    raise ParameterError(f"unknown distribution {name!r}")


def cmd_simulate(a):
    seed = a.seed if a.seed is not None else _default_seed()
    if a.spec:
        spec = SeriesSpec.from_dict(_load_json(a.spec))
        if a.seed is not None:
            spec = SeriesSpec(spec.h0, spec.change, spec.tau, spec.n_total, a.seed)
    else:
        h0 = _dist_from_args(a.dist, a)
        if a.swap_to:
            change = DistributionSwap(_dist_from_args(a.swap_to, argparse.Namespace(**{
                **vars(a), "gamma3": a.swap_gamma3 if a.swap_gamma3 is not None else a.gamma3})))
        elif a.scale_factor is not None:
            change = ScaleShift(a.scale_factor)
        else:
            change = MeanShift(a.delta)
        spec = SeriesSpec(h0, change, a.tau or a.n, a.n, seed)
    _write_text(a.output, series_to_csv(generate_series(spec)))
    return 0


# bench / oc-curve -------------------------------------------------------------


def _load_manifests(a):
    if a.repro:
        text = resources.files("gsacpd").joinpath("manifests", REPRO[a.repro]).read_text(encoding="utf-8")
        raw = json.loads(text)
    elif a.manifest:
        raw = _load_json(a.manifest)
    else:
        raise ParameterError("give a manifest path or --repro")
    if not isinstance(raw, dict):
        raise ParameterError("manifest must be a JSON object")
    items = raw["experiments"] if "experiments" in raw else [raw]
    out = []
    for item in items:
        item = dict(item)
        if a.trials is not None:
            item["n_trials"] = a.trials
        if a.workers is not None:
            item["workers"] = a.workers
        if a.seed is not None:
            item["base_seed"] = a.seed
        elif "base_seed" not in item and os.environ.get(SEED_ENV) is not None:
            item["base_seed"] = _default_seed()
        out.append(ExperimentManifest.from_dict(item))
    return out, "experiments" in raw


def cmd_bench(a):
    manifests, suite = _load_manifests(a)
    reports = []
    for m in manifests:
        sys.stderr.write(f"running {len(m.configs)} configs x {m.n_trials} trials\n")
        reports.append(run_experiment(m))
    if suite:
        text = jsonio.dumps({"schema_version": reports[0]["schema_version"], "reports": reports}, 12) + "\n"
    else:
        text = report_json(reports[0])
    _write_text(a.output, text)
    if a.alarms_csv:
        _write_text(a.alarms_csv, "".join(alarms_csv(r) for r in reports))
    for r in reports:
        for name, rep in sorted(r["configs"].items()):
            add = "n/a" if rep["add_mean"] is None else f"{rep['add_mean']:.2f}"
            sys.stderr.write(f"{name:>20}  ADD={add}  FAR={rep['far']:.4f}  DetRate={rep['det_rate']:.4f}\n")
    return 0


def cmd_oc_curve(a):
    manifests, _ = _load_manifests(a)
    grid = _floats(a.grid)
    rows = []
    for m in manifests:
        rows.extend(oc_curve(m, grid, runs=a.runs, add_trials=a.add_trials))
    _write_text(a.output, jsonio.dumps({"schema_version": 1, "points": rows}, 12) + "\n")
    if a.csv:
        _write_text(a.csv, oc_csv(rows))
    return 0


# ---------------------------------------------------------------------------


def build_parser():
    p = _Parser(prog="gsacpd", description="Sequential change-point detection with basis-approximated LLRs.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    c = sub.add_parser("calibrate", help="fit a model from a calibration CSV")
    c.add_argument("input", nargs="?", default="-", help="CSV with header x ('-' for stdin)")
    c.add_argument("-o", "--output", default="-")
    c.add_argument("--basis", choices=["poly", "log", "frac", "hermite"])
    c.add_argument("--order", type=int)
    c.add_argument("--clip", type=float, default=10.0)
    c.add_argument("--exponents", help="frac exponents, comma-separated")
    c.add_argument("--mde-delta", type=float, default=0.5, help="mean shift in sd units")
    c.add_argument("--mde-deltas", help="per-moment deltas, comma-separated")
    c.add_argument("--mde-mode", choices=["shift", "relative", "additive"], default="shift")
    c.add_argument("--var-inflation", type=float, default=0.0)
    c.add_argument("--cov1", choices=["equal", "shifted"], default="equal",
                   help="H1 covariance: equal to H0, or from the shifted sample")
    c.add_argument("--winsor", type=float, default=0.10)
    c.add_argument("--eps", type=float, default=0.01)
    c.add_argument("--threshold", choices=["pe", "vp", "cantelli", "simulation", "arl0"], default="pe")
    c.add_argument("--scale", type=float, default=1.0)
    c.add_argument("--ar1-rho", type=float)
    c.add_argument("--arl0-target", type=float, default=1000.0)
    c.add_argument("--runs", type=int, default=200)
    c.add_argument("--rule", choices=["cusum", "grsh", "srp"], default="cusum")
    c.add_argument("--log1p", action="store_true")
    c.add_argument("--seed", type=int)
    c.set_defaults(func=cmd_calibrate)

    d = sub.add_parser("detect", help="monitor a stream (one value per line)")
    d.add_argument("model")
    d.add_argument("--input", default="-")
    d.add_argument("--rule", choices=["cusum", "grsh", "srp"])
    d.add_argument("--trajectory")
    d.add_argument("--log1p", action="store_true")
    d.set_defaults(func=cmd_detect)

    s = sub.add_parser("simulate", help="generate a synthetic series as CSV")
    s.add_argument("--spec", help="SeriesSpec JSON")
    s.add_argument("--dist", default="gaussian",
                   choices=["gaussian", "pearson3", "student_t", "pareto", "lognormal", "mixture"])
    s.add_argument("--mu", type=float, default=0.0)
    s.add_argument("--sigma", type=float, default=1.0)
    s.add_argument("--gamma3", type=float, default=0.0)
    s.add_argument("--nu", type=float, default=5.0)
    s.add_argument("--b", type=float, default=3.0)
    s.add_argument("--sigma-log", type=float, default=0.5)
    s.add_argument("--mixture", help="weight,mu,sigma triples")
    s.add_argument("--delta", type=float, default=0.0)
    s.add_argument("--scale-factor", type=float)
    s.add_argument("--swap-to", choices=["gaussian", "pearson3", "student_t", "pareto", "lognormal", "mixture"])
    s.add_argument("--swap-gamma3", type=float)
    s.add_argument("--tau", type=int)
    s.add_argument("--n", type=int, default=1000)
    s.add_argument("--seed", type=int)
    s.add_argument("-o", "--output", default="-")
    s.set_defaults(func=cmd_simulate)

    for name, func, hlp in (("bench", cmd_bench, "run a Monte Carlo experiment"),
                            ("oc-curve", cmd_oc_curve, "ADD at matched in-control ARL0")):
        b = sub.add_parser(name, help=hlp)
        b.add_argument("manifest", nargs="?")
        b.add_argument("--repro", choices=sorted(REPRO))
        b.add_argument("--trials", type=int)
        b.add_argument("--workers", type=int)
        b.add_argument("--seed", type=int)
        b.add_argument("-o", "--output", default="-")
        if name == "bench":
            b.add_argument("--alarms-csv")
        else:
            b.add_argument("--grid", default="100,1000")
            b.add_argument("--runs", type=int, default=200)
            b.add_argument("--add-trials", type=int)
            b.add_argument("--csv")
        b.set_defaults(func=func)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        return _fail(2, "usage", str(exc))
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore" if args.command != "calibrate" else "default")
            warnings.showwarning = lambda msg, *rest, **kw: sys.stderr.write(f"warning: {msg}\n")
            return args.func(args)
    except (NumericError, CalibrationFailedError, FloatingPointError, np.linalg.LinAlgError) as exc:
        return _fail(3, getattr(exc, "code", "numeric"), str(exc))
    except GsaError as exc:
        return _fail(2, exc.code, str(exc))


if __name__ == "__main__":
    sys.exit(main())
