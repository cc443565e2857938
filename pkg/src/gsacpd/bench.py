"""
Monte Carlo experiment harness.

Each trial i draws everything from ``trial_rng(base_seed, i)``: a fresh
calibration sample, then one test series. Every configuration is fitted on
that sample and run on that series (common random numbers). Trials are
processed in fixed index chunks, optionally in worker processes, and
reduced in index order so reports are byte-identical for any worker count.
"""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy.signal import lfilter

from . import jsonio
from .baselines import BASELINE_KINDS, baseline_alarms, calibrate_baseline
from .basis import BasisSpec, select_basis
from .calibration import MdeSpec, calibrate
from .detector import llr_array, scan
from .distributions import (
    DistributionSwap,
    MeanShift,
    SeriesSpec,
    generate_series_rng,
    sample,
    trial_rng,
)
from .errors import CalibrationFailedError, GsaError, ParameterError
from .threshold import ThresholdSpec, arl0_bisect, compute_threshold, estimate_arl0

SCHEMA_VERSION = 1
REPORT_DIGITS = 12


@dataclass(frozen=True)
class GsaConfig:
    name: str
    basis: BasisSpec | None = None  # None: select from the calibration sample
    mde: MdeSpec = field(default_factory=MdeSpec)
    w: float = 0.10
    threshold: ThresholdSpec | None = None  # None: manifest default
    rule: str = "cusum"

    def to_dict(self):
        return {
            "type": "gsa",
            "name": self.name,
            "basis": None if self.basis is None else self.basis.to_dict(),
            "mde": self.mde.to_dict(),
            "w": self.w,
            "threshold": None if self.threshold is None else self.threshold.to_dict(),
            "rule": self.rule,
        }


@dataclass(frozen=True)
class BaselineConfig:
    name: str
    kind: str
    eps: float = 0.005
    lam: float = 0.1
    L: float = 3.5
    k: float = 0.5

    def __post_init__(self):
        if self.kind not in BASELINE_KINDS:
            raise ParameterError(f"unknown baseline {self.kind!r}")

    def to_dict(self):
        return {"type": "baseline", "name": self.name, "kind": self.kind, "eps": self.eps,
                "lam": self.lam, "L": self.L, "k": self.k}


def config_from_dict(d):
    d = dict(d)
    typ = d.pop("type", "gsa")
    if "name" not in d:
        raise ParameterError("every config needs a name")
    if typ == "baseline":
        return BaselineConfig(**d)
    if typ != "gsa":
        raise ParameterError(f"unknown config type {typ!r}")
    basis = d.get("basis")
    thr = d.get("threshold")
    unknown = set(d) - {"name", "basis", "mde", "w", "threshold", "rule"}
    if unknown:
        raise ParameterError(f"unknown config fields {sorted(unknown)}")
    return GsaConfig(
        name=str(d["name"]),
        basis=None if basis is None else BasisSpec.from_dict(basis),
        mde=MdeSpec.from_dict(d.get("mde", {})),
        w=float(d.get("w", 0.10)),
        threshold=None if thr is None else ThresholdSpec.from_dict(thr),
        rule=str(d.get("rule", "cusum")),
    )


@dataclass(frozen=True)
class ExperimentManifest:
    series: SeriesSpec
    configs: tuple
    threshold: ThresholdSpec = field(default_factory=ThresholdSpec)
    n_trials: int = 2000
    n_cal: int = 1000
    base_seed: int = 0
    ar1_rho: float | None = None
    reference: str | None = None  # config whose ADD is the numerator of efficiency ratios
    workers: int = 1
    chunk: int = 250

    def __post_init__(self):
        object.__setattr__(self, "configs", tuple(self.configs))
        if self.n_trials < 1:
            raise ParameterError("n_trials must be >= 1")
        if self.series.tau >= self.series.n_total:
            raise ParameterError("need tau < n_total")
        if not self.configs:
            raise ParameterError("manifest has no detector configs")
        names = [c.name for c in self.configs]
        if len(set(names)) != len(names):
            raise ParameterError("config names must be unique")
        if self.reference is not None and self.reference not in names:
            raise ParameterError(f"reference {self.reference!r} is not a config name")
        if self.ar1_rho is not None and not abs(self.ar1_rho) < 1:
            raise ParameterError("ar1_rho must satisfy |rho| < 1")

    def to_dict(self):
        # workers and chunk size do not change results and stay out of the report
        return {
            "series": self.series.to_dict(),
            "configs": [c.to_dict() for c in self.configs],
            "threshold": self.threshold.to_dict(),
            "n_trials": self.n_trials,
            "n_cal": self.n_cal,
            "base_seed": self.base_seed,
            "ar1_rho": self.ar1_rho,
            "reference": self.reference,
        }

    @classmethod
    def from_dict(cls, d):
        known = {"series", "configs", "threshold", "n_trials", "n_cal", "base_seed", "ar1_rho",
                 "reference", "workers", "chunk"}
        unknown = set(d) - known
        if unknown:
            raise ParameterError(f"unknown manifest fields {sorted(unknown)}")
        if "series" not in d or "configs" not in d:
            raise ParameterError("manifest needs 'series' and 'configs'")
        try:
            return cls(
                series=SeriesSpec.from_dict(d["series"]),
                configs=tuple(config_from_dict(c) for c in d["configs"]),
                threshold=ThresholdSpec.from_dict(d.get("threshold", {})),
                n_trials=int(d.get("n_trials", 2000)),
                n_cal=int(d.get("n_cal", 1000)),
                base_seed=int(d.get("base_seed", 0)),
                ar1_rho=None if d.get("ar1_rho") is None else float(d["ar1_rho"]),
                reference=d.get("reference"),
                workers=int(d.get("workers", 1)),
                chunk=int(d.get("chunk", 250)),
            )
        except (TypeError, KeyError, AttributeError) as exc:
            raise ParameterError(f"malformed manifest: {exc}") from None


def ar1_wrap(series, rho: float) -> np.ndarray:
    """Filter innovations through x_t = rho x_{t-1} + e_t started at stationarity.

    The first innovation is scaled by 1/sqrt(1 - rho^2) and the output is
    rescaled by sqrt(1 - rho^2) so the marginal variance equals the input's.
    """
    if not abs(rho) < 1:
        raise ParameterError("AR(1) coefficient must satisfy |rho| < 1")
    x = np.asarray(series, dtype=float)
    if rho == 0:
        return x.copy()
    c = math.sqrt(1 - rho * rho)
    e = x.copy()
    e[0] = e[0] / c
    return lfilter([1.0], [1.0, -rho], e) * c


def relative_change_rho(model) -> float:
    """Efficiency coefficient J / sqrt(var0), i.e. the relative change parameter of the statistic."""
    return float(model.diagnostics.eta)


# ---------------------------------------------------------------------------


def _fit_gsa(cfg: GsaConfig, cal, default_thr, seed, h0_sampler):
    basis = cfg.basis or select_basis(cal)
    model = calibrate(cal, basis, cfg.mde, cfg.w, rule=cfg.rule)
    spec = cfg.threshold or default_thr
    h = compute_threshold(model, spec, cal_sample=cal, seed=seed, h0_sampler=h0_sampler)
    return model.with_threshold(h, spec.kind)


def _run_chunk(manifest: ExperimentManifest, start: int, stop: int):
    """Alarms and diagnostics for trials [start, stop) of every config."""
    spec = manifest.series
    cals, tests = [], []
    for i in range(start, stop):
        rng = trial_rng(manifest.base_seed, i)
        cal = sample(spec.h0, manifest.n_cal, rng)
        x = generate_series_rng(spec, rng)
        if manifest.ar1_rho is not None:
            cal = ar1_wrap(cal, manifest.ar1_rho)
            x = ar1_wrap(x, manifest.ar1_rho)
        cals.append(cal)
        tests.append(x)
    X = np.stack(tests)
    n = stop - start
    out = []
    for ci, cfg in enumerate(manifest.configs):
        alarms = np.zeros(n, dtype=np.int64)
        errors = [None] * n
        diag = np.full((n, 5), np.nan)  # j_s, eta, cond_f, threshold, e0
        if isinstance(cfg, BaselineConfig):
            for j, cal in enumerate(cals):
                try:
                    b = calibrate_baseline(cfg.kind, cal, cfg.eps, cfg.lam, cfg.L, cfg.k)
                    alarms[j] = baseline_alarms(b, X[j])[0]
                except GsaError as exc:
                    errors[j] = f"{exc.code}: {exc}"
        else:
            lam = np.zeros_like(X)
            hs = np.full(n, np.inf)
            for j, cal in enumerate(cals):
                try:
                    seed = int(np.random.SeedSequence([manifest.base_seed, start + j, ci]).generate_state(1)[0])
                    h0_sampler = None
                    if manifest.ar1_rho is None:
                        h0_sampler = _h0_sampler(spec.h0)
                    model = _fit_gsa(cfg, cal, manifest.threshold, seed, h0_sampler)
                    lam[j] = llr_array(model, X[j])
                    hs[j] = model.threshold
                    d = model.diagnostics
                    diag[j] = (d.j_s, d.eta, d.cond_f, model.threshold, model.e0)
                except GsaError as exc:
                    errors[j] = f"{exc.code}: {exc}"
                    lam[j] = -np.inf
            alarms = scan(lam, cfg.rule, hs)[0]
        out.append((alarms, errors, diag))
    return out


def _h0_sampler(dist):
    def draw(rng, size):
        n = int(np.prod(size))
        return sample(dist, n, rng).reshape(size)

    return draw


def _summarize(alarms, errors, diag, tau, n_total):
    n = len(alarms)
    failed = np.array([e is not None for e in errors])
    false = (alarms > 0) & (alarms < tau) & ~failed
    detected = (alarms >= tau) & (alarms <= n_total) & ~failed
    delays = (alarms[detected] - tau).astype(float)
    n_det = int(detected.sum())
    add = float(delays.mean()) if n_det else None
    add_se = float(delays.std(ddof=1) / math.sqrt(n_det)) if n_det >= 2 else None
    ok = ~failed
    mean = lambda col: float(np.mean(diag[ok, col])) if ok.any() and np.all(np.isfinite(diag[ok, col])) else None
    n_false = int(false.sum())
    return {
        "n_trials": n,
        "n_false": n_false,
        "n_detected": n_det,
        "n_missed": n - n_false - n_det,
        "n_failed": int(failed.sum()),
        "far": n_false / n,
        "det_rate": n_det / n,
        "miss_rate": (n - n_false - n_det) / n,
        "add_mean": add,
        "add_se": add_se,
        "j_s": mean(0),
        "eta": mean(1),
        "rho": mean(1),
        "cond_f": mean(2),
        "threshold_mean": mean(3),
        "e0_mean": mean(4),
        "alarms": [int(a) if a > 0 else None for a in alarms],
        "errors": sorted({e for e in errors if e is not None}),
    }


def run_experiment(manifest: ExperimentManifest) -> dict:
    """MetricsReport as a plain dict (see report_json for the canonical text)."""
    n = manifest.n_trials
    bounds = [(s, min(s + manifest.chunk, n)) for s in range(0, n, manifest.chunk)]
    if manifest.workers > 1 and len(bounds) > 1:
        with ProcessPoolExecutor(max_workers=manifest.workers) as pool:
            parts = list(pool.map(_run_chunk, [manifest] * len(bounds), *zip(*bounds)))
    else:
        parts = [_run_chunk(manifest, a, b) for a, b in bounds]
    configs = {}
    for ci, cfg in enumerate(manifest.configs):
        alarms = np.concatenate([p[ci][0] for p in parts])
        errors = [e for p in parts for e in p[ci][1]]
        diag = np.concatenate([p[ci][2] for p in parts])
        configs[cfg.name] = _summarize(alarms, errors, diag, manifest.series.tau, manifest.series.n_total)
    if manifest.reference is not None:
        ref = configs[manifest.reference]["add_mean"]
        for name, rep in configs.items():
            rep["efficiency_ratio"] = (ref / rep["add_mean"]) if ref is not None and rep["add_mean"] else None
    return {"schema_version": SCHEMA_VERSION, "manifest": manifest.to_dict(), "configs": configs}


def report_json(report: dict) -> str:
    return jsonio.dumps(report, REPORT_DIGITS) + "\n"


def alarms_csv(report: dict) -> str:
    names = sorted(report["configs"])
    lines = ["trial," + ",".join(names)]
    n = report["manifest"]["n_trials"]
    for i in range(n):
        row = [str(i)]
        for name in names:
            a = report["configs"][name]["alarms"][i]
            row.append("" if a is None else str(a))
        lines.append(",".join(row))
    return "\n".join(lines) + "\n"


# operating characteristic ----------------------------------------------------


def _post_change_sampler(spec: SeriesSpec):
    h0, ch = spec.h0, spec.change
    if isinstance(ch, DistributionSwap):
        return _h0_sampler(ch.dist)
    base = _h0_sampler(h0)
    if isinstance(ch, MeanShift):
        return lambda rng, size: base(rng, size) + ch.delta * h0.std
    return lambda rng, size: base(rng, size) * ch.factor


def oc_curve(manifest: ExperimentManifest, arl0_grid, runs: int = 200, add_trials: int | None = None,
             tol: float = 0.05, max_iter: int = 12, verify_runs: int | None = None) -> list[dict]:
    """ADD at thresholds matched to each in-control ARL0 target.

    For every GSA config one model is calibrated on trial 0's calibration
    sample; for each target the threshold comes from ARL0 bisection against
    the true H0 generator, the achieved ARL0 is re-estimated on
    ``verify_runs`` (default max(runs, 1000)) independent streams, and ADD is measured on post-change streams that change at the
    first sample. Streams are censored at 10 x target; censored runs count
    at the cap.
    """
    if any(a < 50 for a in arl0_grid):
        raise ParameterError("OC grid values must be >= 50")
    add_trials = add_trials or manifest.n_trials
    verify_runs = verify_runs or max(runs, 1000)
    spec = manifest.series
    h0_sampler = _h0_sampler(spec.h0)
    h1_sampler = _post_change_sampler(spec)
    rows = []
    for ci, cfg in enumerate(manifest.configs):
        if not isinstance(cfg, GsaConfig):
            raise ParameterError("OC curves are computed for GSA configs only")
        cal = sample(spec.h0, manifest.n_cal, trial_rng(manifest.base_seed, 0))
        model = calibrate(cal, cfg.basis or select_basis(cal), cfg.mde, cfg.w, rule=cfg.rule)
        lam0 = lambda rng, size: llr_array(model, h0_sampler(rng, size))
        lam1 = lambda rng, size: llr_array(model, h1_sampler(rng, size))
        for gi, target in enumerate(arl0_grid):
            seed = int(np.random.SeedSequence([manifest.base_seed, ci, gi]).generate_state(1)[0])
            row = {"config": cfg.name, "arl0_target": float(target)}
            try:
                res = arl0_bisect(model, target, runs, max_iter, tol, seed, cfg.rule, h0_sampler)
            except CalibrationFailedError as exc:
                row.update(arl0_achieved=None, add=None, add_se=None, h=None, error=str(exc))
                rows.append(row)
                continue
            cap = int(10 * target)
            achieved = estimate_arl0(lam0, cfg.rule, res.h, verify_runs, cap, seed + 1)
            delays, n_cens = _delays(lam1, cfg.rule, res.h, add_trials, cap, seed + 2)
            row.update(
                arl0_achieved=achieved,
                add=float(delays.mean()),
                add_se=float(delays.std(ddof=1) / math.sqrt(len(delays))) if len(delays) > 1 else None,
                h=res.h,
                iterations=res.iterations,
                censored=n_cens,
            )
            rows.append(row)
    return rows


def _delays(lam_sampler, rule, h, n, cap, seed):
    rngs = [np.random.default_rng(np.random.SeedSequence([int(seed), i])) for i in range(n)]
    alarm = np.zeros(n, dtype=np.int64)
    stats = np.zeros(n) if rule != "srp" else np.full(n, -np.inf)
    live = np.arange(n)
    done = 0
    width = 256
    while done < cap and live.size:
        wdt = min(width, cap - done)
        lam = np.stack([lam_sampler(rngs[i], wdt) for i in live])
        a, st = scan(lam, rule, h, stats[live], offset=done)
        stats[live] = st
        alarm[live] = a
        live = live[a == 0]
        done += wdt
        width = min(width * 2, 8192)
    times = np.where(alarm > 0, alarm, cap)
    # change at the first sample: detection at t means delay t - 1
    return (times - 1).astype(float), int((alarm == 0).sum())


def oc_csv(rows) -> str:
    lines = ["config,arl0_target,arl0_achieved,add,add_se"]
    for r in rows:
        vals = [r["config"]] + ["" if r.get(k) is None else repr(float(r[k]))
                                for k in ("arl0_target", "arl0_achieved", "add", "add_se")]
        lines.append(",".join(vals))
    return "\n".join(lines) + "\n"
