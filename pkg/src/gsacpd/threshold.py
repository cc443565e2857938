"""
Alarm thresholds for the approximated LLR.

Closed forms, with e0 and var0 the H0 mean and variance of the per-sample statistic:

    pe        e0 + sqrt(var0 / eps)
    vp        e0 + (2/3) sqrt(var0 / eps)       eps <= 1/6
    cantelli  e0 + sqrt(var0) sqrt(1/eps - 1)
    ar1       pe with var0 (1 + rho) / (1 - rho)

plus two simulation rules: a block-maximum quantile and an ARL0 bisection.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .detector import llr_array, scan
from .errors import CalibrationFailedError, ParameterError, ValidityError

KINDS = ("pe", "vp", "cantelli", "simulation", "arl0")


def _check_eps(eps):
    if not 0 < eps < 1:
        raise ParameterError(f"eps must lie in (0, 1), got {eps!r}")


def _check_var(var0):
    if not var0 > 0:
        raise ParameterError(f"var0 must be > 0, got {var0!r}")


def pe_threshold(e0: float, var0: float, eps: float) -> float:
    _check_eps(eps)
    _check_var(var0)
    return e0 + math.sqrt(var0 / eps)


def vp_threshold(e0: float, var0: float, eps: float) -> float:
    _check_var(var0)
    if not 0 < eps <= 1 / 6:
        raise ValidityError(f"VP bound requires 0 < eps <= 1/6, got {eps!r}")
    return e0 + (2.0 / 3.0) * math.sqrt(var0 / eps)


def cantelli_threshold(e0: float, var0: float, eps: float) -> float:
    _check_eps(eps)
    _check_var(var0)
    return e0 + math.sqrt(var0) * math.sqrt(1.0 / eps - 1.0)


def ar1_corrected_pe(e0: float, var0: float, rho: float, eps: float) -> float:
    if not abs(rho) < 1:
        raise ParameterError(f"AR(1) coefficient must satisfy |rho| < 1, got {rho!r}")
    return pe_threshold(e0, var0 * (1 + rho) / (1 - rho), eps)


@dataclass(frozen=True)
class ThresholdSpec:
    kind: str = "pe"
    eps: float = 0.01
    scale: float = 2.0
    ar1_rho: float | None = None
    blocks: int = 50
    block_len: int = 500
    arl0_target: float = 1000.0
    tol: float = 0.05
    max_iter: int = 12
    runs: int = 200

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ParameterError(f"unknown threshold kind {self.kind!r}")
        if self.kind != "arl0":
            if not 0 < self.eps <= 1 or (self.eps == 1 and self.kind != "simulation"):
                raise ParameterError("eps must lie in (0, 1)")
        if self.kind == "vp" and self.eps > 1 / 6:
            raise ValidityError("VP bound requires eps <= 1/6")
        if not self.scale > 0:
            raise ParameterError("threshold scale must be > 0")
        if self.ar1_rho is not None and not abs(self.ar1_rho) < 1:
            raise ParameterError("AR(1) coefficient must satisfy |rho| < 1")

    def to_dict(self):
        return dict(self.__dict__)

    @classmethod
    def from_dict(cls, d):
        known = cls.__dataclass_fields__
        bad = set(d) - set(known)
        if bad:
            raise ParameterError(f"unknown threshold fields {sorted(bad)}")
        return cls(**d)


def closed_form(spec: ThresholdSpec, e0: float, var0: float) -> float:
    """PE / VP / Cantelli (with optional AR(1) correction), times the scale factor."""
    v = var0
    if spec.ar1_rho is not None:
        r = spec.ar1_rho
        v = var0 * (1 + r) / (1 - r)
    if spec.kind == "pe":
        h = pe_threshold(e0, v, spec.eps)
    elif spec.kind == "vp":
        h = vp_threshold(e0, v, spec.eps)
    elif spec.kind == "cantelli":
        h = cantelli_threshold(e0, v, spec.eps)
    else:
        raise ParameterError(f"{spec.kind!r} is not a closed-form rule")
    return spec.scale * h


def bootstrap_sampler(cal_sample) -> Callable:
    pool = np.asarray(cal_sample, dtype=float)

    def draw(rng, size):
        return rng.choice(pool, size=size, replace=True)

    return draw


def _lambda_sampler(model, h0_sampler):
    def draw(rng, size):
        return llr_array(model, h0_sampler(rng, size))

    return draw


def mc_threshold(model, cal_sample, eps: float, M: int = 50, B: int = 500, seed: int = 0, rule=None,
                 h0_sampler=None) -> float:
    """(1 - eps)-quantile of per-block maxima of the running statistic under H0.

    Blocks are bootstrapped from ``cal_sample`` unless ``h0_sampler(rng, size)``
    is given. For srp the maxima (and the result) are on the R scale.
    """
    if M < 20 or B < 100:
        raise ParameterError("mc_threshold needs M >= 20 blocks of length B >= 100")
    if not 0 < eps <= 1:
        raise ParameterError("eps must lie in (0, 1]")
    rule = rule or model.rule
    sampler = h0_sampler or bootstrap_sampler(cal_sample)
    rng = np.random.default_rng(np.random.SeedSequence([int(seed), 0x6D63]))
    lam = _lambda_sampler(model, sampler)(rng, (M, B))
    maxima = _block_maxima(lam, rule)
    return float(np.quantile(maxima, 1 - eps))


def _block_maxima(lam, rule):
    """Running maximum of the stopping statistic over each row (srp on the R scale)."""
    if rule == "grsh":
        return np.cumsum(lam, axis=1).max(axis=1)
    M, B = lam.shape
    stat = np.zeros(M) if rule == "cusum" else np.full(M, -np.inf)
    best = stat.copy()
    for t in range(B):
        if rule == "cusum":
            stat = np.maximum(0.0, stat + lam[:, t])
        else:
            stat = np.logaddexp(0.0, stat) + lam[:, t]
        np.maximum(best, stat, out=best)
    return best if rule == "cusum" else np.exp(np.minimum(best, 709.0))


@dataclass
class BisectResult:
    h: float
    arl0: float
    iterations: int
    trace: list  # (h, estimated arl0)


def estimate_arl0(lam_sampler, rule, h, runs, cap, seed, chunk=None):
    """Mean first-crossing time over ``runs`` H0 streams, censored at ``cap``.

    Run i draws from the sub-stream SeedSequence([seed, i]); chunks of
    columns are generated until every run alarmed or hit the cap.
    """
    chunk = chunk or max(256, min(int(cap), 4096))
    rngs = [np.random.default_rng(np.random.SeedSequence([int(seed), i])) for i in range(runs)]
    alarm = np.zeros(runs, dtype=np.int64)
    stats = None
    done = 0
    live = np.arange(runs)
    while done < cap and live.size:
        width = int(min(chunk, cap - done))
        lam = np.stack([lam_sampler(rngs[i], width) for i in live])
        a, st = scan(lam, rule, h, None if stats is None else stats[live], offset=done)
        if stats is None:
            stats = np.zeros(runs) if rule != "srp" else np.full(runs, -np.inf)
        stats[live] = st
        alarm[live] = a
        live = live[a == 0]
        done += width
    times = np.where(alarm > 0, alarm, cap).astype(float)
    return float(times.mean())


def bisect_arl0(arl0_of_h: Callable[[float], float], lo: float, hi: float, target: float, tol=0.05,
                max_iter=12) -> BisectResult:
    """Bisection on a (noisy) increasing map h -> ARL0."""
    trace = []
    h = 0.5 * (lo + hi)
    for it in range(1, max_iter + 1):
        h = 0.5 * (lo + hi)
        arl = arl0_of_h(h)
        trace.append((h, arl))
        if abs(arl - target) / target < tol:
            return BisectResult(h, arl, it, trace)
        if arl < target:
            lo = h
        else:
            hi = h
    raise CalibrationFailedError(
        f"ARL0 bisection did not reach {target} within {tol:.0%} after {max_iter} iterations "
        f"(last h={h:.6g}, ARL0={trace[-1][1]:.6g})", trace)


def arl0_bisect(model, target_arl0: float, runs: int = 200, max_iter: int = 12, tol: float = 0.05,
                seed: int = 0, rule=None, h0_sampler=None, cal_sample=None, bracket=None) -> BisectResult:
    """Threshold whose simulated in-control ARL0 matches ``target_arl0``.

    H0 streams come from ``h0_sampler(rng, size)`` or a bootstrap of
    ``cal_sample``. Runs are censored at 10 x target. The default bracket is
    [0, 4 h] for additive rules and [1, exp(h)] for srp, with h the PE
    threshold e0 + sqrt(var0 / 0.01).
    """
    if target_arl0 < 20:
        raise ParameterError("target ARL0 must be >= 20")
    if runs < 200:
        raise ParameterError("ARL0 estimation needs at least 200 runs")
    rule = rule or model.rule
    if h0_sampler is None:
        if cal_sample is None:
            raise ParameterError("need an H0 sampler or a calibration sample")
        h0_sampler = bootstrap_sampler(cal_sample)
    if bracket is None:
        h_ref = pe_threshold(model.e0, model.var0, 0.01)
        if rule == "srp":
            bracket = (1.0, math.exp(min(max(h_ref, 1.0), 700.0)))
        else:
            bracket = (0.0, 4.0 * max(h_ref, 1e-6))
    sampler = _lambda_sampler(model, h0_sampler)
    cap = int(10 * target_arl0)

    def arl_of(h):
        return estimate_arl0(sampler, rule, h, runs, cap, seed)

    return bisect_arl0(arl_of, bracket[0], bracket[1], target_arl0, tol, max_iter)


def compute_threshold(model, spec: ThresholdSpec, cal_sample=None, seed: int = 0, rule=None,
                      h0_sampler=None) -> float:
    """Threshold for ``model`` under ``spec``. The scale factor applies to closed forms only."""
    rule = rule or model.rule
    if spec.kind in ("pe", "vp", "cantelli"):
        if rule == "srp":
            raise ParameterError("srp thresholds must come from ARL0 bisection (kind 'arl0')")
        return closed_form(spec, model.e0, model.var0)
    if spec.kind == "simulation":
        return mc_threshold(model, cal_sample, spec.eps, spec.blocks, spec.block_len, seed, rule, h0_sampler)
    res = arl0_bisect(model, spec.arl0_target, spec.runs, spec.max_iter, spec.tol, seed, rule, h0_sampler,
                      cal_sample)
    return res.h
