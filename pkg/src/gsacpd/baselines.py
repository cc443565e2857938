"""
Classical comparison detectors: sign CUSUM, MAD-normalized CUSUM and EWMA.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .detector import AlarmResult
from .errors import DegenerateSampleError, ParameterError

MAD_SCALE = 1.4826
BASELINE_KINDS = ("sign_cusum", "mad_cusum", "ewma")


@dataclass(frozen=True)
class BaselineSpec:
    kind: str
    eps: float = 0.005
    lam: float = 0.1
    L: float = 3.5
    k: float = 0.5
    median: float = 0.0
    mad: float = 1.0  # already scaled to sigma units
    mean: float = 0.0
    sd: float = 1.0

    @property
    def threshold(self):
        if self.kind in ("sign_cusum", "mad_cusum"):
            # PE level for a unit-variance increment with mean -k under H0
            return -self.k + math.sqrt(1.0 / self.eps)
        return self.L * self.sd * math.sqrt(self.lam / (2 - self.lam))


def calibrate_baseline(kind: str, sample, eps: float = 0.005, lam: float = 0.1, L: float = 3.5,
                       k: float = 0.5) -> BaselineSpec:
    if kind not in BASELINE_KINDS:
        raise ParameterError(f"unknown baseline {kind!r}")
    if not 0 < lam <= 1:
        raise ParameterError("EWMA smoothing must lie in (0, 1]")
    if not L > 0:
        raise ParameterError("EWMA L must be > 0")
    if not 0 < eps < 1:
        raise ParameterError("eps must lie in (0, 1)")
    x = np.asarray(sample, dtype=float)
    if x.size < 30:
        raise ParameterError(f"baseline calibration needs at least 30 values, got {x.size}")
    med = float(np.median(x))
    mad = MAD_SCALE * float(np.median(np.abs(x - med)))
    if kind == "mad_cusum" and mad <= 0:
        raise DegenerateSampleError("median absolute deviation is zero")
    sd = float(np.std(x))
    if kind == "ewma" and sd <= 0:
        raise DegenerateSampleError("constant calibration sample")
    if kind == "sign_cusum" and np.all(x == med):
        raise DegenerateSampleError("constant calibration sample")
    return BaselineSpec(kind, eps, lam, L, k, med, mad if mad > 0 else 1.0, float(np.mean(x)), sd)


def baseline_alarms(spec: BaselineSpec, X) -> np.ndarray:
    """First alarm (1-based, 0 = none) for each row of X."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    runs, T = X.shape
    alarm = np.zeros(runs, dtype=np.int64)
    h = spec.threshold
    if spec.kind == "sign_cusum":
        z = np.sign(X - spec.median)
        up = np.zeros(runs)
        dn = np.zeros(runs)
    elif spec.kind == "mad_cusum":
        z = (X - spec.median) / spec.mad - spec.k
        up = np.zeros(runs)
    else:
        z = np.full(runs, spec.mean)
    live = np.arange(runs)
    for t in range(T):
        if spec.kind == "sign_cusum":
            col = z[live, t]
            up[live] = np.maximum(0.0, up[live] + col - spec.k)
            dn[live] = np.maximum(0.0, dn[live] - col - spec.k)
            hit = (up[live] > h) | (dn[live] > h)
        elif spec.kind == "mad_cusum":
            up[live] = np.maximum(0.0, up[live] + z[live, t])
            hit = up[live] > h
        else:
            z[live] = spec.lam * X[live, t] + (1 - spec.lam) * z[live]
            hit = np.abs(z[live] - spec.mean) > h
        if hit.any():
            alarm[live[hit]] = t + 1
            live = live[~hit]
            if live.size == 0:
                break
    return alarm


def run_baseline(spec: BaselineSpec, series) -> AlarmResult:
    a = int(baseline_alarms(spec, np.asarray(series, dtype=float)[None, :])[0])
    return AlarmResult(a if a > 0 else None)
