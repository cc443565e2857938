"""
Online phase: per-sample statistic lambda_t = k0 + K . phi(x_t) and the
three stopping rules

    cusum   g_t = max(0, g_{t-1} + lambda_t)
    grsh    S_t = S_{t-1} + lambda_t          (additive, no reset)
    srp     R_t = (1 + R_{t-1}) exp(lambda_t)

An alarm is raised the first time the statistic is strictly above the
threshold. The state then freezes.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from .basis import eval_basis
from .errors import NumericError, ParameterError, StateError

RULES = ("cusum", "grsh", "srp")
_LOG_SWITCH = math.log(1e300)


def _check_rule(rule):
    if rule not in RULES:
        raise ParameterError(f"unknown stopping rule {rule!r}")


@dataclass(frozen=True)
class DetectorState:
    rule: str = "cusum"
    stat: float = 0.0
    t: int = 0
    alarmed_at: int | None = None
    log_domain: bool = False  # srp only: stat holds ln R

    @property
    def value(self):
        """The statistic on its natural scale (R for srp, possibly inf)."""
        if self.log_domain:
            return math.exp(self.stat) if self.stat < 709 else math.inf
        return self.stat

    def reset(self):
        return DetectorState(self.rule)


def _srp_update(stat, log_domain, lam):
    if log_domain:
        return float(np.logaddexp(0.0, stat)) + lam, True
    if math.log1p(stat) + lam > _LOG_SWITCH:
        return math.log1p(stat) + lam, True
    return (1.0 + stat) * math.exp(lam), False


def _exceeds(stat, log_domain, h):
    if log_domain:
        return h <= 0 or stat > math.log(h)
    return stat > h


def step(state: DetectorState, lam: float, h: float):
    """Advance one sample; returns (new_state, alarm)."""
    if state.alarmed_at is not None:
        raise StateError(f"detector already alarmed at t={state.alarmed_at}; reset before stepping")
    log_domain = state.log_domain
    if state.rule == "cusum":
        stat = max(0.0, state.stat + lam)
    elif state.rule == "grsh":
        stat = state.stat + lam
    elif state.rule == "srp":
        stat, log_domain = _srp_update(state.stat, log_domain, lam)
    else:
        raise ParameterError(f"unknown stopping rule {state.rule!r}")
    t = state.t + 1
    alarm = _exceeds(stat, log_domain, h)
    return replace(state, stat=stat, t=t, alarmed_at=t if alarm else None, log_domain=log_domain), alarm


def llr(model, x) -> float:
    x = float(x)
    if not math.isfinite(x):
        raise NumericError(f"non-finite observation {x!r}")
    if model.log1p:
        x = math.log1p(x)
    return float(model.k0 + eval_basis(model.basis, x) @ model.k)


def llr_array(model, x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if model.log1p:
        x = np.log1p(x)
    return model.k0 + eval_basis(model.basis, x) @ model.k


@dataclass
class AlarmResult:
    first_alarm: int | None
    stat: float | None = None
    lam: float | None = None
    trajectory: list | None = None  # rows (t, lambda, stat)


def run(model, series, trajectory: bool = False, rule: str | None = None, h: float | None = None) -> AlarmResult:
    """Feed a series through the model's stopping rule; 1-based first alarm index."""
    rule = rule or model.rule
    h = model.threshold if h is None else h
    if h is None:
        raise ParameterError("model has no threshold")
    _check_rule(rule)
    lam = llr_array(model, series)
    if not np.all(np.isfinite(lam)):
        raise NumericError("non-finite observation in series")
    state = DetectorState(rule)
    traj = [] if trajectory else None
    for v in lam:
        state, alarm = step(state, float(v), h)
        if traj is not None:
            traj.append((state.t, float(v), state.value))
        if alarm:
            return AlarmResult(state.t, state.value, float(v), traj)
    return AlarmResult(None, None, None, traj)


# batched scans ------------------------------------------------------------


def init_stats(rule, n):
    _check_rule(rule)
    return np.full(n, -np.inf) if rule == "srp" else np.zeros(n)


def scan(lam: np.ndarray, rule: str, h, stats: np.ndarray | None = None, offset: int = 0):
    """Run many independent streams at once.

    ``lam`` has shape (runs, T) and ``h`` is a scalar or one threshold per
    run. Returns (alarm, stats): alarm[i] is the 1-based index (plus
    ``offset``) of the first crossing or 0, and ``stats`` holds the
    statistics after the last column (ln R for srp) so long streams can be
    processed in chunks.
    """
    lam = np.atleast_2d(lam)
    runs, T = lam.shape
    stats = init_stats(rule, runs) if stats is None else stats.copy()
    alarm = np.zeros(runs, dtype=np.int64)
    level = np.broadcast_to(np.asarray(h, dtype=float), (runs,))
    if rule == "srp":
        with np.errstate(divide="ignore"):
            level = np.log(np.maximum(level, 0.0))
    live = np.arange(runs)
    for t in range(T):
        col = lam[live, t]
        s = stats[live]
        if rule == "cusum":
            s = np.maximum(0.0, s + col)
        elif rule == "grsh":
            s = s + col
        else:
            s = np.logaddexp(0.0, s) + col
        stats[live] = s
        hit = s > level[live]
        if hit.any():
            alarm[live[hit]] = offset + t + 1
            live = live[~hit]
            if live.size == 0:
                break
    return alarm, stats


# hybrid burn-in ------------------------------------------------------------


@dataclass(frozen=True)
class BurninState:
    stage: str = "cold"  # cold -> accumulating -> full
    n: int = 0
    mean: float = 0.0
    ewma_m2: float = 0.0
    ewma_m3: float = 0.0
    ewma_m4: float = 0.0
    n_acc: int = 0
    alpha: float = 0.05
    n_min: int = 50
    n_full: int = 500

    def kurtosis(self):
        """Kurtosis m4/m2^2 of the EWMA moments, or None while undefined."""
        if self.ewma_m2 <= 0:
            return None
        return self.ewma_m4 / self.ewma_m2**2

    def relative_se(self):
        k = self.kurtosis()
        if k is None or self.n_acc == 0 or k <= 0:
            return math.inf
        return math.sqrt(24.0 / self.n_acc) / k


def burnin_step(b: BurninState, model_linear, model_full, x: float):
    """Returns (state, active model id 'linear' or 'full', lambda of the active model)."""
    n = b.n + 1
    a = b.alpha
    if b.n == 0:
        mean = float(x)
    else:
        mean = b.mean
    m2, m3, m4, n_acc = b.ewma_m2, b.ewma_m3, b.ewma_m4, b.n_acc
    stage = b.stage
    if n >= b.n_min:
        d = x - mean
        if n_acc == 0:
            m2, m3, m4 = d * d, d**3, d**4
        else:
            m2 = a * d * d + (1 - a) * m2
            m3 = a * d**3 + (1 - a) * m3
            m4 = a * d**4 + (1 - a) * m4
        n_acc += 1
        if stage == "cold":
            stage = "accumulating"
    mean = a * x + (1 - a) * mean if b.n > 0 else mean
    nb = replace(b, stage=stage, n=n, mean=mean, ewma_m2=m2, ewma_m3=m3, ewma_m4=m4, n_acc=n_acc)
    if stage == "accumulating" and model_full is not None and n >= b.n_full and nb.relative_se() < 0.1:
        nb = replace(nb, stage="full")
    if nb.stage == "full" and model_full is not None:
        return nb, "full", llr(model_full, x)
    return nb, "linear", llr(model_linear, x)
