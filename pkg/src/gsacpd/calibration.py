"""
Offline calibration: robust H0 moments, the H1 reference (MDE), the linear
system F K = Y and the derived statistics of the approximated LLR

    llr(x) = k0 + K . phi(x)

F = (cov0 + cov1) / 2, Y = m - u, k0 = -K.(m + u) / 2.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field, replace

import numpy as np

from .basis import BasisSpec, eval_basis
from .errors import CalibrationError, DegenerateSampleError, NumericError, ParameterError, ZeroMdeError

# minimum / recommended calibration sizes by highest moment order touched
_MIN_N = {1: 30, 2: 100, 3: 500}
_REC_N = {1: 100, 2: 500, 3: 1000}


def min_calibration_size(order: int) -> int:
    return _MIN_N[min(order, 3)]


@dataclass(frozen=True)
class H0Moments:
    u: np.ndarray
    cov0: np.ndarray
    n_cal: int = 0


@dataclass(frozen=True)
class H1Spec:
    m: np.ndarray
    cov1: np.ndarray


@dataclass(frozen=True)
class MdeSpec:
    """Reference change the detector is tuned to.

    mode ``shift``: delta is a scalar mean shift in units of the sample sd;
    mode ``relative``: m_i = u_i (1 + delta_i);
    mode ``additive``: m_i = u_i + delta_i.
    ``var_inflation`` sets cov1 = cov0 (1 + var_inflation). With
    ``cov1="shifted"`` (shift mode only) cov1 is instead the covariance of the
    basis over the shifted sample.
    """

    delta: float | tuple = 0.5
    mode: str = "shift"
    var_inflation: float = 0.0
    cov1: str = "equal"

    def __post_init__(self):
        if self.mode not in ("shift", "relative", "additive"):
            raise ParameterError(f"unknown MDE mode {self.mode!r}")
        if self.mode == "shift":
            if np.ndim(self.delta) != 0:
                raise ParameterError("shift mode takes a scalar delta")
        else:
            object.__setattr__(self, "delta", tuple(float(v) for v in np.atleast_1d(self.delta)))
        if not self.var_inflation > -1:
            raise ParameterError("var_inflation must be > -1")
        if self.cov1 not in ("equal", "shifted"):
            raise ParameterError(f"unknown cov1 mode {self.cov1!r}")
        if self.cov1 == "shifted" and self.mode != "shift":
            raise ParameterError("cov1='shifted' needs shift-mode MDE")

    def to_dict(self):
        d = self.delta if self.mode == "shift" else list(self.delta)
        out = {"delta": d, "mode": self.mode, "var_inflation": self.var_inflation}
        if self.cov1 != "equal":
            out["cov1"] = self.cov1
        return out

    @classmethod
    def from_dict(cls, d):
        delta = d.get("delta", 0.5)
        return cls(delta if np.ndim(delta) == 0 else tuple(delta), d.get("mode", "shift"),
                   float(d.get("var_inflation", 0.0)), d.get("cov1", "equal"))


@dataclass(frozen=True)
class SolveDiagnostics:
    cond_f: float
    solver_level: str
    j_s: float = math.nan
    eta: float = math.nan
    ridge_lambda_used: float = 0.0

    def to_dict(self):
        return {
            "cond_f": self.cond_f,
            "solver_level": self.solver_level,
            "j_s": self.j_s,
            "eta": self.eta,
            "ridge_lambda_used": self.ridge_lambda_used,
        }


@dataclass(frozen=True)
class CalibratedModel:
    """Deployable detector state. ``threshold`` is None until a rule sets it."""

    basis: BasisSpec
    k: np.ndarray
    k0: float
    e0: float
    var0: float
    diagnostics: SolveDiagnostics
    threshold: float | None = None
    threshold_kind: str | None = None
    rule: str = "cusum"
    log1p: bool = False
    extra: dict = field(default_factory=dict)

    def with_threshold(self, h, kind, rule=None):
        return replace(self, threshold=float(h), threshold_kind=kind, rule=rule or self.rule)

    def llr(self, x):
        return self.k0 + eval_basis(self.basis, x) @ self.k

    def to_dict(self):
        d = {
            "basis": self.basis.to_dict(),
            "k": [float(v) for v in self.k],
            "k0": float(self.k0),
            "e0": float(self.e0),
            "var0": float(self.var0),
            "threshold": None if self.threshold is None else float(self.threshold),
            "threshold_kind": self.threshold_kind,
            "rule": self.rule,
            "log1p": bool(self.log1p),
            "diagnostics": self.diagnostics.to_dict(),
        }
        if self.extra:
            d["extra"] = self.extra
        return d

    @classmethod
    def from_dict(cls, d):
        try:
            diag = d["diagnostics"]
            k = np.asarray(d["k"], dtype=float)
            basis = BasisSpec.from_dict(d["basis"])
            if k.shape != (basis.order,):
                raise ParameterError("length of k does not match basis order")
            return cls(
                basis=basis,
                k=k,
                k0=float(d["k0"]),
                e0=float(d["e0"]),
                var0=float(d["var0"]),
                diagnostics=SolveDiagnostics(
                    float(diag["cond_f"]), str(diag["solver_level"]), float(diag["j_s"]),
                    float(diag["eta"]), float(diag.get("ridge_lambda_used", 0.0))),
                threshold=None if d.get("threshold") is None else float(d["threshold"]),
                threshold_kind=d.get("threshold_kind"),
                rule=str(d.get("rule", "cusum")),
                log1p=bool(d.get("log1p", False)),
                extra=dict(d.get("extra", {})),
            )
        except (KeyError, TypeError, ValueError) as exc:
            if isinstance(exc, ParameterError):
                raise
            raise ParameterError(f"malformed model: {exc}") from None


# ---------------------------------------------------------------------------


def winsorize(sample, alpha: float = 0.10) -> np.ndarray:
    """Clip at the alpha/2 and 1-alpha/2 percentiles (linear interpolation)."""
    x = np.asarray(sample, dtype=float)
    if not 0 <= alpha < 0.5:
        raise ParameterError("winsorization level must lie in [0, 0.5)")
    if x.size < 10:
        raise ParameterError("winsorization needs at least 10 values")
    if alpha == 0:
        return x.copy()
    lo, hi = np.quantile(x, [alpha / 2, 1 - alpha / 2])
    return np.clip(x, lo, hi)


def _check_size(n, order):
    need = min_calibration_size(order)
    if n < need:
        raise CalibrationError(
            f"calibration sample too short for order {order}: need n >= {need}, got {n}")
    rec = _REC_N[min(order, 3)]
    if n < rec:
        warnings.warn(f"calibration sample n={n} is below the recommended {rec} for order {order}",
                      stacklevel=3)


def estimate_h0(sample, basis: BasisSpec, w: float = 0.10) -> H0Moments:
    x = np.asarray(sample, dtype=float)
    _check_size(x.size, basis.order)
    if not np.all(np.isfinite(x)):
        raise NumericError("calibration sample contains non-finite values")
    B = eval_basis(basis, winsorize(x, w))
    u = B.mean(axis=0)
    D = B - u
    cov0 = D.T @ D / x.size
    cov0 = 0.5 * (cov0 + cov0.T)
    if np.any(np.diag(cov0) <= 0):
        raise DegenerateSampleError("a basis function is constant on the calibration sample")
    return H0Moments(u, cov0, x.size)


def specify_h1_mde(h0: H0Moments, basis: BasisSpec, mde: MdeSpec, sample=None, w: float = 0.10) -> H1Spec:
    if mde.mode == "shift":
        if mde.delta == 0:
            raise ZeroMdeError("MDE delta is zero; the change would be invisible")
        if sample is None:
            raise ParameterError("shift-mode MDE needs the calibration sample")
        x = np.asarray(sample, dtype=float)
        sigma = float(np.std(x))
        B1 = eval_basis(basis, winsorize(x, w) + mde.delta * sigma)
        m = B1.mean(axis=0)
        if mde.cov1 == "shifted":
            D = B1 - m
            cov1 = D.T @ D / x.size
            return H1Spec(m, 0.5 * (cov1 + cov1.T) * (1.0 + mde.var_inflation))
    else:
        d = np.asarray(mde.delta, dtype=float)
        if d.size == 1:
            d = np.full(basis.order, d.item())
        if d.shape != (basis.order,):
            raise ParameterError(f"per-moment MDE needs {basis.order} deltas, got {d.size}")
        if not np.any(d):
            raise ZeroMdeError("all MDE components are zero")
        m = h0.u * (1 + d) if mde.mode == "relative" else h0.u + d
    cov1 = h0.cov0 * (1.0 + mde.var_inflation)
    return H1Spec(np.asarray(m, dtype=float), cov1)


def build_system(h0: H0Moments, h1: H1Spec):
    if np.shape(h0.u) != np.shape(h1.m) or np.shape(h0.cov0) != np.shape(h1.cov1):
        raise ParameterError("H0/H1 dimensions differ")
    F = 0.5 * (np.asarray(h0.cov0) + np.asarray(h1.cov1))
    Y = np.asarray(h1.m) - np.asarray(h0.u)
    return F, Y


def solve_fk(F, Y, ridge_lambda=1e-6, cond_gate_direct=1e6, cond_gate_ridge=1e8, svd_cutoff=1e-10):
    """Solve F K = Y with a direct / ridge / truncated-SVD ladder keyed on cond(F)."""
    F = np.atleast_2d(np.asarray(F, dtype=float))
    Y = np.atleast_1d(np.asarray(Y, dtype=float))
    if not (np.all(np.isfinite(F)) and np.all(np.isfinite(Y))):
        raise NumericError("F or Y has non-finite entries")
    if not np.any(Y):
        raise ZeroMdeError("Y is the zero vector; H1 equals H0 in every basis moment")
    U, sv, Vt = np.linalg.svd(F)
    cond = float(sv[0] / sv[-1]) if sv[-1] > 0 else math.inf
    if cond < cond_gate_direct:
        try:
            K = np.linalg.solve(F, Y)
            if np.all(np.isfinite(K)):
                return K, SolveDiagnostics(cond, "direct")
        except np.linalg.LinAlgError:
            pass
    elif cond < cond_gate_ridge:
        try:
            K = np.linalg.solve(F + ridge_lambda * np.eye(len(Y)), Y)
            if np.all(np.isfinite(K)):
                return K, SolveDiagnostics(cond, "ridge", ridge_lambda_used=ridge_lambda)
        except np.linalg.LinAlgError:
            pass
    keep = sv >= svd_cutoff
    if not np.any(keep):
        raise NumericError("F has no singular value above the cutoff")
    inv = np.where(keep, 1.0 / np.where(keep, sv, 1.0), 0.0)
    K = Vt.T @ (inv * (U.T @ Y))
    return K, SolveDiagnostics(cond, "svd")


def offset_k0(K, u, m) -> float:
    return float(-0.5 * np.dot(K, np.asarray(m) + np.asarray(u)))


def llr_stats(K, k0, h0: H0Moments, h1: H1Spec):
    """(e0, var0, J, eta) of the approximated LLR."""
    K = np.asarray(K, dtype=float)
    Y = np.asarray(h1.m) - np.asarray(h0.u)
    e0 = float(k0 + K @ h0.u)
    var0 = float(K @ h0.cov0 @ K)
    j_s = float(K @ Y)
    if not var0 > 0:
        raise DegenerateSampleError(f"variance of the statistic under H0 is {var0!r}")
    return e0, var0, j_s, j_s / math.sqrt(var0)


def calibrate_moments(basis: BasisSpec, h0: H0Moments, h1: H1Spec, rule="cusum", **solver) -> CalibratedModel:
    """Fit K, k0 and diagnostics from given moments (also the exact-moment entry point)."""
    F, Y = build_system(h0, h1)
    K, diag = solve_fk(F, Y, **solver)
    k0 = offset_k0(K, h0.u, h1.m)
    e0, var0, j_s, eta = llr_stats(K, k0, h0, h1)
    diag = SolveDiagnostics(diag.cond_f, diag.solver_level, j_s, eta, diag.ridge_lambda_used)
    return CalibratedModel(basis, K, k0, e0, var0, diag, rule=rule)


def calibrate_exact(basis: BasisSpec, u, cov0, m, cov1=None, rule="cusum") -> CalibratedModel:
    u = np.atleast_1d(np.asarray(u, dtype=float))
    cov0 = np.atleast_2d(np.asarray(cov0, dtype=float))
    cov1 = cov0 if cov1 is None else np.atleast_2d(np.asarray(cov1, dtype=float))
    return calibrate_moments(basis, H0Moments(u, cov0), H1Spec(np.atleast_1d(np.asarray(m, float)), cov1), rule)


def calibrate(sample, basis: BasisSpec, mde: MdeSpec, w: float = 0.10, rule="cusum", log1p=False,
              **solver) -> CalibratedModel:
    """Phase-1 pipeline on a calibration sample. The result has no threshold yet."""
    x = np.asarray(sample, dtype=float)
    if log1p:
        x = log1p_transform(x)
    h0 = estimate_h0(x, basis, w)
    h1 = specify_h1_mde(h0, basis, mde, x, w)
    model = calibrate_moments(basis, h0, h1, rule, **solver)
    if log1p:
        model = replace(model, log1p=True)
    return model


def log1p_transform(x):
    x = np.asarray(x, dtype=float)
    if np.any(x <= -1):
        raise ParameterError("log1p preprocessing needs all values > -1")
    return np.log1p(x)


def orthonormalize(h0: H0Moments, ridge=1e-10):
    """Symmetric whitening W with W cov0 W^T = I; returns (W, u)."""
    C = np.atleast_2d(np.asarray(h0.cov0, dtype=float))
    lam, V = np.linalg.eigh(0.5 * (C + C.T))
    if lam.min() < -1e-10:
        raise NumericError(f"covariance has a negative eigenvalue {lam.min():.3g}")
    lam = np.maximum(lam, 0.0)
    W = V @ np.diag(1.0 / np.sqrt(lam + ridge)) @ V.T
    return W, np.asarray(h0.u)


def select_order(sample, family="poly", s_max=4, rel_gain=0.05, mde: MdeSpec | None = None, w=0.10,
                 clip_bound=10.0):
    """Smallest s whose next relative J gain is below ``rel_gain``; returns (s, [J(1)..J(s_max)])."""
    if not 1 <= s_max <= 6:
        raise ParameterError("s_max must be in [1, 6]")
    mde = mde or MdeSpec()
    js = []
    for s in range(1, s_max + 1):
        model = calibrate(sample, BasisSpec(family, s, clip_bound), mde, w)
        js.append(model.diagnostics.j_s)
    chosen = s_max
    for s in range(1, s_max):
        gain = (js[s] - js[s - 1]) / js[s - 1]
        if gain < rel_gain:
            chosen = s
            break
    return chosen, js
