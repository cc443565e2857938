"""
Basis families for the approximated log-likelihood ratio.

    poly     x, x^2, ..., x^s
    log      x, ln|x|, x ln|x|, (ln|x|)^2          (truncated to s)
    frac     sgn(x) |x|^a_i,  a_i = 1/(i+1) by default
    hermite  probabilists' He_1 .. He_s

The constant function is never part of the vector; the offset lives in k0.
Every component is clipped to [-clip_bound, clip_bound].
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import DegenerateSampleError, ParameterError

FAMILIES = ("poly", "log", "frac", "hermite")
MAX_ORDER = 6
LOG_FLOOR = 1e-12


@dataclass(frozen=True)
class BasisSpec:
    family: str = "poly"
    order: int = 1
    clip_bound: float = 10.0
    frac_exponents: tuple | None = None

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ParameterError(f"unknown basis family {self.family!r}")
        if not (1 <= int(self.order) <= MAX_ORDER) or int(self.order) != self.order:
            raise ParameterError(f"order must be an integer in [1, {MAX_ORDER}]")
        if self.family == "log" and self.order > 4:
            raise ParameterError("log basis has at most 4 functions")
        if not (math.isfinite(self.clip_bound) and self.clip_bound > 0):
            raise ParameterError("clip_bound must be > 0")
        if self.frac_exponents is not None:
            if self.family != "frac":
                raise ParameterError("frac_exponents only apply to the frac family")
            a = tuple(float(v) for v in self.frac_exponents)
            object.__setattr__(self, "frac_exponents", a)
            if len(a) != self.order:
                raise ParameterError("need exactly `order` frac exponents")
            if any(not (0 < v < 1) for v in a):
                raise ParameterError("frac exponents must lie in (0, 1)")
            if any(a[i + 1] >= a[i] for i in range(len(a) - 1)):
                raise ParameterError("frac exponents must be strictly decreasing")

    @property
    def exponents(self):
        if self.frac_exponents is not None:
            return self.frac_exponents
        return tuple(1.0 / (i + 1) for i in range(1, self.order + 1))

    def with_order(self, order):
        ex = None
        if self.frac_exponents is not None:
            if order > len(self.frac_exponents):
                raise ParameterError("not enough frac exponents for requested order")
            ex = self.frac_exponents[:order]
        return BasisSpec(self.family, order, self.clip_bound, ex)

    def to_dict(self):
        return {
            "family": self.family,
            "order": int(self.order),
            "clip_bound": float(self.clip_bound),
            "exponents": list(self.exponents) if self.family == "frac" else None,
        }

    @classmethod
    def from_dict(cls, d):
        ex = d.get("exponents")
        return cls(
            family=str(d.get("family", "poly")).lower(),
            order=int(d.get("order", 1)),
            clip_bound=float(d.get("clip_bound", 10.0)),
            frac_exponents=tuple(ex) if ex is not None else None,
        )


def _raw(spec: BasisSpec, x: np.ndarray) -> np.ndarray:
    s = spec.order
    out = np.empty(x.shape + (s,))
    if spec.family == "poly":
        p = np.ones_like(x)
        for i in range(s):
            p = p * x
            out[..., i] = p
    elif spec.family == "hermite":
        # He_{n+1} = x He_n - n He_{n-1}
        prev, cur = np.ones_like(x), x.copy()
        out[..., 0] = cur
        for n in range(1, s):
            prev, cur = cur, x * cur - n * prev
            out[..., n] = cur
    elif spec.family == "frac":
        ax, sg = np.abs(x), np.sign(x)
        for i, a in enumerate(spec.exponents):
            out[..., i] = sg * ax**a
    else:
        lx = np.log(np.maximum(np.abs(x), LOG_FLOOR))
        cols = (x, lx, x * lx, lx * lx)
        for i in range(s):
            out[..., i] = cols[i]
    return out


def eval_basis(spec: BasisSpec, x) -> np.ndarray:
    """Clipped basis vector. Scalar input gives shape (s,), array input (..., s)."""
    arr = np.asarray(x, dtype=float)
    with np.errstate(over="ignore", invalid="ignore"):
        out = _raw(spec, arr)
    # overflowed powers come back as +-inf and clip like any other large value
    out = np.nan_to_num(out, nan=0.0, posinf=spec.clip_bound, neginf=-spec.clip_bound)
    return np.clip(out, -spec.clip_bound, spec.clip_bound)


def excess_kurtosis(sample) -> float:
    x = np.asarray(sample, dtype=float)
    if x.size < 4:
        raise DegenerateSampleError("excess kurtosis needs at least 4 values")
    d = x - x.mean()
    m2 = np.mean(d * d)
    if m2 <= 0 or np.ptp(x) == 0:
        raise DegenerateSampleError("constant sample has undefined kurtosis")
    m4 = np.mean(d**4)
    return float(m4 / m2**2 - 3.0)


def hill_estimator(sample, k: int | None = None) -> float:
    """Hill tail index of |x| using the k largest order statistics (default floor(sqrt(n)))."""
    a = np.abs(np.asarray(sample, dtype=float))
    a = np.sort(a[a > 0])
    if k is None:
        k = int(math.isqrt(len(np.asarray(sample))))
    if k < 2:
        raise ParameterError("Hill estimator needs k >= 2")
    if a.size < k + 1:
        raise DegenerateSampleError(f"need at least {k + 1} non-zero values for k={k}, got {a.size}")
    top = a[-k:]
    ref = a[-k - 1]
    mean_log = np.mean(np.log(top / ref))
    if mean_log <= 0:
        raise DegenerateSampleError("tied upper order statistics; tail index undefined")
    return float(1.0 / mean_log)


def basis_rule(kurtosis: float, tail_index: float) -> str:
    """Map (excess kurtosis, Hill index) to a basis family. Boundaries go to the heavier tail."""
    if tail_index < 4 or kurtosis >= 20:
        return "log"
    if tail_index < 8 or kurtosis >= 6:
        return "frac"
    return "poly"


DEFAULT_ORDER = {"poly": 2, "frac": 2, "log": 2}


def select_basis(sample, clip_bound: float = 10.0, order: int | None = None) -> BasisSpec:
    x = np.asarray(sample, dtype=float)
    if x.size < 100:
        raise ParameterError(f"basis selection needs n >= 100 calibration values, got {x.size}")
    fam = basis_rule(excess_kurtosis(x), hill_estimator(x))
    return BasisSpec(fam, order or DEFAULT_ORDER[fam], clip_bound)
