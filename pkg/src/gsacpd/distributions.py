"""
Random variate generation for in-control / out-of-control streams.

Every sampler takes an explicit ``numpy.random.Generator``; nothing touches
global RNG state. Per-trial generators are derived from ``(base_seed, index)``
through ``numpy.random.SeedSequence``, which hashes the entropy words with a
fixed, documented algorithm so streams replicate across machines.

Distribution specs are small frozen dataclasses with ``to_dict``/``from_dict``
so they can live inside JSON manifests.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import ParameterError


def _positive(name, value):
    if not (isinstance(value, (int, float)) and math.isfinite(value) and value > 0):
        raise ParameterError(f"{name} must be finite and > 0, got {value!r}")


@dataclass(frozen=True)
class Gaussian:
    mu: float = 0.0
    sigma: float = 1.0

    def __post_init__(self):
        _positive("sigma", self.sigma)
        if not math.isfinite(self.mu):
            raise ParameterError("mu must be finite")

    def sample(self, n, rng):
        return rng.normal(self.mu, self.sigma, n)

    @property
    def mean(self):
        return float(self.mu)

    @property
    def std(self):
        return float(self.sigma)


@dataclass(frozen=True)
class PearsonIII:
    """Standardized gamma variate with mean 0, variance 1 and skewness gamma3."""

    gamma3: float = 0.0

    def __post_init__(self):
        if not math.isfinite(self.gamma3):
            raise ParameterError("gamma3 must be finite")

    def sample(self, n, rng):
        g = self.gamma3
        if g == 0:
            return Gaussian(0.0, 1.0).sample(n, rng)
        k = (2.0 / abs(g)) ** 2
        z = (rng.standard_gamma(k, n) - k) / math.sqrt(k)
        return z if g > 0 else -z

    mean = 0.0
    std = 1.0


@dataclass(frozen=True)
class StudentT:
    nu: float = 5.0

    def __post_init__(self):
        _positive("nu", self.nu)

    def sample(self, n, rng):
        return rng.standard_t(self.nu, n)

    @property
    def mean(self):
        return 0.0 if self.nu > 1 else math.nan

    @property
    def std(self):
        return math.sqrt(self.nu / (self.nu - 2)) if self.nu > 2 else math.inf


@dataclass(frozen=True)
class Pareto:
    """Pareto with support [1, inf) and density b x^(-b-1)."""

    b: float = 3.0

    def __post_init__(self):
        _positive("b", self.b)

    def sample(self, n, rng):
        # numpy's pareto is the Lomax form; shift by one
        return rng.pareto(self.b, n) + 1.0

    @property
    def mean(self):
        return self.b / (self.b - 1) if self.b > 1 else math.inf

    @property
    def std(self):
        b = self.b
        if b <= 2:
            return math.inf
        return math.sqrt(b / ((b - 1) ** 2 * (b - 2)))


@dataclass(frozen=True)
class LogNormal:
    sigma: float = 0.5

    def __post_init__(self):
        _positive("sigma", self.sigma)

    def sample(self, n, rng):
        return rng.lognormal(0.0, self.sigma, n)

    @property
    def mean(self):
        return math.exp(self.sigma**2 / 2)

    @property
    def std(self):
        s2 = self.sigma**2
        return math.sqrt((math.exp(s2) - 1) * math.exp(s2))


@dataclass(frozen=True)
class GaussianMixture:
    components: tuple = ((1.0, 0.0, 1.0),)

    def __post_init__(self):
        comps = tuple(tuple(float(v) for v in c) for c in self.components)
        object.__setattr__(self, "components", comps)
        if not comps:
            raise ParameterError("mixture needs at least one component")
        for w, mu, sigma in comps:
            _positive("weight", w)
            _positive("sigma", sigma)
            if not math.isfinite(mu):
                raise ParameterError("mu must be finite")
        total = sum(c[0] for c in comps)
        if abs(total - 1.0) > 1e-12:
            raise ParameterError(f"mixture weights must sum to 1, got {total!r}")

    def sample(self, n, rng):
        w = np.array([c[0] for c in self.components])
        mu = np.array([c[1] for c in self.components])
        sd = np.array([c[2] for c in self.components])
        idx = rng.choice(len(w), size=n, p=w / w.sum())
        return rng.normal(mu[idx], sd[idx])

    @property
    def mean(self):
        return float(sum(w * mu for w, mu, _ in self.components))

    @property
    def std(self):
        m = self.mean
        var = sum(w * (sd**2 + (mu - m) ** 2) for w, mu, sd in self.components)
        return math.sqrt(var)


DistributionSpec = Gaussian | PearsonIII | StudentT | Pareto | LogNormal | GaussianMixture

_KINDS = {
    "gaussian": Gaussian,
    "pearson3": PearsonIII,
    "student_t": StudentT,
    "pareto": Pareto,
    "lognormal": LogNormal,
    "mixture": GaussianMixture,
}
_NAMES = {cls: name for name, cls in _KINDS.items()}


def dist_to_dict(dist) -> dict:
    d = {"kind": _NAMES[type(dist)]}
    for f in dist.__dataclass_fields__:
        v = getattr(dist, f)
        d[f] = [list(c) for c in v] if f == "components" else v
    return d


def dist_from_dict(d: dict):
    d = dict(d)
    kind = d.pop("kind", None)
    if kind not in _KINDS:
        raise ParameterError(f"unknown distribution kind {kind!r}")
    if "components" in d:
        d["components"] = tuple(tuple(c) for c in d["components"])
    try:
        return _KINDS[kind](**d)
    except TypeError as exc:
        raise ParameterError(str(exc)) from None


def sample(dist, n: int, rng: np.random.Generator) -> np.ndarray:
    """Draw ``n`` i.i.d. variates from ``dist``."""
    if n < 1:
        raise ParameterError("n must be >= 1")
    return np.asarray(dist.sample(int(n), rng), dtype=float)


# change specifications ----------------------------------------------------


@dataclass(frozen=True)
class MeanShift:
    """Additive shift of ``delta`` H0 standard deviations."""

    delta: float = 0.0

    def __post_init__(self):
        if not math.isfinite(self.delta):
            raise ParameterError("delta must be finite")


@dataclass(frozen=True)
class ScaleShift:
    factor: float = 1.0

    def __post_init__(self):
        _positive("factor", self.factor)


@dataclass(frozen=True)
class DistributionSwap:
    dist: object = field(default_factory=Gaussian)


ChangeSpec = MeanShift | ScaleShift | DistributionSwap


def change_to_dict(change) -> dict:
    if isinstance(change, MeanShift):
        return {"kind": "mean_shift", "delta": change.delta}
    if isinstance(change, ScaleShift):
        return {"kind": "scale_shift", "factor": change.factor}
    return {"kind": "swap", "dist": dist_to_dict(change.dist)}


def change_from_dict(d: dict):
    kind = d.get("kind")
    if kind == "mean_shift":
        return MeanShift(float(d.get("delta", 0.0)))
    if kind == "scale_shift":
        return ScaleShift(float(d["factor"]))
    if kind == "swap":
        return DistributionSwap(dist_from_dict(d["dist"]))
    raise ParameterError(f"unknown change kind {kind!r}")


@dataclass(frozen=True)
class SeriesSpec:
    h0: object = field(default_factory=Gaussian)
    change: object = field(default_factory=MeanShift)
    tau: int = 200
    n_total: int = 1000
    seed: int = 0

    def __post_init__(self):
        if not (0 < self.tau <= self.n_total):
            raise ParameterError(f"need 0 < tau <= n_total, got tau={self.tau}, n_total={self.n_total}")

    def to_dict(self):
        return {
            "h0": dist_to_dict(self.h0),
            "change": change_to_dict(self.change),
            "tau": self.tau,
            "n_total": self.n_total,
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, d):
        return cls(
            h0=dist_from_dict(d.get("h0", {"kind": "gaussian"})),
            change=change_from_dict(d.get("change", {"kind": "mean_shift", "delta": 0.0})),
            tau=int(d.get("tau", 200)),
            n_total=int(d.get("n_total", 1000)),
            seed=int(d.get("seed", 0)),
        )


def trial_rng(base_seed: int, index: int) -> np.random.Generator:
    """Independent generator for trial ``index`` of an experiment seeded with ``base_seed``."""
    return np.random.default_rng(np.random.SeedSequence([int(base_seed) & (2**64 - 1), int(index)]))


def generate_series_rng(spec: SeriesSpec, rng: np.random.Generator) -> np.ndarray:
    """Like generate_series but draws from a caller-supplied generator."""
    n, tau = spec.n_total, spec.tau
    change = spec.change
    if isinstance(change, DistributionSwap):
        pre = sample(spec.h0, tau - 1, rng) if tau > 1 else np.empty(0)
        post = sample(change.dist, n - tau + 1, rng)
        return np.concatenate([pre, post])
    x = sample(spec.h0, n, rng)
    if isinstance(change, MeanShift):
        if change.delta != 0:
            x[tau - 1 :] += change.delta * spec.h0.std
    else:
        x[tau - 1 :] *= change.factor
    return x


def generate_series(spec: SeriesSpec) -> np.ndarray:
    """Samples 1..tau-1 from H0, samples tau..n_total from the changed law (1-based)."""
    return generate_series_rng(spec, np.random.default_rng(spec.seed))


def series_to_csv(x: Sequence[float]) -> str:
    out = io.StringIO()
    out.write("x\n")
    for v in x:
        out.write(repr(float(v)) + "\n")
    return out.getvalue()


def series_from_csv(text: str) -> np.ndarray:
    rows = list(csv.reader(io.StringIO(text.replace("\r\n", "\n"))))
    if not rows or [c.strip() for c in rows[0]] != ["x"]:
        raise ParameterError("CSV must have a single column with header 'x'")
    vals = []
    for i, row in enumerate(rows[1:], start=2):
        if not row or not row[0].strip():
            continue
        try:
            vals.append(float(row[0]))
        except ValueError:
            raise ParameterError(f"line {i}: not a number: {row[0]!r}") from None
    return np.asarray(vals, dtype=float)
