"""Private-value distributions for first-stage bidders and the entrant.

Every distribution lives on a bounded support ``[lo, hi]`` with a strictly
positive, bounded density.  Besides the usual pdf/cdf/quantile triple the
classes expose the truncated integrals the equilibrium code relies on:

* ``partial_expectation(b)``  = int_lo^b  xi g(xi) dxi
* ``truncated_mean(b)``       = E[w | w <= b]
* ``second_stage_gain(v, b)`` = int_lo^b (v - xi) g(xi) dxi

Subclasses with closed forms override these; the base class falls back to
adaptive quadrature so that a new family only has to supply pdf/cdf.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Any

import numpy as np
from scipy import integrate, optimize

from .errors import ConfigError, DegenerateTruncation

QUAD_TOL = 1e-10


@dataclass(frozen=True)
class ValueDistribution:
    """Base class. Subclasses must implement ``pdf``, ``cdf`` and ``describe``."""

    lo: float
    hi: float

    def __post_init__(self) -> None:
        if not (math.isfinite(self.lo) and math.isfinite(self.hi)):
            raise ConfigError("support bounds must be finite")
        if self.lo < 0 or self.hi <= self.lo:
            raise ConfigError(f"need 0 <= lo < hi, got [{self.lo}, {self.hi}]")

    # -- interface -------------------------------------------------------
    def pdf(self, x):
        raise NotImplementedError

    def cdf(self, x):
        raise NotImplementedError

    def describe(self) -> dict[str, Any]:
        raise NotImplementedError

    # -- generic fallbacks -----------------------------------------------
    def clamp(self, x):
        return np.clip(x, self.lo, self.hi)

    def quantile(self, q):
        """Inverse cdf by root finding on the cdf."""
        q_arr = np.clip(np.asarray(q, dtype=float), 0.0, 1.0)

        def one(p: float) -> float:
            if p <= 0.0:
                return self.lo
            if p >= 1.0:
                return self.hi
            return optimize.brentq(lambda x: float(self.cdf(x)) - p, self.lo, self.hi, xtol=1e-14)

        out = np.vectorize(one, otypes=[float])(q_arr)
        return float(out) if out.ndim == 0 else out

    def partial_expectation(self, b):
        def one(x: float) -> float:
            top = min(max(x, self.lo), self.hi)
            if top <= self.lo:
                return 0.0
            return integrate.quad(lambda t: t * float(self.pdf(t)), self.lo, top, epsabs=QUAD_TOL)[0]

        out = np.vectorize(one, otypes=[float])(np.asarray(b, dtype=float))
        return float(out) if out.ndim == 0 else out

    def mean(self) -> float:
        return float(self.partial_expectation(self.hi))

    def truncated_mean(self, b):
        """E[w | w <= b]; raises DegenerateTruncation where cdf(b) == 0."""
        mass = np.asarray(self.cdf(b), dtype=float)
        if np.any(mass <= 0.0):
            raise DegenerateTruncation(f"cdf({b}) = 0, truncated mean undefined")
        out = np.asarray(self.partial_expectation(b)) / mass
        return float(out) if out.ndim == 0 else out

    def second_stage_gain(self, v, b):
        b_arr = np.asarray(b, dtype=float)
        out = np.asarray(v, dtype=float) * np.asarray(self.cdf(b_arr)) - np.asarray(
            self.partial_expectation(b_arr)
        )
        return float(out) if out.ndim == 0 else out

    def sample(self, rng: np.random.Generator, size=None):
        return self.quantile(rng.random(size))


@dataclass(frozen=True)
class Uniform(ValueDistribution):
    def pdf(self, x):
        x = np.asarray(x, dtype=float)
        out = np.where((x >= self.lo) & (x <= self.hi), 1.0 / (self.hi - self.lo), 0.0)
        return float(out) if out.ndim == 0 else out

    def cdf(self, x):
        out = (self.clamp(np.asarray(x, dtype=float)) - self.lo) / (self.hi - self.lo)
        return float(out) if np.ndim(out) == 0 else out

    def quantile(self, q):
        out = self.lo + np.clip(q, 0.0, 1.0) * (self.hi - self.lo)
        return float(out) if np.ndim(out) == 0 else out

    def partial_expectation(self, b):
        top = self.clamp(np.asarray(b, dtype=float))
        out = (top * top - self.lo * self.lo) / (2.0 * (self.hi - self.lo))
        return float(out) if np.ndim(out) == 0 else out

    def mean(self) -> float:
        return 0.5 * (self.lo + self.hi)

    def truncated_mean(self, b):
        b_arr = np.asarray(b, dtype=float)
        if np.any(b_arr <= self.lo):
            raise DegenerateTruncation(f"cdf({b}) = 0, truncated mean undefined")
        out = 0.5 * (self.lo + np.minimum(b_arr, self.hi))
        return float(out) if out.ndim == 0 else out

    def second_stage_gain(self, v, b):
        # (G(b)) * (v - E[w | w <= b]) without dividing by G(b)
        top = self.clamp(np.asarray(b, dtype=float))
        out = (top - self.lo) * (np.asarray(v, dtype=float) - 0.5 * (top + self.lo)) / (self.hi - self.lo)
        return float(out) if np.ndim(out) == 0 else out

    def sample(self, rng: np.random.Generator, size=None):
        return self.quantile(rng.random(size))

    def describe(self) -> dict[str, Any]:
        return {"kind": "uniform", "lo": self.lo, "hi": self.hi}


@dataclass(frozen=True)
class TruncatedExponential(ValueDistribution):
    """Exponential with the given rate, truncated to ``[lo, hi]``."""

    rate: float = 1.0

    def __post_init__(self) -> None:
        super().__post_init__()
        if not self.rate > 0:
            raise ConfigError("rate must be positive")

    @property
    def _mass(self) -> float:
        return -math.expm1(-self.rate * (self.hi - self.lo))

    def pdf(self, x):
        x = np.asarray(x, dtype=float)
        inside = (x >= self.lo) & (x <= self.hi)
        out = np.where(inside, self.rate * np.exp(-self.rate * (x - self.lo)) / self._mass, 0.0)
        return float(out) if out.ndim == 0 else out

    def cdf(self, x):
        t = self.clamp(np.asarray(x, dtype=float)) - self.lo
        out = -np.expm1(-self.rate * t) / self._mass
        return float(out) if np.ndim(out) == 0 else out

    def quantile(self, q):
        q = np.clip(np.asarray(q, dtype=float), 0.0, 1.0)
        out = self.lo - np.log1p(-q * self._mass) / self.rate
        out = self.clamp(out)
        return float(out) if np.ndim(out) == 0 else out

    def partial_expectation(self, b):
        # int_lo^top x r e^{-r(x-lo)} dx / mass, by parts
        lam = self.rate
        t = self.clamp(np.asarray(b, dtype=float)) - self.lo
        e = np.exp(-lam * t)
        raw = self.lo * (-np.expm1(-lam * t)) + (-np.expm1(-lam * t) / lam - t * e)
        out = raw / self._mass
        return float(out) if np.ndim(out) == 0 else out

    def describe(self) -> dict[str, Any]:
        return {"kind": "truncexp", "lo": self.lo, "hi": self.hi, "rate": self.rate}


def from_descriptor(desc: dict[str, Any] | str) -> ValueDistribution:
    """Build a distribution from a JSON dict or a ``kind:lo:hi[:rate]`` string."""
    if isinstance(desc, str):
        parts = desc.split(":")
        try:
            kind, nums = parts[0], [float(p) for p in parts[1:]]
        except ValueError as exc:
            raise ConfigError(f"bad distribution string {desc!r}") from exc
        if kind == "uniform" and len(nums) == 2:
            return Uniform(nums[0], nums[1])
        if kind == "truncexp" and len(nums) == 3:
            return TruncatedExponential(nums[0], nums[1], rate=nums[2])
        raise ConfigError(f"bad distribution string {desc!r}")

    kind = desc.get("kind")
    try:
        if kind == "uniform":
            return Uniform(float(desc["lo"]), float(desc["hi"]))
        if kind == "truncexp":
            return TruncatedExponential(float(desc["lo"]), float(desc["hi"]), rate=float(desc["rate"]))
    except KeyError as exc:
        raise ConfigError(f"distribution descriptor missing {exc}") from exc
    raise ConfigError(f"unknown distribution kind {kind!r}")


def cdf(d: ValueDistribution, x):
    return d.cdf(x)


def sample(d: ValueDistribution, rng: np.random.Generator, size=None):
    return d.sample(rng, size)


def truncated_mean(d: ValueDistribution, b):
    return d.truncated_mean(b)


def second_stage_gain(d: ValueDistribution, v, b):
    """Expected surplus of a bidder with value ``v`` facing a truthful entrant
    ``w ~ d`` in a second-price contest while holding committed bid ``b``."""
    return d.second_stage_gain(v, b)
