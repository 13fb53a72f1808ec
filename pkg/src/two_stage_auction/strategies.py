"""Equilibrium bidding functions.

All first-stage strategies share one value object, :class:`BidStrategy`, so
the simulator and the best-response verifier can evaluate any of them
through ``strategy.bid(values)``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any, Optional

import numpy as np

from .distributions import Uniform, ValueDistribution
from .distributions import from_descriptor as dist_from_descriptor
from .errors import ConfigError, InvalidCutoff, OutOfRange

TRUTHFUL = "truthful"
NO_COMMITMENT = "no_commitment"
COMMITMENT_SYMMETRIC = "commitment_symmetric"
COMMITMENT_ASYMMETRIC = "commitment_asymmetric"
ODE_NUMERIC = "ode_numeric"
KINDS = (TRUTHFUL, NO_COMMITMENT, COMMITMENT_SYMMETRIC, COMMITMENT_ASYMMETRIC, ODE_NUMERIC)
COMMITMENT_KINDS = (COMMITMENT_SYMMETRIC, COMMITMENT_ASYMMETRIC, ODE_NUMERIC)

DEFAULT_CAP = 1.5


def overbid_slope(n: int) -> float:
    return 2.0 * n / (n + 1.0)


def cutoff_bracket(n: int) -> tuple[float, float]:
    return 0.5, (n + 1.0) / (2.0 * n)


def _scalar(out):
    return float(out) if np.ndim(out) == 0 else out


def truthful_bid(v):
    return _scalar(np.asarray(v, dtype=float) * 1.0)


def no_commitment_first_stage_bid(v, g_dist: ValueDistribution):
    """Stage-one bid without commitment: the value of reaching stage two."""
    return g_dist.second_stage_gain(v, v)


def commitment_symmetric_bid(v, n: int, cutoff: float, cap: float = DEFAULT_CAP):
    if n < 2:
        raise ConfigError("n must be >= 2")
    lo, hi = cutoff_bracket(n)
    if not lo < cutoff < hi:
        raise InvalidCutoff(f"cutoff {cutoff} outside ({lo}, {hi}) for n={n}")
    if not cap > 1.0:
        raise ConfigError("cap must exceed 1")
    v = np.asarray(v, dtype=float)
    return _scalar(np.where(v <= cutoff, overbid_slope(n) * v, cap))


def commitment_asymmetric_bid(v, n: int):
    if n < 2:
        raise ConfigError("n must be >= 2")
    return _scalar(overbid_slope(n) * np.asarray(v, dtype=float))


def ode_numeric_bid(table: tuple[np.ndarray, np.ndarray], v):
    """Piecewise-linear interpolation of a monotone ``(values, bids)`` table."""
    xs, ys = table
    v_arr = np.asarray(v, dtype=float)
    if np.any(v_arr < xs[0]) or np.any(v_arr > xs[-1]):
        raise OutOfRange(f"value outside table range [{xs[0]}, {xs[-1]}]")
    return _scalar(np.interp(v_arr, xs, ys))


@dataclass(frozen=True, eq=False)
class BidStrategy:
    kind: str
    n: int = 2
    v_bar: float = 1.0
    cutoff: Optional[float] = None
    cap: Optional[float] = None
    g_dist: Optional[ValueDistribution] = None
    table: Optional[tuple[np.ndarray, np.ndarray]] = field(default=None, repr=False)

    def __post_init__(self) -> None:
        if self.kind not in KINDS:
            raise ConfigError(f"unknown strategy kind {self.kind!r}")
        if self.kind != TRUTHFUL and self.n < 2:
            raise ConfigError("n must be >= 2")
        if self.kind == NO_COMMITMENT and self.g_dist is None:
            raise ConfigError("no-commitment strategy needs the entrant's distribution")
        if self.kind == COMMITMENT_SYMMETRIC:
            if self.cutoff is None or self.cap is None:
                raise ConfigError("symmetric commitment needs cutoff and cap")
            commitment_symmetric_bid(0.0, self.n, self.cutoff, self.cap)  # validates
        if self.kind == ODE_NUMERIC and self.table is None:
            raise ConfigError("ode strategy needs a knot table")

    @property
    def is_commitment(self) -> bool:
        return self.kind in COMMITMENT_KINDS

    def bid(self, v):
        """Evaluate the bid; values are projected onto ``[0, v_bar]`` first."""
        v = np.clip(np.asarray(v, dtype=float), 0.0, self.v_bar)
        if self.kind == TRUTHFUL:
            return truthful_bid(v)
        if self.kind == NO_COMMITMENT:
            return no_commitment_first_stage_bid(v, self.g_dist)
        if self.kind == COMMITMENT_SYMMETRIC:
            return commitment_symmetric_bid(v, self.n, self.cutoff, self.cap)
        if self.kind == COMMITMENT_ASYMMETRIC:
            return commitment_asymmetric_bid(v, self.n)
        return ode_numeric_bid(self.table, v)

    def describe(self) -> dict[str, Any]:
        out: dict[str, Any] = {"kind": self.kind, "n": self.n}
        if self.cutoff is not None:
            out["cutoff"] = self.cutoff
        if self.cap is not None:
            out["cap"] = self.cap
        if self.g_dist is not None:
            out["g"] = self.g_dist.describe()
        if self.table is not None:
            out["knots"] = len(self.table[0])
        return out


# -- constructors ----------------------------------------------------------

def truthful(v_bar: float = np.inf) -> BidStrategy:
    return BidStrategy(TRUTHFUL, n=0, v_bar=v_bar)


def no_commitment(n: int, g_dist: ValueDistribution, v_bar: float = 1.0) -> BidStrategy:
    return BidStrategy(NO_COMMITMENT, n=n, v_bar=v_bar, g_dist=g_dist)


def commitment_symmetric(n: int, cap: float = DEFAULT_CAP, cutoff: Optional[float] = None) -> BidStrategy:
    if cutoff is None:
        from .equilibrium import solve_cutoff

        cutoff = solve_cutoff(n).v_hat
    return BidStrategy(COMMITMENT_SYMMETRIC, n=n, v_bar=1.0, cutoff=cutoff, cap=cap)


def commitment_asymmetric(n: int) -> BidStrategy:
    return BidStrategy(COMMITMENT_ASYMMETRIC, n=n, v_bar=1.0)


def from_ode_solution(solution) -> BidStrategy:
    """Wrap an ODE solution; the boundary knot (0, 0) is prepended."""
    v, b = solution.values, solution.bids
    xs = np.concatenate(([0.0], v)) if v[0] > 0 else v
    ys = np.concatenate(([0.0], b)) if v[0] > 0 else b
    return BidStrategy(ODE_NUMERIC, n=solution.n, v_bar=float(xs[-1]), table=(xs, ys))


def from_descriptor(desc: dict[str, Any], g_dist: Optional[ValueDistribution] = None) -> BidStrategy:
    """Build a strategy from its JSON descriptor (cutoff solved if omitted)."""
    kind = desc.get("kind")
    n = int(desc.get("n", 2))
    if kind == TRUTHFUL:
        return truthful()
    if kind == NO_COMMITMENT:
        g = dist_from_descriptor(desc["g"]) if "g" in desc else g_dist
        return no_commitment(n, g if g is not None else Uniform(0.0, 1.0), float(desc.get("v_bar", 1.0)))
    if kind == COMMITMENT_SYMMETRIC:
        return commitment_symmetric(n, float(desc.get("cap", DEFAULT_CAP)), desc.get("cutoff"))
    if kind == COMMITMENT_ASYMMETRIC:
        return commitment_asymmetric(n)
    raise ConfigError(f"cannot build strategy from descriptor kind {kind!r}")

