"""Mechanism description shared by the simulator and the verifier."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any, Optional

from .distributions import Uniform, ValueDistribution
from .distributions import from_descriptor as dist_from_descriptor
from .errors import ConfigError, NotSufficientlyStronger
from .strategies import DEFAULT_CAP

NO_COMMITMENT = "no_commitment"
COMMITMENT_SYMMETRIC = "commitment_symmetric"
COMMITMENT_ASYMMETRIC = "commitment_asymmetric"
ONE_SHOT = "one_shot"
MODES = (NO_COMMITMENT, COMMITMENT_SYMMETRIC, COMMITMENT_ASYMMETRIC, ONE_SHOT)
COMMITMENT_MODES = (COMMITMENT_SYMMETRIC, COMMITMENT_ASYMMETRIC)

_ALIASES = {
    "nc": NO_COMMITMENT,
    "cs": COMMITMENT_SYMMETRIC,
    "ca": COMMITMENT_ASYMMETRIC,
    "one_shot_second_price": ONE_SHOT,
    "oneshot": ONE_SHOT,
}


def normalize_mode(mode: str) -> str:
    m = mode.strip().lower().replace("-", "_")
    m = _ALIASES.get(m, m)
    if m not in MODES:
        raise ConfigError(f"unknown mode {mode!r}; expected one of {', '.join(MODES)}")
    return m


def is_standard_uniform(d: ValueDistribution) -> bool:
    return isinstance(d, Uniform) and d.lo == 0.0 and d.hi == 1.0


@dataclass(frozen=True)
class AuctionSpec:
    """One mechanism variant with ``n`` first-stage bidders and one entrant.

    ``first_stage_pays`` charges the second-highest stage-one bid in the
    commitment modes too.  It is an experimental switch, off by default.
    """

    n: int
    mode: str
    f_dist: ValueDistribution = field(default_factory=lambda: Uniform(0.0, 1.0))
    g_dist: ValueDistribution = field(default_factory=lambda: Uniform(0.0, 1.0))
    cap: Optional[float] = None
    first_stage_pays: bool = False

    def __post_init__(self) -> None:
        object.__setattr__(self, "mode", normalize_mode(self.mode))
        if int(self.n) != self.n or self.n < 2:
            raise ConfigError(f"need n >= 2 first-stage bidders, got {self.n}")
        object.__setattr__(self, "n", int(self.n))
        if self.mode == COMMITMENT_SYMMETRIC:
            if self.cap is None:
                object.__setattr__(self, "cap", DEFAULT_CAP)
            if not self.cap > 1.0:
                raise ConfigError("symmetric commitment needs a cap above 1")
            if not (is_standard_uniform(self.f_dist) and is_standard_uniform(self.g_dist)):
                raise ConfigError("symmetric commitment is only available for Uniform(0,1) values")
        if self.mode == COMMITMENT_ASYMMETRIC and not self.g_dist.mean() > self.f_dist.hi:
            raise NotSufficientlyStronger(
                f"E[w] = {self.g_dist.mean():.6g} does not exceed the first-stage maximum {self.f_dist.hi:.6g}"
            )

    @property
    def v_bar(self) -> float:
        return self.f_dist.hi

    @property
    def w_bar(self) -> float:
        return self.g_dist.hi

    def with_(self, **changes: Any) -> "AuctionSpec":
        params = dict(
            n=self.n, mode=self.mode, f_dist=self.f_dist, g_dist=self.g_dist,
            cap=self.cap, first_stage_pays=self.first_stage_pays,
        )
        params.update(changes)
        if normalize_mode(params["mode"]) != COMMITMENT_SYMMETRIC:
            params["cap"] = None
        return AuctionSpec(**params)

    def describe(self) -> dict[str, Any]:
        out: dict[str, Any] = {
            "n": self.n,
            "mode": self.mode,
            "f": self.f_dist.describe(),
            "g": self.g_dist.describe(),
        }
        if self.cap is not None:
            out["cap"] = self.cap
        if self.first_stage_pays:
            out["first_stage_pays"] = True
        return out

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "AuctionSpec":
        try:
            return cls(
                n=int(d["n"]),
                mode=d["mode"],
                f_dist=dist_from_descriptor(d.get("f", {"kind": "uniform", "lo": 0.0, "hi": 1.0})),
                g_dist=dist_from_descriptor(d.get("g", {"kind": "uniform", "lo": 0.0, "hi": 1.0})),
                cap=d.get("cap"),
                first_stage_pays=bool(d.get("first_stage_pays", False)),
            )
        except KeyError as exc:
            raise ConfigError(f"auction spec missing {exc}") from exc
