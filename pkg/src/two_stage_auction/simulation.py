"""Trial-by-trial execution of the mechanisms and Monte Carlo revenue.

Draw layout per chunk (fixed, shared by every mode so runs with the same
seed are paired): ``n`` first-stage uniforms per trial, one entrant
uniform, one tie-lottery uniform.  Values are obtained by inverse cdf.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Any, Optional, Sequence

import numpy as np

from . import strategies as st
from .errors import AuctionError, StrategyModeMismatch
from .model import (
    COMMITMENT_ASYMMETRIC,
    COMMITMENT_MODES,
    COMMITMENT_SYMMETRIC,
    NO_COMMITMENT,
    ONE_SHOT,
    AuctionSpec,
    is_standard_uniform,
)
from .distributions import Uniform
from .rng import check_seed, resolve_threads, stream

CHUNK_SIZE = 1 << 16
DEFAULT_TRIALS = 1_000_000


# ---------------------------------------------------------------------------
# strategies per mode
# ---------------------------------------------------------------------------

def equilibrium_strategy(spec: AuctionSpec) -> st.BidStrategy:
    """First-stage equilibrium strategy for ``spec`` (the entrant is truthful)."""
    if spec.mode == ONE_SHOT:
        return st.truthful(spec.v_bar)
    if spec.mode == NO_COMMITMENT:
        return st.no_commitment(spec.n, spec.g_dist, spec.v_bar)
    if spec.mode == COMMITMENT_SYMMETRIC:
        return st.commitment_symmetric(spec.n, spec.cap)
    if is_standard_uniform(spec.f_dist) and isinstance(spec.g_dist, Uniform) and spec.g_dist.lo == 0.0:
        return st.commitment_asymmetric(spec.n)
    from .equilibrium import solve_equilibrium_ode

    return st.from_ode_solution(solve_equilibrium_ode(spec.n, spec.f_dist, spec.g_dist))


_ALLOWED_KINDS = {
    ONE_SHOT: (st.TRUTHFUL,),
    NO_COMMITMENT: (st.NO_COMMITMENT, st.TRUTHFUL),
    COMMITMENT_SYMMETRIC: st.COMMITMENT_KINDS + (st.TRUTHFUL,),
    COMMITMENT_ASYMMETRIC: st.COMMITMENT_KINDS + (st.TRUTHFUL,),
}


def _check_strategy(spec: AuctionSpec, strategy: st.BidStrategy) -> None:
    if strategy.kind not in _ALLOWED_KINDS[spec.mode]:
        raise StrategyModeMismatch(f"strategy {strategy.kind} cannot be used in mode {spec.mode}")


# ---------------------------------------------------------------------------
# single trial (reference path)
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class TrialOutcome:
    values: tuple[float, ...]
    w: float
    stage1_bids: tuple[float, ...]
    stage1_winner: int
    stage1_payment: float
    stage2_winner: str  # "first_stage" or "entrant"
    stage2_payment: float
    revenue: float

    @property
    def efficient(self) -> bool:
        top = max(max(self.values), self.w)
        won = self.w if self.stage2_winner == "entrant" else self.values[self.stage1_winner]
        return won >= top


def _lottery(tie_u: float, k: int) -> tuple[int, float]:
    """Index among ``k`` tied bidders and a leftover uniform for stage two."""
    r = min(int(tie_u * k), k - 1)
    return r, tie_u * k - r


def outcome_from_draws(spec: AuctionSpec, strategy: st.BidStrategy, values: Sequence[float], w: float,
                       tie_u: float) -> TrialOutcome:
    """Play one auction from explicit values and lottery draw.

    Kept loop-based on purpose: it is the reference the vectorized batch
    path is tested against.
    """
    _check_strategy(spec, strategy)
    values = [float(x) for x in values]
    if spec.mode == ONE_SHOT:
        bids = list(values)
    else:
        bids = [float(strategy.bid(x)) for x in values]
    top = max(bids)
    tied = [i for i, x in enumerate(bids) if x == top]
    r, leftover = _lottery(tie_u, len(tied))
    winner = tied[r]

    if spec.mode == ONE_SHOT:
        everyone = sorted(values + [w])
        price = everyone[-2]
        entrant_wins = w > top or (w == top and leftover >= 0.5)
        return TrialOutcome(tuple(values), w, tuple(bids), winner, 0.0,
                            "entrant" if entrant_wins else "first_stage", price, price)

    pays_stage1 = spec.mode == NO_COMMITMENT or spec.first_stage_pays
    runner_up = sorted(bids)[-2]
    stage1_payment = runner_up if pays_stage1 else 0.0
    stage2_bid = values[winner] if spec.mode == NO_COMMITMENT else bids[winner]
    if w > stage2_bid or (w == stage2_bid and leftover >= 0.5):
        stage2_winner, stage2_payment = "entrant", stage2_bid
    else:
        stage2_winner, stage2_payment = "first_stage", w
    return TrialOutcome(
        values=tuple(values),
        w=float(w),
        stage1_bids=tuple(bids),
        stage1_winner=winner,
        stage1_payment=stage1_payment,
        stage2_winner=stage2_winner,
        stage2_payment=stage2_payment,
        revenue=stage1_payment + stage2_payment,
    )


def run_trial(spec: AuctionSpec, strategy: Optional[st.BidStrategy], rng: np.random.Generator) -> TrialOutcome:
    strategy = strategy if strategy is not None else equilibrium_strategy(spec)
    values = np.asarray(spec.f_dist.quantile(rng.random(spec.n)))
    w = float(spec.g_dist.quantile(rng.random()))
    tie_u = float(rng.random())
    return outcome_from_draws(spec, strategy, values, w, tie_u)


# ---------------------------------------------------------------------------
# vectorized batches
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class Batch:
    revenue: np.ndarray
    w: np.ndarray
    stage1_winner: np.ndarray
    entrant_wins: np.ndarray
    efficient: np.ndarray
    winning_bid: np.ndarray


def draw_chunk(spec: AuctionSpec, rng: np.random.Generator, m: int):
    values = np.asarray(spec.f_dist.quantile(rng.random((m, spec.n))))
    w = np.asarray(spec.g_dist.quantile(rng.random(m)))
    tie_u = rng.random(m)
    return values, w, tie_u


def play_batch(spec: AuctionSpec, strategy: st.BidStrategy, values: np.ndarray, w: np.ndarray,
               tie_u: np.ndarray) -> Batch:
    _check_strategy(spec, strategy)
    m = values.shape[0]
    rows = np.arange(m)
    bids = values if spec.mode == ONE_SHOT else np.asarray(strategy.bid(values))
    top = bids.max(axis=1)
    mask = bids == top[:, None]
    k = mask.sum(axis=1)
    r = np.minimum((tie_u * k).astype(np.int64), k - 1)
    leftover = tie_u * k - r
    winner = np.argmax(mask & (np.cumsum(mask, axis=1) == (r + 1)[:, None]), axis=1)
    top_value = np.maximum(values.max(axis=1), w)

    if spec.mode == ONE_SHOT:
        everyone = np.concatenate([values, w[:, None]], axis=1)
        revenue = np.partition(everyone, -2, axis=1)[:, -2]
        entrant_wins = (w > top) | ((w == top) & (leftover >= 0.5))
        won_value = np.where(entrant_wins, w, values[rows, winner])
        return Batch(revenue, w, winner, entrant_wins, won_value >= top_value, top)

    winning_bid = bids[rows, winner]
    if spec.mode == NO_COMMITMENT or spec.first_stage_pays:
        stage1 = np.partition(bids, -2, axis=1)[:, -2]
    else:
        stage1 = np.zeros(m)
    stage2_bid = values[rows, winner] if spec.mode == NO_COMMITMENT else winning_bid
    entrant_wins = (w > stage2_bid) | ((w == stage2_bid) & (leftover >= 0.5))
    stage2 = np.where(entrant_wins, stage2_bid, w)
    won_value = np.where(entrant_wins, w, values[rows, winner])
    return Batch(stage1 + stage2, w, winner, entrant_wins, won_value >= top_value, winning_bid)


# ---------------------------------------------------------------------------
# Monte Carlo estimation
# ---------------------------------------------------------------------------

@dataclass
class _Moments:
    """Running (count, mean, M2) merged with Chan's formula in a fixed order."""

    count: int = 0
    mean: float = 0.0
    m2: float = 0.0

    @classmethod
    def of(cls, x: np.ndarray) -> "_Moments":
        if x.size == 0:
            return cls()
        mu = float(np.mean(x))
        return cls(int(x.size), mu, float(np.sum((x - mu) ** 2)))

    def merge(self, other: "_Moments") -> "_Moments":
        if other.count == 0:
            return self
        if self.count == 0:
            return other
        n = self.count + other.count
        delta = other.mean - self.mean
        mean = self.mean + delta * other.count / n
        m2 = self.m2 + other.m2 + delta * delta * self.count * other.count / n
        return _Moments(n, mean, m2)

    @property
    def stderr(self) -> float:
        if self.count < 2:
            return float("nan")
        return math.sqrt(self.m2 / (self.count - 1) / self.count)


@dataclass(frozen=True)
class RevenueEstimate:
    mean: float
    stderr: float
    trials: int
    seed: int
    mode: str
    n: int
    diagnostics: dict[str, float] = field(default_factory=dict)

    def to_dict(self) -> dict[str, Any]:
        return asdict(self)


@dataclass(frozen=True)
class PairedEstimate:
    """Two modes run on identical draws; ``diff`` is mean(a) - mean(b)."""

    a: RevenueEstimate
    b: RevenueEstimate
    diff: float
    diff_stderr: float

    def to_dict(self) -> dict[str, Any]:
        return {"a": self.a.to_dict(), "b": self.b.to_dict(), "diff": self.diff, "diff_stderr": self.diff_stderr}


def _chunks(trials: int) -> list[tuple[int, int]]:
    return [(i, min(CHUNK_SIZE, trials - i * CHUNK_SIZE)) for i in range(-(-trials // CHUNK_SIZE))]


def _map_chunks(fn, trials: int, threads: Optional[int]):
    jobs = _chunks(trials)
    workers = min(resolve_threads(threads), len(jobs))
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(fn, jobs))
    return [fn(job) for job in jobs]


def _reduce(parts: list[_Moments]) -> _Moments:
    total = _Moments()
    for p in parts:
        total = total.merge(p)
    return total


def _sample_of(spec: AuctionSpec, batch: Batch, control_variate: bool) -> np.ndarray:
    if control_variate:
        # revenue - w + E[w]: unbiased, and nearly constant under commitment
        return batch.revenue - batch.w + spec.g_dist.mean()
    return batch.revenue


def _diag_counts(spec: AuctionSpec, batch: Batch) -> np.ndarray:
    excess = int(np.count_nonzero(batch.revenue > batch.w)) if spec.mode in COMMITMENT_MODES else 0
    return np.array([np.count_nonzero(~batch.efficient), excess, np.count_nonzero(batch.entrant_wins)],
                    dtype=np.int64)


def _diagnostics(counts: np.ndarray, trials: int) -> dict[str, float]:
    return {
        "inefficient_fraction": float(counts[0]) / trials,
        "revenue_above_w": int(counts[1]),
        "entrant_win_fraction": float(counts[2]) / trials,
    }


def estimate_revenue(spec: AuctionSpec, trials: int = DEFAULT_TRIALS, seed: int = 0,
                     threads: Optional[int] = 1, strategy: Optional[st.BidStrategy] = None,
                     control_variate: bool = False) -> RevenueEstimate:
    """Monte Carlo expected revenue.

    Bit-identical for a given ``(spec, trials, seed)`` whatever ``threads``
    is.  With ``control_variate`` the per-trial sample is
    ``revenue - w + E[w]``, which removes the entrant's value noise.
    """
    if trials < 1:
        raise AuctionError("trials must be >= 1")
    seed = check_seed(seed)
    strategy = strategy if strategy is not None else equilibrium_strategy(spec)
    _check_strategy(spec, strategy)

    def job(chunk: tuple[int, int]):
        idx, m = chunk
        batch = play_batch(spec, strategy, *draw_chunk(spec, stream(seed, idx), m))
        return (_Moments.of(_sample_of(spec, batch, control_variate)), _diag_counts(spec, batch),
                _Moments.of(batch.revenue))

    parts = _map_chunks(job, trials, threads)
    total = _reduce([p[0] for p in parts])
    counts = np.sum([p[1] for p in parts], axis=0)
    diag = _diagnostics(counts, trials)
    if control_variate:
        plain = _reduce([p[2] for p in parts])
        diag.update(plain_mean=plain.mean, plain_stderr=plain.stderr)
    return RevenueEstimate(total.mean, total.stderr, trials, seed, spec.mode, spec.n, diag)


def paired_revenue_difference(spec_a: AuctionSpec, spec_b: AuctionSpec, trials: int = DEFAULT_TRIALS,
                              seed: int = 0, threads: Optional[int] = 1) -> PairedEstimate:
    """Revenue of ``spec_a`` minus ``spec_b`` on common random numbers."""
    if (spec_a.n, spec_a.f_dist, spec_a.g_dist) != (spec_b.n, spec_b.f_dist, spec_b.g_dist):
        raise AuctionError("paired comparison needs the same n and value distributions")
    if trials < 1:
        raise AuctionError("trials must be >= 1")
    seed = check_seed(seed)
    strat_a = equilibrium_strategy(spec_a)
    strat_b = equilibrium_strategy(spec_b)

    def job(chunk: tuple[int, int]):
        idx, m = chunk
        draws = draw_chunk(spec_a, stream(seed, idx), m)
        ba = play_batch(spec_a, strat_a, *draws)
        bb = play_batch(spec_b, strat_b, *draws)
        return (_Moments.of(ba.revenue), _Moments.of(bb.revenue), _Moments.of(ba.revenue - bb.revenue),
                _diag_counts(spec_a, ba), _diag_counts(spec_b, bb))

    parts = _map_chunks(job, trials, threads)
    ma, mb, md = (_reduce([p[i] for p in parts]) for i in range(3))
    da = _diagnostics(np.sum([p[3] for p in parts], axis=0), trials)
    db = _diagnostics(np.sum([p[4] for p in parts], axis=0), trials)
    est_a = RevenueEstimate(ma.mean, ma.stderr, trials, seed, spec_a.mode, spec_a.n, da)
    est_b = RevenueEstimate(mb.mean, mb.stderr, trials, seed, spec_b.mode, spec_b.n, db)
    return PairedEstimate(est_a, est_b, md.mean, md.stderr)


def second_order_statistic_mean(spec: AuctionSpec, trials: int = DEFAULT_TRIALS, seed: int = 0,
                                threads: Optional[int] = 1) -> RevenueEstimate:
    """Mean of the second-highest of the n + 1 values, on the run's draws."""
    if trials < 1:
        raise AuctionError("trials must be >= 1")
    seed = check_seed(seed)

    def job(chunk: tuple[int, int]):
        idx, m = chunk
        values, w, _ = draw_chunk(spec, stream(seed, idx), m)
        everyone = np.concatenate([values, w[:, None]], axis=1)
        return _Moments.of(np.partition(everyone, -2, axis=1)[:, -2])

    total = _reduce(_map_chunks(job, trials, threads))
    return RevenueEstimate(total.mean, total.stderr, trials, seed, "second_order_statistic", spec.n)


def chunk_revenues(spec: AuctionSpec, trials: int, seed: int, strategy: Optional[st.BidStrategy] = None):
    """Per-trial revenues and entrant values (for small runs and tests)."""
    strategy = strategy if strategy is not None else equilibrium_strategy(spec)
    out = []
    for idx, m in _chunks(trials):
        out.append(play_batch(spec, strategy, *draw_chunk(spec, stream(check_seed(seed), idx), m)))
    return out


def exact_revenue_nc_uniform(n: int) -> float:
    if n < 2:
        raise AuctionError("n must be >= 2")
    return n / (n + 2.0)


def exact_revenue(spec: AuctionSpec) -> Optional[float]:
    """Closed form where one exists (no commitment / one-shot, Uniform(0,1) values)."""
    if spec.mode in (NO_COMMITMENT, ONE_SHOT) and is_standard_uniform(spec.f_dist) \
            and is_standard_uniform(spec.g_dist):
        return exact_revenue_nc_uniform(spec.n)
    return None


TABLE_COLUMNS = ("mode", "n", "trials", "seed", "mean", "stderr", "exact")


def revenue_table(modes: Sequence[str], n_values: Sequence[int], template: AuctionSpec,
                  trials: int = DEFAULT_TRIALS, seed: int = 0, threads: Optional[int] = 1,
                  baseline: Optional[str] = None, control_variate: bool = False,
                  cap: Optional[float] = None) -> list[dict[str, Any]]:
    """One row per (mode, n).  A failing row carries an ``error`` entry
    instead of aborting the table.  With ``baseline`` each row also gets the
    paired difference against that mode on the same draws."""
    rows: list[dict[str, Any]] = []
    for mode in modes:
        for n in n_values:
            row: dict[str, Any] = {"mode": mode, "n": n, "trials": trials, "seed": seed}
            try:
                spec = template.with_(mode=mode, n=n, cap=cap)
                row["mode"] = spec.mode
                est = estimate_revenue(spec, trials, seed, threads, control_variate=control_variate)
                row.update(mean=est.mean, stderr=est.stderr, exact=exact_revenue(spec))
                if baseline is not None:
                    paired = paired_revenue_difference(spec, template.with_(mode=baseline, n=n), trials, seed,
                                                       threads)
                    row.update(diff=paired.diff, diff_stderr=paired.diff_stderr)
            except AuctionError as exc:
                row.update(mean=None, stderr=None, exact=None, error=f"{type(exc).__name__}: {exc}")
            rows.append(row)
    return rows
