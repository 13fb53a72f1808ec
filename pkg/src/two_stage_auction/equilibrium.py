"""Equilibrium objects defined only implicitly by the model.

* the symmetric-commitment cutoff (root of ``a_n - b_n``),
* interim payoffs used to certify best replies,
* the bid ODE for general distributions under asymmetric commitment,
* the large-``n`` limit of the top committed bid and its revenue.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Any, Callable, Optional

import numpy as np
from scipy import integrate, optimize

from . import strategies as st
from .distributions import Uniform, ValueDistribution
from .errors import (
    ConfigError,
    NoRootFound,
    NotSufficientlyStronger,
    SingularInput,
    SingularityBreach,
    SupportBreach,
)
from .model import (
    COMMITMENT_ASYMMETRIC,
    COMMITMENT_SYMMETRIC,
    NO_COMMITMENT,
    ONE_SHOT,
    AuctionSpec,
    is_standard_uniform,
)
from .rng import resolve_threads, stream

SCAN_POINTS = 10_000
ROOT_XTOL = 1e-12
EPS = np.finfo(float).eps


# ---------------------------------------------------------------------------
# symmetric commitment, uniform values
# ---------------------------------------------------------------------------

def p_n(n: int, v):
    """Stage-one win probability when bidding the cap against rivals whose
    cutoff is ``v`` (ties at the cap split uniformly).  Power-sum form."""
    v = np.asarray(v, dtype=float)
    out = np.zeros_like(v)
    term = np.ones_like(v)
    for _ in range(n):
        out = out + term
        term = term * v
    out = out / n
    return float(out) if out.ndim == 0 else out


def a_n(n: int, v):
    v = np.asarray(v, dtype=float)
    out = v ** (n + 1) * 2.0 * n / (n + 1.0) ** 2
    return float(out) if out.ndim == 0 else out


def b_n(n: int, v):
    v = np.asarray(v, dtype=float)
    out = (v - 0.5) * np.asarray(p_n(n, v))
    return float(out) if out.ndim == 0 else out


def cutoff_gap(n: int, v):
    """``a_n(v) - b_n(v)``: payoff of the linear bid minus payoff of the cap."""
    return a_n(n, v) - b_n(n, v)


@dataclass(frozen=True)
class CutoffResult:
    n: int
    v_hat: float
    residual: float
    bracket: tuple[float, float]
    roots: tuple[float, ...] = ()

    def to_dict(self) -> dict[str, Any]:
        lo, hi = st.cutoff_bracket(self.n)
        return {
            "n": self.n,
            "v_hat": self.v_hat,
            "residual": self.residual,
            "bracket_lo": self.bracket[0],
            "bracket_hi": self.bracket[1],
            "interval_lo": lo,
            "interval_hi": hi,
            "roots_found": len(self.roots),
        }


def solve_cutoff(n: int) -> CutoffResult:
    """Smallest root of ``a_n - b_n`` inside ``(1/2, (n+1)/(2n))``.

    A uniform grid over the interval is scanned for sign changes; each one
    is refined by bisection and recorded, and the first is returned.  The
    endpoints take part in the scan (the gap is positive at 1/2 and
    negative at (n+1)/(2n)) because for large ``n`` the root sits closer to
    1/2 than the grid spacing; roots exactly at an endpoint are excluded.
    """
    if n < 2:
        raise ConfigError("n must be >= 2")
    lo, hi = st.cutoff_bracket(n)
    grid = np.linspace(lo, hi, SCAN_POINTS + 2)
    d = cutoff_gap(n, grid)

    def gap(x: float) -> float:
        return float(cutoff_gap(n, x))

    roots: list[float] = []
    brackets: list[tuple[float, float]] = []
    for i in range(len(grid) - 1):
        if d[i] == 0.0 and 0 < i:
            roots.append(float(grid[i]))
            brackets.append((float(grid[i]), float(grid[i])))
        elif d[i] * d[i + 1] < 0.0:
            root = optimize.bisect(gap, grid[i], grid[i + 1], xtol=ROOT_XTOL, maxiter=200)
            roots.append(float(root))
            brackets.append((float(grid[i]), float(grid[i + 1])))
    if not roots:
        raise NoRootFound(f"no sign change of a_n - b_n in ({lo}, {hi}) for n={n}")
    v_hat = roots[0]
    return CutoffResult(n, v_hat, abs(gap(v_hat)), brackets[0], tuple(roots))


def interim_payoff_symmetric(b, v: float, n: int, cutoff: float, cap: float = st.DEFAULT_CAP):
    """Expected payoff of bidding ``b`` with value ``v`` when every rival plays
    the cutoff strategy with the given ``cutoff`` and ``cap`` (values and the
    entrant uniform on [0, 1])."""
    b = np.asarray(b, dtype=float)
    if np.any(b < 0) or np.any(b > cap):
        raise ConfigError(f"bids must lie in [0, {cap}]")
    slope = st.overbid_slope(n)
    kink = slope * cutoff
    below_one = b * (v - 0.5 * b)
    out = np.where(
        b <= kink,
        (b / slope) ** (n - 1) * below_one,
        np.where(
            b < 1.0,
            cutoff ** (n - 1) * below_one,
            np.where(b < cap, cutoff ** (n - 1) * (v - 0.5), p_n(n, cutoff) * (v - 0.5)),
        ),
    )
    return float(out) if out.ndim == 0 else out


def interim_payoff_asymmetric(b, v: float, n: int, w_bar: float):
    """Expected payoff against rivals bidding ``2n/(n+1) v`` and an entrant
    uniform on ``[0, w_bar]``; first-stage values uniform on [0, 1]."""
    if not w_bar > 2.0:
        raise NotSufficientlyStronger(f"w_bar = {w_bar} gives E[w] <= 1")
    b = np.asarray(b, dtype=float)
    slope = st.overbid_slope(n)
    contest = (b / w_bar) * (v - 0.5 * b)
    out = np.where(
        b <= slope,
        (b / slope) ** (n - 1) * contest,
        np.where(b <= w_bar, contest, v - 0.5 * w_bar),
    )
    return float(out) if out.ndim == 0 else out


# ---------------------------------------------------------------------------
# general distributions: the bid ODE
# ---------------------------------------------------------------------------

def h_n(b: float, v: float, n: int, f_dist: ValueDistribution, g_dist: ValueDistribution) -> float:
    """Slope db/dv of the equilibrium bid at the point ``(b, v)``."""
    if not b > v:
        raise SingularInput(f"need b > v, got b={b}, v={v}")
    big_f = float(f_dist.cdf(v))
    if big_f <= 0.0:
        raise SingularInput(f"F({v}) = 0")
    g_b = float(g_dist.pdf(b))
    if g_b <= 0.0:
        raise SingularInput(f"g({b}) = 0")
    # G(b) * E[v - w | w <= b] is the second-stage gain
    gain = float(g_dist.second_stage_gain(v, b))
    return (n - 1) / (b - v) * float(f_dist.pdf(v)) / big_f * gain / g_b


@dataclass(frozen=True, eq=False)
class OdeSolution:
    n: int
    values: np.ndarray = field(repr=False)
    bids: np.ndarray = field(repr=False)
    step: float
    seed_slope: float

    @property
    def knots(self) -> list[tuple[float, float]]:
        return list(zip(self.values.tolist(), self.bids.tolist()))

    @property
    def top_bid(self) -> float:
        return float(self.bids[-1])

    def rows(self, max_rows: int = 1000) -> list[tuple[float, float]]:
        """Knots thinned to at most ``max_rows`` (endpoints always kept)."""
        k = len(self.values)
        if k <= max_rows:
            idx = np.arange(k)
        else:
            idx = np.unique(np.linspace(0, k - 1, max_rows).round().astype(int))
        return [(float(self.values[i]), float(self.bids[i])) for i in idx]

    def to_dict(self) -> dict[str, Any]:
        return {
            "n": self.n,
            "step": self.step,
            "seed_slope": self.seed_slope,
            "v0": float(self.values[0]),
            "b0": float(self.bids[0]),
            "v_end": float(self.values[-1]),
            "b_end": self.top_bid,
            "knots": len(self.values),
        }


def _check_ode_inputs(f_dist: ValueDistribution, g_dist: ValueDistribution) -> None:
    if f_dist.lo != 0.0 or g_dist.lo != 0.0:
        raise ConfigError("the bid ODE needs both supports to start at 0")
    if not g_dist.mean() > f_dist.hi:
        raise NotSufficientlyStronger(
            f"E[w] = {g_dist.mean():.6g} does not exceed the first-stage maximum {f_dist.hi:.6g}"
        )


def solve_equilibrium_ode(
    n: int,
    f_dist: ValueDistribution,
    g_dist: ValueDistribution,
    step: Optional[float] = None,
    start_fraction: float = 1e-4,
) -> OdeSolution:
    """Integrate the bid ODE with classical RK4 from ``v0 = start_fraction * v_bar``.

    The start is seeded on the ray ``b = 2n/(n+1) v``.  Near ``v = 0`` the
    problem is stiff (decay rate of order ``n / v``), so an interval whose
    step exceeds ``v / (n + 4)`` is split into equal substeps; knots stay on
    the fixed grid.
    """
    if n < 2:
        raise ConfigError("n must be >= 2")
    _check_ode_inputs(f_dist, g_dist)
    v_bar = f_dist.hi
    w_bar = g_dist.hi
    v0 = start_fraction * v_bar
    span = v_bar - v0
    if step is None:
        n_steps = 10_000
    else:
        if not step > 0:
            raise ConfigError("step must be positive")
        n_steps = max(1, int(math.ceil(span / step - 1e-9)))
    grid = np.linspace(v0, v_bar, n_steps + 1)
    h = span / n_steps
    slope = st.overbid_slope(n)

    def rhs(v: float, b: float) -> float:
        if not b - v > 10 * EPS:
            raise SingularityBreach(f"b(v) - v = {b - v:.3g} at v = {v:.6g}")
        if b > w_bar:
            raise SupportBreach(f"b({v:.6g}) = {b:.6g} exceeds w_bar = {w_bar}")
        return h_n(b, v, n, f_dist, g_dist)

    bids = np.empty_like(grid)
    b = slope * v0
    bids[0] = b
    stiffness = n + 4.0
    for i in range(n_steps):
        v = grid[i]
        m = max(1, int(math.ceil(stiffness * h / v)))
        dv = (grid[i + 1] - v) / m
        for j in range(m):
            x = v + j * dv
            k1 = rhs(x, b)
            k2 = rhs(x + 0.5 * dv, b + 0.5 * dv * k1)
            k3 = rhs(x + 0.5 * dv, b + 0.5 * dv * k2)
            k4 = rhs(x + dv, b + dv * k3)
            b = b + dv / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        x_end = grid[i + 1]
        if not b - x_end > 10 * EPS:
            raise SingularityBreach(f"b(v) - v = {b - x_end:.3g} at v = {x_end:.6g}")
        if b > w_bar:
            raise SupportBreach(f"b({x_end:.6g}) = {b:.6g} exceeds w_bar = {w_bar}")
        bids[i + 1] = b
    return OdeSolution(n=n, values=grid, bids=bids, step=h, seed_slope=slope)


def step_halving_change(n: int, f_dist: ValueDistribution, g_dist: ValueDistribution,
                        step: Optional[float] = None) -> float:
    """|b(v_bar)| difference between step ``h`` and ``h/2`` integrations."""
    coarse = solve_equilibrium_ode(n, f_dist, g_dist, step)
    fine = solve_equilibrium_ode(n, f_dist, g_dist, coarse.step / 2.0)
    return abs(coarse.top_bid - fine.top_bid)


# ---------------------------------------------------------------------------
# large-n limit
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class LimitAnalysis:
    b_infinity: float
    limit_revenue_ca: float
    limit_revenue_nc: float

    def to_dict(self) -> dict[str, Any]:
        return {
            "b_infinity": self.b_infinity,
            "limit_revenue_ca": self.limit_revenue_ca,
            "limit_revenue_nc": self.limit_revenue_nc,
        }


def solve_b_infinity(f_sup: float, g_dist: ValueDistribution) -> float:
    """Bid level ``b`` at which the entrant's truncated mean reaches ``f_sup``."""
    if not g_dist.mean() > f_sup:
        raise NotSufficientlyStronger(
            f"E[w] = {g_dist.mean():.6g} does not exceed {f_sup:.6g}; no limit bid exists"
        )
    lo = max(f_sup, g_dist.lo)
    if lo <= g_dist.lo:
        lo = g_dist.lo + ROOT_XTOL

    def excess(b: float) -> float:
        return float(g_dist.truncated_mean(b)) - f_sup

    return float(optimize.bisect(excess, lo, g_dist.hi, xtol=ROOT_XTOL, maxiter=200))


def limit_revenue_commitment_asymmetric(b_inf: float, g_dist: ValueDistribution, v_bar: float) -> float:
    """E[min(b_inf, w)] = (1 - G(b)) b + G(b) E[w | w <= b]."""
    mass = float(g_dist.cdf(b_inf))
    return (1.0 - mass) * b_inf + float(g_dist.partial_expectation(b_inf))


def limit_analysis(f_dist: ValueDistribution, g_dist: ValueDistribution) -> LimitAnalysis:
    b_inf = solve_b_infinity(f_dist.hi, g_dist)
    return LimitAnalysis(
        b_infinity=b_inf,
        limit_revenue_ca=limit_revenue_commitment_asymmetric(b_inf, g_dist, f_dist.hi),
        limit_revenue_nc=f_dist.hi,
    )


def envelope_identity_check(n: int, f_dist: ValueDistribution, g_dist: ValueDistribution,
                            ode: OdeSolution) -> float:
    """|W(v_bar) computed directly - W(v_bar) integrated from its envelope derivative|."""
    v, b = ode.values, ode.bids
    v_bar = float(v[-1])
    direct = float(f_dist.cdf(v_bar)) ** (n - 1) * float(g_dist.second_stage_gain(v_bar, b[-1]))
    integrand = np.asarray(f_dist.cdf(v)) ** (n - 1) * np.asarray(g_dist.cdf(b))
    envelope = float(integrate.simpson(integrand, x=v))
    # [0, v0] piece, integrand vanishes at 0
    envelope += 0.5 * float(v[0]) * float(integrand[0])
    return abs(direct - envelope)


# ---------------------------------------------------------------------------
# best-response verification
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class VerificationReport:
    max_gain: float
    worst_value: float
    passed: bool
    tol: float
    mode: str
    strategy: str
    n: int
    value_grid_size: int
    bid_grid_size: int

    def to_dict(self) -> dict[str, Any]:
        return {
            "mode": self.mode,
            "strategy": self.strategy,
            "n": self.n,
            "max_gain": self.max_gain,
            "worst_value": self.worst_value,
            "tol": self.tol,
            "pass": self.passed,
        }


_KIND_FOR_MODE = {
    NO_COMMITMENT: (st.NO_COMMITMENT,),
    COMMITMENT_SYMMETRIC: (st.COMMITMENT_SYMMETRIC,),
    COMMITMENT_ASYMMETRIC: (st.COMMITMENT_ASYMMETRIC, st.ODE_NUMERIC),
    ONE_SHOT: (),
}


def _with_mandatory(grid: np.ndarray, *points: float) -> np.ndarray:
    return np.unique(np.concatenate([grid, np.asarray(points, dtype=float)]))


def _mimic_tables(n: int, f: ValueDistribution, strategy: st.BidStrategy, u: np.ndarray):
    """F(u)^(n-1) and J(u) = int_lo^u beta(y) d[F(y)^(n-1)] on the grid ``u``."""
    top = np.asarray(f.cdf(u)) ** (n - 1)

    def density(y: float) -> float:
        return float(strategy.bid(y)) * (n - 1) * float(f.cdf(y)) ** (n - 2) * float(f.pdf(y))

    pieces = [0.0]
    for a, c in zip(u[:-1], u[1:]):
        pieces.append(integrate.quad(density, a, c, epsabs=1e-12)[0])
    return top, np.cumsum(pieces)


def _first_stage_gain(spec: AuctionSpec, strategy: st.BidStrategy, values: np.ndarray,
                      bid_grid_size: int) -> Callable[[float], float]:
    n = spec.n
    f, g = spec.f_dist, spec.g_dist

    if strategy.kind == st.COMMITMENT_SYMMETRIC:
        cutoff, cap = strategy.cutoff, strategy.cap
        grid = _with_mandatory(np.linspace(0.0, cap, bid_grid_size), st.overbid_slope(n) * cutoff, 1.0, cap)

        def gain(v: float) -> float:
            eq = float(interim_payoff_symmetric(float(strategy.bid(v)), v, n, cutoff, cap))
            best = float(np.max(interim_payoff_symmetric(grid, v, n, cutoff, cap)))
            return max(best, eq) - eq

        return gain

    analytic_ca = (
        strategy.kind == st.COMMITMENT_ASYMMETRIC
        and is_standard_uniform(f)
        and isinstance(g, Uniform)
        and g.lo == 0.0
    )
    if analytic_ca:
        w_bar = g.hi
        grid = _with_mandatory(np.linspace(0.0, w_bar, bid_grid_size), st.overbid_slope(n), w_bar, 1.05 * w_bar)

        def gain(v: float) -> float:
            eq = float(interim_payoff_asymmetric(float(strategy.bid(v)), v, n, w_bar))
            best = float(np.max(interim_payoff_asymmetric(grid, v, n, w_bar)))
            return max(best, eq) - eq

        return gain

    # Bidding beta(u) is indexed by the rival type u it ties with, so the
    # grid never needs beta inverted.  The value grid is a subset of u.
    u = _with_mandatory(np.linspace(f.lo, f.hi, bid_grid_size), *values)
    top, cum = _mimic_tables(n, f, strategy, u)

    if strategy.kind == st.NO_COMMITMENT:
        def gain(v: float) -> float:
            payoff = float(g.second_stage_gain(v, v)) * top - cum
            eq = payoff[np.searchsorted(u, v)]
            return float(max(np.max(payoff), eq) - eq)

        return gain

    beta_u = np.asarray(strategy.bid(u))
    above = np.linspace(beta_u[-1], g.hi, max(2, bid_grid_size // 4))

    def gain(v: float) -> float:
        payoff = top * np.asarray(g.second_stage_gain(v, beta_u))
        eq = payoff[np.searchsorted(u, v)]
        best = max(np.max(payoff), np.max(np.asarray(g.second_stage_gain(v, above))))
        return float(max(best, eq) - eq)

    return gain


def verify_best_response(
    spec: AuctionSpec,
    strategy: st.BidStrategy,
    value_grid_size: int = 200,
    bid_grid_size: int = 2000,
    tol: float = 1e-6,
    threads: Optional[int] = 1,
    rival_strategy: Optional[st.BidStrategy] = None,
) -> VerificationReport:
    """Largest interim gain from deviating, over a grid of values.

    For every value ``v`` on the grid the equilibrium payoff of
    ``strategy.bid(v)`` is compared with the best payoff over a bid grid
    that includes every branch boundary.  A truthful strategy is checked as
    the entrant's second-stage reply; ``rival_strategy`` then overrides the
    first-stage strategy whose winning bid the entrant faces.
    """
    if strategy.kind == st.TRUTHFUL:
        return _verify_entrant(spec, value_grid_size, bid_grid_size, tol, rival_strategy)

    if strategy.kind not in _KIND_FOR_MODE[spec.mode] or strategy.n != spec.n:
        raise ConfigError(
            f"strategy {strategy.kind} (n={strategy.n}) is inconsistent with mode {spec.mode} (n={spec.n})"
        )
    values = np.linspace(spec.f_dist.lo, spec.f_dist.hi, value_grid_size)
    gain_fn = _first_stage_gain(spec, strategy, values, bid_grid_size)

    workers = resolve_threads(threads)
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            gains = np.array(list(pool.map(gain_fn, values.tolist())))
    else:
        gains = np.array([gain_fn(v) for v in values.tolist()])
    worst = int(np.argmax(gains))
    max_gain = float(gains[worst])
    return VerificationReport(
        max_gain=max_gain,
        worst_value=float(values[worst]),
        passed=bool(max_gain <= tol),
        tol=tol,
        mode=spec.mode,
        strategy=strategy.kind,
        n=spec.n,
        value_grid_size=value_grid_size,
        bid_grid_size=bid_grid_size,
    )


def _verify_entrant(spec: AuctionSpec, value_grid_size: int, bid_grid_size: int, tol: float,
                    rival_strategy: Optional[st.BidStrategy]) -> VerificationReport:
    """Entrant with value w facing the stage-one winner's stage-two bid.

    The opposing bid is represented by a deterministic quantile sample of
    the highest first-stage value; payoffs are exact averages over it,
    ties at an atom count one half.
    """
    from .simulation import equilibrium_strategy

    n = spec.n
    f, g = spec.f_dist, spec.g_dist
    m = 20_000
    q = (np.arange(m) + 0.5) / m
    top_values = np.asarray(f.quantile(q ** (1.0 / n)))
    if spec.mode in (NO_COMMITMENT, ONE_SHOT):
        opp = top_values
    else:
        first = rival_strategy if rival_strategy is not None else equilibrium_strategy(spec)
        opp = np.asarray(first.bid(top_values))
    opp = np.sort(opp)
    prefix = np.concatenate(([0.0], np.cumsum(opp)))

    def payoff(bids: np.ndarray, w: float) -> np.ndarray:
        left = np.searchsorted(opp, bids, side="left")
        right = np.searchsorted(opp, bids, side="right")
        strict = w * left - prefix[left]
        tied = 0.5 * (right - left) * (w - bids)
        return (strict + tied) / m

    upper = max(float(opp[-1]) * 1.1, g.hi)
    values = np.linspace(g.lo, g.hi, value_grid_size)
    base = _with_mandatory(np.linspace(0.0, upper, bid_grid_size), *np.unique(opp[-1:]))
    gains = np.empty_like(values)
    for i, w in enumerate(values):
        eq = float(payoff(np.array([w]), w)[0])
        gains[i] = max(float(np.max(payoff(base, w))), eq) - eq
    worst = int(np.argmax(gains))
    max_gain = float(gains[worst])
    return VerificationReport(
        max_gain=max_gain,
        worst_value=float(values[worst]),
        passed=bool(max_gain <= tol),
        tol=tol,
        mode=spec.mode,
        strategy=st.TRUTHFUL,
        n=n,
        value_grid_size=value_grid_size,
        bid_grid_size=bid_grid_size,
    )


# ---------------------------------------------------------------------------
# Monte Carlo cross-check of interim payoffs
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class PayoffSample:
    bids: np.ndarray
    mean: np.ndarray
    stderr: np.ndarray
    diff_stderr: np.ndarray  # stderr of payoff(bids[k]) - payoff(bids[0]), paired


def interim_payoff_mc(spec: AuctionSpec, strategy: st.BidStrategy, v: float, bids,
                      trials: int = 200_000, seed: int = 0) -> PayoffSample:
    """Simulated interim payoff of a first-stage bidder with value ``v``.

    Every bid in ``bids`` is evaluated on the same draws of rivals and
    entrant, so differences are paired.
    """
    bids = np.atleast_1d(np.asarray(bids, dtype=float))
    rng = stream(seed, 0)
    rivals = np.asarray(spec.f_dist.sample(rng, (trials, spec.n - 1)))
    w = np.asarray(spec.g_dist.sample(rng, trials))
    tie_u = rng.random(trials)
    rival_bids = np.asarray(strategy.bid(rivals))
    top = rival_bids.max(axis=1)
    ties = (rival_bids == top[:, None]).sum(axis=1)

    cols = []
    for b in bids:
        win = np.where(b > top, 1.0, np.where(b == top, (tie_u * (ties + 1) < 1.0).astype(float), 0.0))
        if spec.mode == NO_COMMITMENT:
            pay = win * (np.maximum(v - w, 0.0) - top)
        else:
            pay = win * np.where(w < b, v - w, 0.0)
        cols.append(pay)
    mat = np.stack(cols, axis=1)
    mean = mat.mean(axis=0)
    se = mat.std(axis=0, ddof=1) / math.sqrt(trials)
    diff = mat - mat[:, :1]
    dse = diff.std(axis=0, ddof=1) / math.sqrt(trials)
    return PayoffSample(bids=bids, mean=mean, stderr=se, diff_stderr=dse)
