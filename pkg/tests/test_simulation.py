import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as hs
from scipy import integrate

from two_stage_auction import simulation as sim
from two_stage_auction import strategies as st
from two_stage_auction.distributions import TruncatedExponential, Uniform
from two_stage_auction.errors import AuctionError, ConfigError, NotSufficientlyStronger, StrategyModeMismatch
from two_stage_auction.model import AuctionSpec, normalize_mode
from two_stage_auction.rng import stream

U04 = Uniform(0.0, 4.0)
MODES = ("no_commitment", "commitment_symmetric", "commitment_asymmetric", "one_shot")


def _spec(mode, n=3):
    return AuctionSpec(n, mode, g_dist=U04 if mode == "commitment_asymmetric" else Uniform(0.0, 1.0))


def oracle_revenue(n, strategy, g, breaks=()):
    """E[min(bid(max v), w)] for Uniform(0,1) first-stage values, by quadrature."""
    def integrand(v):
        b = float(strategy.bid(v))
        return integrate.quad(lambda t: 1.0 - float(g.cdf(t)), 0.0, b)[0] * n * v ** (n - 1)

    return integrate.quad(integrand, 0.0, 1.0, points=list(breaks) or None, limit=200)[0]


# -- single trials -------------------------------------------------------------

def test_no_commitment_trial_example():
    spec = AuctionSpec(2, "no_commitment")
    out = sim.outcome_from_draws(spec, sim.equilibrium_strategy(spec), [0.8, 0.6], 0.3, 0.5)
    assert out.stage1_bids == pytest.approx((0.32, 0.18))
    assert out.stage1_winner == 0
    assert out.stage1_payment == pytest.approx(0.18)
    assert out.stage2_winner == "first_stage"
    assert out.stage2_payment == 0.3
    assert out.revenue == pytest.approx(0.48)
    assert out.efficient


def test_asymmetric_trial_example():
    spec = AuctionSpec(2, "commitment_asymmetric", g_dist=U04)
    out = sim.outcome_from_draws(spec, sim.equilibrium_strategy(spec), [0.9, 0.3], 1.5, 0.5)
    assert out.stage1_bids == pytest.approx((1.2, 0.4))
    assert out.stage1_payment == 0.0
    assert out.stage2_winner == "entrant"
    assert out.revenue == pytest.approx(1.2)
    assert out.efficient


def test_commitment_trial_can_be_inefficient():
    spec = AuctionSpec(2, "commitment_asymmetric", g_dist=U04)
    out = sim.outcome_from_draws(spec, sim.equilibrium_strategy(spec), [0.9, 0.3], 1.0, 0.5)
    assert out.stage2_winner == "first_stage"
    assert out.revenue == 1.0
    assert not out.efficient


def test_one_shot_trial():
    spec = AuctionSpec(3, "one_shot")
    out = sim.outcome_from_draws(spec, st.truthful(), [0.2, 0.9, 0.4], 0.7, 0.1)
    assert out.revenue == 0.7 and out.stage2_winner == "first_stage" and out.stage1_winner == 1


def test_tie_lottery_frequencies():
    spec = AuctionSpec(4, "commitment_symmetric")
    strat = sim.equilibrium_strategy(spec)
    values = [0.9, 0.95, 0.8, 0.99]  # all above the cutoff: everyone bids the cap
    rng = np.random.default_rng(1)
    counts = np.zeros(4)
    trials = 40_000
    for u in rng.random(trials):
        counts[sim.outcome_from_draws(spec, strat, values, 0.5, u).stage1_winner] += 1
    p = counts / trials
    assert np.all(np.abs(p - 0.25) <= 4 * np.sqrt(0.25 * 0.75 / trials))


def test_tie_lottery_partition():
    for k in (1, 2, 3, 7):
        picks = [sim._lottery(u, k)[0] for u in (np.arange(k * 10) + 0.5) / (k * 10)]
        assert np.bincount(picks, minlength=k).tolist() == [10] * k


def test_run_trial_deterministic():
    spec = AuctionSpec(3, "no_commitment")
    a = sim.run_trial(spec, None, stream(5))
    b = sim.run_trial(spec, None, stream(5))
    assert a == b


def test_strategy_mode_mismatch():
    spec = AuctionSpec(2, "no_commitment")
    with pytest.raises(StrategyModeMismatch):
        sim.outcome_from_draws(spec, st.commitment_asymmetric(2), [0.5, 0.4], 0.3, 0.5)
    with pytest.raises(StrategyModeMismatch):
        sim.estimate_revenue(AuctionSpec(2, "one_shot"), 100, 1, strategy=st.no_commitment(2, Uniform(0, 1)))


# -- spec --------------------------------------------------------------------

def test_spec_validation():
    with pytest.raises(ConfigError):
        AuctionSpec(1, "no_commitment")
    with pytest.raises(ConfigError):
        AuctionSpec(2, "commitment_symmetric", g_dist=U04)
    with pytest.raises(ConfigError):
        AuctionSpec(2, "commitment_symmetric", cap=1.0)
    with pytest.raises(NotSufficientlyStronger):
        AuctionSpec(2, "commitment_asymmetric", g_dist=Uniform(0.0, 2.0))
    with pytest.raises(ConfigError):
        normalize_mode("dutch")
    assert AuctionSpec(2, "cs").cap == st.DEFAULT_CAP
    assert AuctionSpec(2, "cs").with_(mode="nc").cap is None


def test_spec_round_trip():
    spec = AuctionSpec(4, "commitment_asymmetric", f_dist=TruncatedExponential(0.0, 1.0, 1.5), g_dist=U04)
    assert AuctionSpec.from_dict(spec.describe()) == spec


# -- batches -------------------------------------------------------------------

@pytest.mark.parametrize("mode", MODES)
def test_batch_matches_reference(mode):
    spec = _spec(mode, n=3)
    strat = sim.equilibrium_strategy(spec)
    values, w, tie_u = sim.draw_chunk(spec, stream(42), 2000)
    # force exact ties in some rows
    values[:50] = values[:50, :1]
    batch = sim.play_batch(spec, strat, values, w, tie_u)
    for i in range(values.shape[0]):
        ref = sim.outcome_from_draws(spec, strat, values[i], w[i], tie_u[i])
        assert batch.revenue[i] == pytest.approx(ref.revenue, abs=1e-15)
        assert batch.stage1_winner[i] == ref.stage1_winner
        assert batch.entrant_wins[i] == (ref.stage2_winner == "entrant")
        assert batch.efficient[i] == ref.efficient


@pytest.mark.parametrize("mode", ["commitment_symmetric", "commitment_asymmetric"])
def test_commitment_revenue_identity(mode):
    spec = _spec(mode, n=5)
    strat = sim.equilibrium_strategy(spec)
    for batch, (values, w, tie_u) in (
        (sim.play_batch(spec, strat, *d), d) for d in [sim.draw_chunk(spec, stream(7, k), 20_000) for k in range(3)]
    ):
        expected = np.minimum(strat.bid(values.max(axis=1)), w)
        assert np.array_equal(batch.revenue, expected)
        assert np.all(batch.revenue <= batch.w)


def test_no_commitment_efficient_and_commitment_not():
    nc = sim.estimate_revenue(AuctionSpec(4, "no_commitment"), 200_000, 3)
    assert nc.diagnostics["inefficient_fraction"] == 0.0
    for mode in ("commitment_symmetric", "commitment_asymmetric"):
        est = sim.estimate_revenue(_spec(mode, 4), 1_000_000, 3)
        assert est.diagnostics["inefficient_fraction"] > 0.0
        assert est.diagnostics["revenue_above_w"] == 0


# -- estimation ---------------------------------------------------------------

def test_estimate_deterministic_across_threads():
    spec = AuctionSpec(3, "commitment_symmetric")
    a = sim.estimate_revenue(spec, 300_000, 11, threads=1)
    b = sim.estimate_revenue(spec, 300_000, 11, threads=4)
    assert a == b
    assert a != sim.estimate_revenue(spec, 300_000, 12, threads=1)


def test_stderr_definition():
    spec = AuctionSpec(2, "no_commitment")
    est = sim.estimate_revenue(spec, 100_000, 9)
    rev = np.concatenate([b.revenue for b in sim.chunk_revenues(spec, 100_000, 9)])
    assert est.mean == pytest.approx(rev.mean(), rel=1e-12)
    assert est.stderr == pytest.approx(rev.std(ddof=1) / np.sqrt(rev.size), rel=1e-9)


def test_stderr_scaling():
    spec = AuctionSpec(3, "no_commitment")
    ratios = [sim.estimate_revenue(spec, 40_000, s).stderr / sim.estimate_revenue(spec, 160_000, s).stderr
              for s in (1, 2, 3)]
    assert all(abs(r - 2.0) <= 0.4 for r in ratios)


@pytest.mark.parametrize("n", [2, 8])
def test_no_commitment_matches_closed_form(n):
    est = sim.estimate_revenue(AuctionSpec(n, "no_commitment"), 1_000_000, 17)
    assert abs(est.mean - n / (n + 2)) <= 3 * est.stderr
    assert sim.exact_revenue_nc_uniform(n) == n / (n + 2)


def test_exact_revenue_limits():
    assert sim.exact_revenue_nc_uniform(10_000) > 0.999
    assert sim.exact_revenue(AuctionSpec(2, "one_shot")) == 0.5
    assert sim.exact_revenue(AuctionSpec(2, "cs")) is None
    with pytest.raises(AuctionError):
        sim.exact_revenue_nc_uniform(1)


@pytest.mark.parametrize("n", [2, 5])
def test_symmetric_revenue_matches_quadrature(n):
    strat = st.commitment_symmetric(n)
    oracle = oracle_revenue(n, strat, Uniform(0.0, 1.0), breaks=[strat.cutoff])
    assert oracle < 0.5
    est = sim.estimate_revenue(AuctionSpec(n, "cs"), 1_000_000, 23, control_variate=True)
    assert abs(est.mean - oracle) <= 3 * est.stderr
    assert est.diagnostics["plain_mean"] == pytest.approx(oracle, abs=3 * est.diagnostics["plain_stderr"] + 1e-9)


@pytest.mark.parametrize("n", [2, 10])
def test_asymmetric_revenue_matches_quadrature(n):
    oracle = oracle_revenue(n, st.commitment_asymmetric(n), U04)
    est = sim.estimate_revenue(AuctionSpec(n, "ca", g_dist=U04), 1_000_000, 29)
    assert abs(est.mean - oracle) <= 3 * est.stderr


def test_control_variate_unbiased_and_tighter():
    spec = AuctionSpec(6, "cs")
    plain = sim.estimate_revenue(spec, 500_000, 31)
    cv = sim.estimate_revenue(spec, 500_000, 31, control_variate=True)
    assert cv.diagnostics["plain_mean"] == plain.mean
    assert cv.stderr < plain.stderr / 10
    assert abs(cv.mean - plain.mean) <= 3 * plain.stderr


def test_paired_difference():
    a, b = AuctionSpec(2, "no_commitment"), AuctionSpec(2, "one_shot")
    paired = sim.paired_revenue_difference(a, b, 400_000, 13)
    assert paired.diff == pytest.approx(paired.a.mean - paired.b.mean, abs=1e-12)
    assert abs(paired.diff) <= 3 * paired.diff_stderr
    assert paired.diff_stderr < paired.a.stderr
    with pytest.raises(AuctionError):
        sim.paired_revenue_difference(a, AuctionSpec(3, "one_shot"), 100, 1)


def test_second_order_statistic_matches_one_shot_exactly():
    spec = AuctionSpec(3, "one_shot")
    so = sim.second_order_statistic_mean(spec, 200_000, 8)
    one_shot = sim.estimate_revenue(spec, 200_000, 8)
    assert (so.mean, so.stderr) == (one_shot.mean, one_shot.stderr)
    est = sim.second_order_statistic_mean(AuctionSpec(2, "no_commitment"), 1_000_000, 8)
    assert abs(est.mean - 0.5) <= 3 * est.stderr


def test_second_order_statistic_large_n():
    est = sim.second_order_statistic_mean(AuctionSpec(100, "no_commitment", g_dist=U04), 100_000, 8)
    assert 0.97 < est.mean < 1.0


def test_first_stage_payment_flag_raises_revenue():
    base = AuctionSpec(3, "cs")
    paid = AuctionSpec(3, "cs", first_stage_pays=True)
    r0 = sim.estimate_revenue(base, 100_000, 4)
    r1 = sim.estimate_revenue(paid, 100_000, 4)
    assert r1.mean > r0.mean + 0.1
    out = sim.outcome_from_draws(paid, sim.equilibrium_strategy(paid), [0.3, 0.2, 0.1], 0.9, 0.5)
    assert out.stage1_payment == pytest.approx(1.5 * 0.2)


def test_revenue_table_rows_and_errors():
    template = AuctionSpec(2, "no_commitment")
    rows = sim.revenue_table(["nc", "cs", "ca"], [2, 3], template, 20_000, 5, baseline="one_shot")
    assert [(r["mode"], r["n"]) for r in rows][:2] == [("no_commitment", 2), ("no_commitment", 3)]
    assert rows[0]["exact"] == 0.5
    assert all("diff" in r for r in rows[:4])
    ca_rows = [r for r in rows if "error" in r]
    assert len(ca_rows) == 2 and all(r["mode"] == "ca" for r in ca_rows)


def test_revenue_table_cap_applies_to_symmetric_rows():
    template = AuctionSpec(2, "no_commitment")
    r15, r30 = (sim.revenue_table(["cs"], [3], template, 20_000, 5, cap=c)[0]["mean"] for c in (1.5, 3.0))
    assert r15 == r30  # revenue is min(bid, w) with w <= 1, so the cap level is irrelevant


def test_estimate_rejects_bad_inputs():
    with pytest.raises(AuctionError):
        sim.estimate_revenue(AuctionSpec(2, "nc"), 0, 1)
    with pytest.raises(ConfigError):
        sim.estimate_revenue(AuctionSpec(2, "nc"), 10, -1)


def test_non_uniform_asymmetric_uses_ode():
    spec = AuctionSpec(3, "ca", f_dist=TruncatedExponential(0.0, 1.0, 1.5),
                       g_dist=TruncatedExponential(0.0, 4.0, 0.2))
    strat = sim.equilibrium_strategy(spec)
    assert strat.kind == "ode_numeric"
    est = sim.estimate_revenue(spec, 50_000, 2, strategy=strat)
    assert est.diagnostics["revenue_above_w"] == 0


@settings(max_examples=25, deadline=None)
@given(hs.sampled_from(MODES), hs.integers(2, 6), hs.integers(0, 2**32))
def test_batch_invariants(mode, n, seed):
    spec = _spec(mode, n)
    strat = sim.equilibrium_strategy(spec)
    batch = sim.play_batch(spec, strat, *sim.draw_chunk(spec, stream(seed), 500))
    assert np.all(batch.revenue >= 0)
    if mode in ("no_commitment", "one_shot"):
        assert np.all(batch.efficient)
    else:
        assert np.all(batch.revenue <= batch.w)
