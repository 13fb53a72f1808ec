import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as hs

from two_stage_auction import strategies as st
from two_stage_auction.distributions import TruncatedExponential, Uniform
from two_stage_auction.equilibrium import solve_equilibrium_ode
from two_stage_auction.errors import ConfigError, InvalidCutoff, OutOfRange

U01 = Uniform(0.0, 1.0)
U04 = Uniform(0.0, 4.0)
GRID = np.linspace(0.001, 1.0, 1000)


@pytest.fixture(scope="module")
def ode_n2():
    return solve_equilibrium_ode(2, U01, U04)


@pytest.mark.parametrize("v", [0.0, 0.7, 1.0, 3.5])
def test_truthful_bid(v):
    assert st.truthful_bid(v) == v
    assert st.truthful().bid(v) == v


@pytest.mark.parametrize("g, v, expected", [(U01, 1.0, 0.5), (U01, 0.0, 0.0), (U04, 0.0, 0.0), (U04, 1.0, 0.125)])
def test_no_commitment_bid_examples(g, v, expected):
    assert st.no_commitment_first_stage_bid(v, g) == pytest.approx(expected, abs=1e-15)


@pytest.mark.parametrize("v, expected", [(0.5, 2 / 3), (0.9, 1.5), (0.0, 0.0), (0.645, 0.86)])
def test_commitment_symmetric_examples(v, expected):
    assert st.commitment_symmetric_bid(v, 2, 0.645, 1.5) == pytest.approx(expected, abs=1e-15)


@pytest.mark.parametrize("cutoff", [0.5, 0.75, 0.3, 0.9])
def test_commitment_symmetric_rejects_cutoff(cutoff):
    with pytest.raises(InvalidCutoff):
        st.commitment_symmetric_bid(0.4, 2, cutoff, 1.5)


def test_commitment_symmetric_rejects_low_cap():
    with pytest.raises(ConfigError):
        st.commitment_symmetric_bid(0.4, 2, 0.645, 1.0)


@pytest.mark.parametrize("n, v, expected", [(2, 0.5, 2 / 3), (10, 1.0, 20 / 11), (5, 0.0, 0.0)])
def test_commitment_asymmetric_examples(n, v, expected):
    assert st.commitment_asymmetric_bid(v, n) == pytest.approx(expected, abs=1e-15)


def test_ode_bid_examples(ode_n2):
    table = (ode_n2.values, ode_n2.bids)
    assert st.ode_numeric_bid(table, 0.5) == pytest.approx(2 / 3, abs=1e-6)
    assert st.ode_numeric_bid(table, ode_n2.values[0]) == ode_n2.bids[0]
    assert st.ode_numeric_bid(table, ode_n2.values[-1]) == ode_n2.bids[-1]
    with pytest.raises(OutOfRange):
        st.ode_numeric_bid(table, 0.0)
    with pytest.raises(OutOfRange):
        st.ode_numeric_bid(table, 1.01)


def test_ode_bid_flat_segment():
    table = (np.array([0.0, 0.5, 1.0]), np.array([0.0, 0.7, 0.7]))
    assert st.ode_numeric_bid(table, 0.8) == 0.7


def test_from_ode_solution_reaches_zero(ode_n2):
    s = st.from_ode_solution(ode_n2)
    assert s.bid(0.0) == 0.0
    assert s.bid(1.0) == pytest.approx(4 / 3, abs=1e-9)


def _all_strategies():
    out = [st.truthful(1.0), st.no_commitment(3, U01), st.no_commitment(3, U04)]
    for n in (2, 3, 5, 10):
        out += [st.commitment_symmetric(n), st.commitment_asymmetric(n)]
    return out


ALL = _all_strategies()


@pytest.mark.parametrize("s", ALL, ids=lambda s: f"{s.kind}-{s.n}")
def test_bid_at_zero(s):
    assert s.bid(0.0) == 0.0


@pytest.mark.parametrize("s", [s for s in ALL if s.is_commitment], ids=lambda s: f"{s.kind}-{s.n}")
def test_commitment_overbids_on_grid(s):
    assert np.all(s.bid(GRID) > GRID)


def test_ode_overbids_at_every_knot():
    f, g = TruncatedExponential(0.0, 1.0, 1.5), TruncatedExponential(0.0, 4.0, 0.2)
    sol = solve_equilibrium_ode(3, f, g)
    assert np.all(sol.bids > sol.values)
    assert np.all(np.diff(sol.bids) > 0)


@pytest.mark.parametrize("n", [2, 4, 9])
def test_slope_on_linear_branch(n):
    cs, ca = st.commitment_symmetric(n), st.commitment_asymmetric(n)
    v = GRID[GRID <= cs.cutoff]
    assert np.allclose(cs.bid(v) / v, 2 * n / (n + 1), rtol=0, atol=1e-15)
    assert np.allclose(ca.bid(GRID) / GRID, 2 * n / (n + 1), rtol=0, atol=1e-15)


@given(hs.floats(0.0, 1.0), hs.sampled_from([U01, U04, Uniform(0.0, 2.5)]))
def test_no_commitment_bid_below_value(v, g):
    assert st.no_commitment_first_stage_bid(v, g) <= v


@given(hs.sampled_from(ALL), hs.floats(0.0, 1.0), hs.floats(0.0, 1.0))
def test_bids_monotone(s, a, b):
    lo, hi = sorted((a, b))
    assert s.bid(lo) <= s.bid(hi)


def test_bid_clamps_to_support():
    s = st.commitment_asymmetric(2)
    assert s.bid(-0.3) == 0.0
    assert s.bid(1.7) == pytest.approx(4 / 3)


def test_descriptor_round_trip():
    cs = st.commitment_symmetric(4, cap=2.0)
    again = st.from_descriptor(cs.describe())
    assert (again.kind, again.n, again.cap, again.cutoff) == (cs.kind, 4, 2.0, cs.cutoff)
    nc = st.from_descriptor({"kind": "no_commitment", "n": 3, "g": {"kind": "uniform", "lo": 0, "hi": 4}})
    assert nc.bid(1.0) == pytest.approx(0.125)
    with pytest.raises(ConfigError):
        st.from_descriptor({"kind": "mystery"})


def test_strategy_validation():
    with pytest.raises(ConfigError):
        st.BidStrategy("no_commitment", n=2)
    with pytest.raises(ConfigError):
        st.commitment_asymmetric(1)
    with pytest.raises(InvalidCutoff):
        st.commitment_symmetric(3, cutoff=0.9)
