import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from irrdrbsde import pricing as P
from irrdrbsde.bsde import driver_library
from irrdrbsde.drbsde import compare, solve_direct
from irrdrbsde.dynkin import NODE_CAP, game_values
from irrdrbsde.generators import random_pair
from irrdrbsde.process import AdmissiblePair, LadlagProcess, regularity
from irrdrbsde.rbsde import ref_operator
from irrdrbsde.tree import FOUR, TimeGrid, build_tree

MKT = {"r": 0.02, "R": 0.08, "mu": [0.05, 0.04], "sigma": [0.3, 0.2], "beta": [0.0, 0.4]}


def tree_(n=3, lam=0.0, T=1.0, scheme="three"):
    return build_tree(TimeGrid.uniform(T, n), lam=lam, scheme=scheme)


def test_constant_market_needs_opt_in():
    tree = tree_(2, lam=0.5)
    zero = {"r": 0.0, "mu": [0, 0], "sigma": [0, 0], "beta": [0, 0]}
    with pytest.raises(P.MarketError):
        P.build_market(zero, tree)
    m = P.build_market(zero, tree, require_invertible=False)
    assert np.all(m.S1 == 1.0) and np.all(m.S2 == 1.0) and np.all(m.S0 == 1.0)
    assert not m.invertible
    with pytest.raises(P.MarketError):
        _ = m.Sigma_inv
    xi = LadlagProcess(np.ones(tree.n_nodes), np.ones(tree.n_inner))
    res = P.price_game_option(AdmissiblePair(xi, xi), m, driver_library("zero", {"lam": 0.5}))
    assert res.u0 == 1.0 and res.plan_star is None and any("singular" in n for n in res.notes)


def test_market_validation():
    tree = tree_(2)
    with pytest.raises(P.MarketError):
        P.build_market({**MKT, "beta": [-1.0, 0.4]}, tree)
    with pytest.raises(P.MarketError):
        P.build_market({**MKT, "sigma": [0.3, np.nan]}, tree)
    m = P.build_market(MKT, tree)
    with pytest.raises(P.MarketError):
        P.payoff_builders("barrier_call", {"K": 1.0, "L": 1.0}, m)
    with pytest.raises(P.MarketError):
        P.payoff_builders("basket", {"delta": -1.0}, m)
    with pytest.raises(P.MarketError):
        P.payoff_builders("digital", {}, m)
    with pytest.raises(P.MarketError):
        P.payoff_builders("barrier_call", {"form": "multiplicative", "delta": 0.5}, m)
    with pytest.raises(P.MarketError):
        P.payoff_builders("barrier_call", {"form": "ratio"}, m)


def test_barrier_penalty_forms():
    m = P.build_market(MKT, tree_(3, lam=0.5))
    g = np.maximum(m.S1 - 1.0, 0.0)
    add = P.payoff_builders("barrier_call", {"K": 1.0, "L": 0.9, "delta": 0.05}, m)
    mul = P.payoff_builders("barrier_call", {"K": 1.0, "L": 0.9, "delta": 1.5, "form": "multiplicative"}, m)
    ni = m.tree.n_inner
    assert np.array_equal(add.zeta.at[:ni], g[:ni] + 0.05) and np.array_equal(mul.zeta.at[:ni], 1.5 * g[:ni])
    for pair in (add, mul):
        assert np.array_equal(pair.zeta.right, pair.zeta.at[:ni])
        assert np.array_equal(pair.zeta.at[ni:], pair.xi.at[ni:])


def test_bank_account_compounds():
    tree = build_tree(TimeGrid([0.0, 0.3, 0.5, 1.0]), lam=0.0)
    m = P.build_market(MKT, tree)
    lv = tree.leaves()
    assert np.allclose(m.S0[lv], np.prod(1 + 0.02 * np.diff(tree.times)), rtol=0, atol=1e-15)


def test_binomial_recombines():
    m = P.build_market(MKT, tree_(2, lam=0.0))
    # up-down is node 4, down-up is node 5
    up = 1 + 0.05 * 0.5 + 0.3 * np.sqrt(0.5)
    dn = 1 + 0.05 * 0.5 - 0.3 * np.sqrt(0.5)
    assert abs(m.S1[4] - up * dn) <= 1e-15 and abs(m.S1[5] - dn * up) <= 1e-15


def test_wealth_trivial_cases():
    tree = tree_(3, lam=0.5)
    zero = np.zeros(tree.n_nodes)
    X = P.wealth_forward(None, 2.5, zero, zero, driver_library("zero", {"lam": 0.5}), tree)
    assert np.all(X == 2.5)
    m = P.build_market(MKT, tree)
    X = P.wealth_forward(m, 1.0, zero, zero, driver_library("linear", {"a": -0.02, "lam": 0.5}), tree)
    assert np.allclose(X, m.S0, rtol=1e-15, atol=0)


@settings(max_examples=20, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), lam=st.sampled_from([0.0, 0.5]), kind=st.sampled_from(["perfect", "two_rates"]))
def test_unconstrained_claim_is_replicated(seed, lam, kind):
    rng = np.random.default_rng(seed)
    tree = tree_(3, lam=lam)
    m = P.build_market(MKT, tree)
    f = m.driver(kind)
    ni = tree.n_inner
    at = np.full(tree.n_nodes, -100.0)
    at[ni:] = rng.normal(size=tree.n_nodes - ni)
    hi = np.full(tree.n_nodes, 100.0)
    hi[ni:] = at[ni:]
    pair = AdmissiblePair(LadlagProcess(at, at[:ni]), LadlagProcess(hi, hi[:ni]))
    sol = solve_direct(pair, f, tree)
    X = P.wealth_forward(m, sol.Y0, sol.Z, sol.k, f, tree)
    assert np.max(np.abs(X - sol.Y.at)) <= 1e-12


def test_basket_without_knockout_is_immediate():
    m = P.build_market(MKT, tree_(3, lam=0.5))
    pair = P.payoff_builders("basket", {"K": 0.9, "delta": 0.7, "H": 0.0}, m)
    res = P.price_game_option(pair, m, m.driver("perfect"))
    assert res.u0 == pair.xi.at[0] == pytest.approx(0.7 * 0.1, abs=1e-15)


def test_barrier_with_zero_level_is_plain_call():
    m = P.build_market(MKT, tree_(3, lam=0.5))
    pair = P.payoff_builders("barrier_call", {"K": 1.0, "L": 0.0, "delta": 0.05}, m)
    call = np.maximum(m.S1 - 1.0, 0.0)
    assert np.array_equal(pair.xi.at, call) and np.array_equal(pair.xi.right, call[: m.tree.n_inner])


def test_barrier_flags_depth_four():
    m = P.build_market({**MKT, "sigma": [0.4, 0.2]}, tree_(4, lam=0.5))
    # L equals the price after one down move, so some paths touch it and then finish above K
    L = float(m.S1[2])
    pair = P.payoff_builders("barrier_call", {"K": 0.95, "L": L, "delta": 0.05}, m)
    res = P.price_game_option(pair, m, m.driver("two_rates"))
    fx = regularity(pair.xi, m.tree)
    assert res.flags["xi_right_usc"] and res.flags["zeta_right_lsc"]
    assert fx.right_usc and not fx.right_continuous
    assert regularity(pair.zeta, m.tree).right_continuous
    # the knock-out makes zeta drop along the grid, so strict mode withholds the plans
    assert not res.flags["zeta_left_lsc"] and res.plan_star is None
    loose = P.price_game_option(pair, m, m.driver("two_rates"), strict=False)
    assert loose.u0 == res.u0
    assert loose.plan_star is not None and loose.plan_bar is not None


def test_huge_penalty_gives_american_price():
    tree = tree_(4, lam=0.5)
    m = P.build_market({"r": 0.0, "mu": [0.0, 0.0], "sigma": [0.3, 0.2], "beta": [0.0, 0.4]}, tree)
    pair = P.payoff_builders("barrier_call", {"K": 0.9, "L": 0.7, "delta": 1e6}, m)
    am = ref_operator(pair.xi, tree).X
    res = P.price_game_option(pair, m, m.driver("perfect"))
    assert abs(res.u0 - am.at[0]) <= 1e-12


@settings(max_examples=20, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), lam=st.sampled_from([0.0, 0.5, 1.0]), name=st.sampled_from(["basket", "barrier_call"]))
def test_perfect_market_matches_tilted_dynkin_game(seed, lam, name):
    rng = np.random.default_rng(seed)
    tree = tree_(2, lam=lam, T=0.5)
    m = P.build_market(MKT, tree)
    params = {"K": float(rng.uniform(0.8, 1.1)), "delta": float(rng.uniform(0.0, 0.3)),
              "H": float(rng.uniform(0.8, 1.1)), "L": 0.7}
    pair = P.payoff_builders(name, params, m)
    res = P.price_game_option(pair, m, m.driver("perfect"), strict=False)
    up, lo = P.perfect_market_oracle(pair, m)
    assert abs(res.u0 - up) <= 1e-10 and abs(res.u0 - lo) <= 1e-10


def test_borrowing_spread_raises_price():
    m = P.build_market(MKT, tree_(4, lam=0.5))
    pair = P.payoff_builders("barrier_call", {"K": 1.0, "L": 0.8, "delta": 0.05}, m)
    u_p = P.price_game_option(pair, m, m.driver("perfect")).u0
    u_t = P.price_game_option(pair, m, m.driver("two_rates")).u0
    assert u_t >= u_p - 1e-14
    fp, ft = m.driver("perfect"), m.driver("two_rates")
    assert compare(solve_direct(pair, ft, m.tree), solve_direct(pair, fp, m.tree), pair, pair, ft, fp, m.tree)


def test_price_increases_with_penalty():
    m = P.build_market(MKT, tree_(4, lam=0.5))
    us = [P.price_game_option(P.payoff_builders("barrier_call", {"K": 1.0, "L": 0.8, "delta": d}, m), m,
                              m.driver("two_rates")).u0 for d in (0.0, 0.01, 0.05, 0.2, 1.0)]
    assert all(b >= a - 1e-14 for a, b in zip(us, us[1:]))


@pytest.mark.parametrize("kind", ["perfect", "two_rates", "repo"])
def test_superhedge_at_price_and_not_below(kind):
    m = P.build_market({**MKT, "b": [0.01, 0.0], "l": [0.03, 0.02]}, tree_(4, lam=0.5))
    pair = P.payoff_builders("barrier_call", {"K": 1.0, "L": 0.8, "delta": 0.05}, m)
    f = m.driver(kind)
    res = P.price_game_option(pair, m, f, strict=False)
    for plan in (res.plan_star, res.plan_bar):
        assert P.superhedge_verify(plan, pair, m, f, m.tree).ok
        low = P.superhedge_verify(plan.shifted(-0.01), pair, m, f, m.tree)
        assert not low.ok and low.failing_nodes.size > 0


def test_four_branch_warns():
    tree = tree_(2, lam=0.5, scheme=FOUR)
    m = P.build_market(MKT, tree)
    pair = P.payoff_builders("basket", {"K": 1.0, "delta": 0.5, "H": 1.0}, m)
    with pytest.warns(P.FourBranchWarning):
        res = P.price_game_option(pair, m, m.driver("perfect"), strict=False)
    assert any("Four-branch" in n for n in res.notes)
    t3 = tree_(2, lam=0.5)
    m3 = P.build_market(MKT, t3)
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        P.price_game_option(P.payoff_builders("basket", {"K": 1.0, "delta": 0.5, "H": 1.0}, m3), m3,
                            m3.driver("perfect"), strict=False)


def test_forced_equal_barriers_replicate():
    m = P.build_market(MKT, tree_(3, lam=0.5))
    xi = LadlagProcess(np.maximum(m.S1 - 1.0, 0.0), np.maximum(m.S1 - 1.0, 0.0)[: m.tree.n_inner])
    pair = AdmissiblePair(xi, xi)
    f = m.driver("two_rates")
    res = P.price_game_option(pair, m, f, strict=False)
    # Y = xi = zeta everywhere, so the seller cancels at once and wealth equals the payoff there
    assert res.u0 == xi.at[0]
    assert np.array_equal(res.solution.Y.at, xi.at)
    for plan in (res.plan_star, res.plan_bar):
        rep = P.superhedge_verify(plan, pair, m, f, m.tree)
        assert rep.ok and plan.sigma.stop[0] and rep.wealth[0] == xi.at[0]


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), kind=st.sampled_from(["perfect", "two_rates", "repo"]))
def test_left_regular_instances_superhedge(seed, kind):
    rng = np.random.default_rng(seed)
    tree = tree_(int(rng.integers(1, 4)), lam=float(rng.choice([0.0, 0.5])))
    m = P.build_market({**MKT, "b": [0.01, 0.02], "l": [0.03, 0.0]}, tree)
    pair = random_pair(rng, tree, "left_regular")
    f = m.driver(kind)
    res = P.price_game_option(pair, m, f)
    for plan in (res.plan_star, res.plan_bar):
        assert P.superhedge_verify(plan, pair, m, f, tree).ok


@settings(max_examples=20, deadline=None)
@given(seed=st.integers(0, 2**32 - 1))
def test_price_is_stopping_time_game_value(seed):
    rng = np.random.default_rng(seed)
    tree = tree_(2, lam=0.5) if rng.random() < 0.5 else tree_(3, lam=0.0)
    assert tree.n_nodes <= NODE_CAP
    m = P.build_market(MKT, tree)
    pair = random_pair(rng, tree, "right_regular")
    f = m.driver("two_rates")
    g = game_values(pair, f, tree, keep_matrices=False)
    u0 = P.price_game_option(pair, m, f).u0
    assert abs(g.upper0 - u0) <= 1e-10 and abs(g.lower0 - u0) <= 1e-10
