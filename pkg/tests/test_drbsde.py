import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from irrdrbsde.bsde import ConvergenceError, Driver, driver_library, stability_constant
from irrdrbsde.drbsde import (
    DRBSDESolution,
    PreconditionError,
    apriori_check,
    apriori_parameters,
    compare,
    picard_iterate,
    solve_direct,
    solve_fixed_point,
    solve_picard_driver_process,
    verify_solution,
)
from irrdrbsde.generators import ordered_pair, random_instance, random_pair
from irrdrbsde.process import AdmissiblePair, LadlagProcess
from irrdrbsde.tree import TimeGrid, build_tree

from oracles import f_game, linear_game

ZERO = driver_library("zero")


def test_gap_fixture(gap):
    tree, pair = gap
    sol = solve_direct(pair, ZERO, tree)
    assert sol.Y0 == 1.0
    assert sol.Y.right[0] == 1.0
    np.testing.assert_array_equal(sol.A_inc[1:], [1.0, 1.0])
    assert sol.C_jump[0] == 0.0 and sol.Cp_jump[0] == 0.0
    assert verify_solution(sol, pair, ZERO, tree).ok()


def test_crossing_fixture(crossing):
    tree, pair = crossing
    sol = solve_direct(pair, ZERO, tree)
    assert sol.Y.right[0] == 5.0
    assert sol.Y0 == 1.0
    assert sol.Cp_jump[0] == 4.0
    assert verify_solution(sol, pair, ZERO, tree).ok()


@settings(max_examples=60, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), kind=st.sampled_from(["irregular", "right_regular", "left_regular"]))
def test_three_solvers_agree(seed, kind):
    rng = np.random.default_rng(seed)
    inst = random_instance(rng, kind, max_depth=4)
    f = inst.driver
    d = solve_direct(inst.pair, f, inst.tree)
    assert verify_solution(d, inst.pair, f, inst.tree).ok(1e-10)
    fp = solve_fixed_point(inst.pair, f, inst.tree, init=str(rng.choice(["zero", "terminal"])))
    assert fp.Y.max_abs_diff(d.Y) <= 1e-9
    if f.is_process:
        pc = solve_picard_driver_process(inst.pair, f, inst.tree)
        assert pc.Y.max_abs_diff(d.Y) <= 1e-9
        assert verify_solution(pc, inst.pair, f, inst.tree).ok(1e-10)


def test_picard_iterates_nondecreasing():
    rng = np.random.default_rng(8)
    tree = build_tree(TimeGrid.uniform(1.0, 4), lam=0.5)
    pair = random_pair(rng, tree, "irregular")
    tr = picard_iterate(pair.xi.terminal_zeroed(tree), pair.zeta.terminal_zeroed(tree), tree, record=True)
    for (X0, Xp0), (X1, Xp1) in zip(tr.history, tr.history[1:]):
        assert X0.le(X1, 1e-13) and Xp0.le(Xp1, 1e-13)
    with pytest.raises(ConvergenceError):
        picard_iterate(pair.xi.terminal_zeroed(tree), pair.zeta.terminal_zeroed(tree), tree, max_iter=1)


def test_fixed_point_reports_iterations_and_rejects_init():
    rng = np.random.default_rng(2)
    inst = random_instance(rng, "irregular", max_depth=3, driver_kind="linear")
    sol = solve_fixed_point(inst.pair, inst.driver, inst.tree)
    assert sol.info["outer_iterations"] >= 1
    with pytest.raises(ValueError):
        solve_fixed_point(inst.pair, inst.driver, inst.tree, init="ones")


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 2**32 - 1))
def test_right_continuous_means_no_right_jumps(seed):
    rng = np.random.default_rng(seed)
    inst = random_instance(rng, "right_continuous", max_depth=4)
    sol = solve_direct(inst.pair, inst.driver, inst.tree)
    assert np.all(sol.C_jump == 0.0) and np.all(sol.Cp_jump == 0.0)


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 2**32 - 1))
def test_zero_driver_value_is_linear_system_game(seed):
    """Brute force with explicit path sums; instants beat intervals on ties."""
    rng = np.random.default_rng(seed)
    lam = float(rng.choice([0.0, 0.5]))
    tree = build_tree(TimeGrid.uniform(1.0, 2), lam=lam)
    n, ni = tree.n_nodes, tree.n_inner
    xa = np.round(rng.normal(size=n) * 4) / 4
    za = xa + np.round(rng.uniform(0, 1.5, n) * 4) / 4
    za[ni:] = xa[ni:]
    xr = xa[:ni] + np.round(rng.normal(size=ni) * 4) / 4  # may exceed zeta.at
    zr = np.maximum(za[:ni] + np.round(rng.normal(size=ni) * 4) / 4, xr)
    pair = AdmissiblePair(LadlagProcess(xa, xr), LadlagProcess(za, zr))
    up, lo = linear_game(pair, tree, systems=True, rule="instant_first")
    y0 = solve_direct(pair, ZERO, tree).Y0
    assert abs(up - y0) <= 1e-12 and abs(lo - y0) <= 1e-12


@settings(max_examples=10, deadline=None)
@given(seed=st.integers(0, 2**32 - 1))
def test_nonlinear_value_is_f_game(seed):
    rng = np.random.default_rng(seed)
    tree = build_tree(TimeGrid.uniform(1.0, 2))
    pair = random_pair(rng, tree, "irregular")
    f = driver_library("linear", {"a": -0.4, "bz": 0.3, "c": 0.2})
    up, lo = f_game(pair, tree, f, systems=True)
    y0 = solve_direct(pair, f, tree).Y0
    assert abs(up - y0) <= 1e-10 and abs(lo - y0) <= 1e-10


def test_verify_detects_corruption():
    rng = np.random.default_rng(5)
    inst = random_instance(rng, "irregular", min_depth=2, max_depth=3, driver_kind="linear")
    f = inst.driver
    sol = solve_direct(inst.pair, f, inst.tree)
    at = sol.Y.at.copy()
    at[0] += 1e-3
    bad = DRBSDESolution(LadlagProcess(at, sol.Y.right), sol.Z, sol.k, sol.h_inc, sol.A_inc, sol.Ap_inc,
                         sol.C_jump, sol.Cp_jump, sol.y_cont)
    fails = verify_solution(bad, inst.pair, f, inst.tree).failures()
    assert "dynamics" in fails and "clamp" in fails


@settings(max_examples=50, deadline=None)
@given(seed=st.integers(0, 2**32 - 1))
def test_comparison(seed):
    rng = np.random.default_rng(seed)
    inst = random_instance(rng, "irregular", max_depth=4, driver_kind="linear")
    tree = inst.tree
    p = dict(inst.driver_spec["params"], lam=tree.lam)
    f1 = driver_library("linear", p)
    f2 = driver_library("linear", dict(p, c=p["c"] - float(rng.uniform(0, 0.5))))
    pair2 = ordered_pair(rng, tree, inst.pair)
    s1, s2 = solve_direct(inst.pair, f1, tree), solve_direct(pair2, f2, tree)
    assert compare(s1, s2, inst.pair, pair2, f1, f2, tree)


def test_comparison_preconditions():
    rng = np.random.default_rng(0)
    tree = build_tree(TimeGrid.uniform(1.0, 2), lam=1.0)
    pair = random_pair(rng, tree, "irregular")
    low = ordered_pair(rng, tree, pair)
    f = driver_library("linear", {"lam": 1.0})
    s, sl = solve_direct(pair, f, tree), solve_direct(low, f, tree)
    with pytest.raises(PreconditionError):
        compare(sl, s, low, pair, f, f, tree)
    no_cert = driver_library("linear", {"bk": -1.5, "lam": 1.0})
    with pytest.raises(PreconditionError):
        compare(s, sl, pair, low, no_cert, no_cert, tree)
    up = driver_library("linear", {"c": 1.0, "lam": 1.0})
    with pytest.raises(PreconditionError):
        compare(s, sl, pair, low, f, up, tree)


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 2**32 - 1))
def test_apriori_estimate(seed):
    rng = np.random.default_rng(seed)
    tree = build_tree(TimeGrid.uniform(0.2, 4), lam=1.0)
    p1 = random_pair(rng, tree, "irregular")
    p2 = random_pair(rng, tree, "irregular")
    f1 = driver_library("linear", {"a": 0.5, "bz": -0.3, "bk": 0.2, "c": 0.1, "lam": 1.0})
    f2 = driver_library("two_rates", {"r": 0.02, "R": 0.3, "lam": 1.0})
    C = max(f1.K, f2.K, f1.royer_bound, f2.royer_bound, 1.0)
    beta, eta = apriori_parameters(C)
    s1, s2 = solve_direct(p1, f1, tree), solve_direct(p2, f2, tree)
    rep = apriori_check(s1, s2, p1, p2, f1, f2, tree, beta, eta, C)
    assert rep.ok, rep.worst_ratio


def test_apriori_parameter_guard():
    rng = np.random.default_rng(0)
    tree = build_tree(TimeGrid.uniform(0.2, 2), lam=1.0)
    p = random_pair(rng, tree, "irregular")
    s = solve_direct(p, ZERO, tree)
    with pytest.raises(PreconditionError):
        apriori_check(s, s, p, p, ZERO, ZERO, tree, beta=1.0, eta=1.0, C=1.0)
    with pytest.raises(PreconditionError):
        apriori_check(s, s, p, p, ZERO, ZERO, tree, beta=100.0, eta=2.0, C=1.0)
    assert apriori_parameters(2.0) == (3.0 * 4.0 + 4.0, 0.25)


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 2**32 - 1))
def test_driver_process_perturbation_is_linear(seed):
    """|Y - Y'| <= T sup|g - g'| for driver processes g, g'."""
    rng = np.random.default_rng(seed)
    inst = random_instance(rng, "irregular", max_depth=4, driver_kind="process")
    tree = inst.tree
    g = np.asarray(inst.driver_spec["process"])
    for scale in (1.0, 0.5, 0.25):
        dg = rng.normal(size=g.size) * scale
        pad = np.zeros(tree.n_nodes - tree.n_inner)
        y1 = solve_direct(inst.pair, Driver.process(np.concatenate([g, pad])), tree).Y
        y2 = solve_direct(inst.pair, Driver.process(np.concatenate([g + dg, pad])), tree).Y
        assert y1.max_abs_diff(y2) <= tree.horizon * np.max(np.abs(dg)) + 1e-12
    assert stability_constant(0.0, tree.horizon) >= 1.0
