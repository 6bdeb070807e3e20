import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from irrdrbsde.bsde import (
    ConvergenceError,
    Driver,
    DriverError,
    backward,
    bsde_solve,
    bsde_step,
    check_step,
    driver_library,
    f_expectation,
    first_stop_level,
    implicit_solve,
    probe_driver,
    stability_constant,
)
from irrdrbsde.tree import TimeGrid, build_tree

from oracles import bsde_values, f_step


def test_zero_driver_is_conditional_expectation():
    tree = build_tree(TimeGrid.uniform(1.0, 3), lam=0.5)
    term = np.arange(tree.n_nodes - tree.n_inner, dtype=float)
    sol = bsde_solve(tree, term, driver_library("zero"))
    assert sol.X.at[0] == pytest.approx(tree.path_probabilities()[tree.leaves()] @ term, rel=1e-14)


def test_linear_closed_form_one_step():
    tree = build_tree(TimeGrid([0.0, 0.5]))
    f = driver_library("linear", {"a": 0.4, "c": 1.0})
    sol = bsde_solve(tree, [2.0, 4.0], f)
    # y = 3 + (0.4 y + 1) 0.5  ->  y = 3.5 / 0.8
    assert sol.X.at[0] == pytest.approx(3.5 / 0.8, rel=1e-13)
    # the up branch (dW > 0) is listed first
    assert sol.Z[0] == pytest.approx(-1.0 / math.sqrt(0.5), rel=1e-13)


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 10_000), name=st.sampled_from(["linear", "two_rates", "repo"]))
def test_bsde_matches_scalar_oracle(seed, name):
    rng = np.random.default_rng(seed)
    lam = float(rng.choice([0.0, 0.7]))
    tree = build_tree(TimeGrid.uniform(1.0, 3), lam=lam)
    params = {"lam": lam}
    if name == "linear":
        params.update(a=rng.uniform(-1, 1), bz=rng.uniform(-1, 1), bk=rng.uniform(-0.5, 0.5) * lam, c=0.2)
    else:
        params.update(r=0.03, R=0.09, mu=[0.08, 0.05], sigma=[0.3, 0.2], beta=[0.1, 0.4], b=[0.02, 0.01],
                      l=[0.04, 0.03])
    f = driver_library(name, params)
    term = rng.normal(size=tree.n_nodes - tree.n_inner)
    sol = bsde_solve(tree, term, f)
    ref = bsde_values(tree, f, term)
    assert np.max(np.abs(sol.X.at - ref)) <= 1e-11


def test_step_matches_oracle():
    tree = build_tree(TimeGrid.uniform(1.0, 2), lam=0.5)
    f = driver_library("linear", {"a": -0.3, "bz": 0.5, "bk": 0.1, "lam": 0.5})
    y, z, k, h = bsde_step(tree, 1, [1.0, -1.0, 3.0], f)
    y2, z2, k2 = f_step(tree, f, 1, np.array([1.0, -1.0, 3.0]))
    assert y == pytest.approx(y2, abs=1e-12) and z == pytest.approx(z2, abs=1e-12) and k == pytest.approx(k2, abs=1e-12)
    assert np.max(np.abs(h)) < 1e-12
    with pytest.raises(ValueError):
        bsde_step(tree, 1, [1.0, 2.0], f)


def test_batched_backward_equals_loop():
    tree = build_tree(TimeGrid.uniform(1.0, 2), lam=0.5)
    f = driver_library("two_rates", {"r": 0.01, "R": 0.2, "lam": 0.5})
    rng = np.random.default_rng(0)
    V = rng.normal(size=(5, tree.n_nodes))
    stop = rng.random((5, tree.n_nodes)) < 0.3
    stop[:, tree.n_inner:] = True
    Vb, _, _, _ = backward(tree, f, V, stop)
    for i in range(5):
        Vi, _, _, _ = backward(tree, f, V[i], stop[i])
        assert np.max(np.abs(Vb[i] - Vi)) <= 1e-14


def test_driver_library_and_errors():
    with pytest.raises(DriverError):
        driver_library("nope")
    with pytest.raises(DriverError):
        driver_library("two_rates", {"r": 0.1, "R": 0.05})
    with pytest.raises(DriverError):
        driver_library("perfect", {"sigma": [0.2, 0.4], "beta": [0.1, 0.2]})  # singular
    with pytest.raises(DriverError):
        driver_library("perfect", {"beta": [-1.0, 0.1]})
    lin = driver_library("linear", {"bk": -2.0, "lam": 1.0})
    assert not lin.has_royer  # gamma = -2 < -1
    assert driver_library("linear", {"bk": 0.5, "lam": 1.0}).has_royer


def test_custom_driver_probe_rejects_wrong_bound():
    with pytest.raises(DriverError):
        Driver.custom(lambda t, y, z, k, node: 3.0 * y, K=1.0, lam=0.0)
    d = Driver.custom(lambda t, y, z, k, node: np.sin(y) + 0.5 * z, K=1.0, lam=0.0)
    probe_driver(d)
    with pytest.raises(DriverError):
        Driver.custom(lambda t, y, z, k, node: -3.0 * k, K=3.0, lam=1.0,
                      royer_gamma=lambda t, y, z, k1, k2, node: np.zeros(np.shape(k1)))


def test_process_driver():
    tree = build_tree(TimeGrid.uniform(1.0, 2))
    vals = np.arange(tree.n_nodes, dtype=float)
    f = Driver.process(vals)
    assert f.is_process and f.K == 0.0
    np.testing.assert_array_equal(f(0.0, np.zeros(2), np.zeros(2), np.zeros(2), np.array([1, 2])), [1.0, 2.0])


def test_step_guard_and_convergence():
    tree = build_tree(TimeGrid([0.0, 2.0]))
    with pytest.raises(DriverError):
        check_step(tree, driver_library("linear", {"a": 0.6}))
    bad = Driver(func=lambda t, y, z, k, node: 0.99 * np.cos(50 * y), K=0.99 * 50)
    with pytest.raises(ConvergenceError):
        implicit_solve(bad, 0.0, np.array([0.3]), np.zeros(1), np.zeros(1), np.zeros(1, int), 1.0, max_iter=5)


def test_stability_constant():
    assert stability_constant(0.0, 1.0) == pytest.approx(math.e)
    assert stability_constant(1.0, 0.5) == pytest.approx(math.exp(2.0))


def test_f_expectation_between_stopping_times():
    tree = build_tree(TimeGrid.uniform(1.0, 2))
    f = driver_library("linear", {"a": -0.2})
    theta = tree.level == 1
    tau = tree.level == 2
    pay = np.linspace(0, 1, tree.n_nodes)
    out = f_expectation(tree, theta, tau, pay, f)
    assert np.isnan(out[0]) and np.all(np.isnan(out[3:]))
    for u in (1, 2):
        assert out[u] == pytest.approx(f_step(tree, f, u, pay[tree.children(u)])[0], abs=1e-12)
    with pytest.raises(ValueError):
        f_expectation(tree, tau, theta, pay, f)
    fl = first_stop_level(tree, theta)
    assert fl[0] == tree.depth + 1 and np.all(fl[1:] == 1)
