import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from irrdrbsde.generators import random_pair
from irrdrbsde.process import (
    AdmissiblePair,
    LadlagProcess,
    ProcessError,
    is_strong_supermartingale,
    left_limit,
    mokobodzki_construct,
    regularity,
    right_envelope,
)
from irrdrbsde.rbsde import ref_operator
from irrdrbsde.tree import TimeGrid, build_tree

from oracles import path_prob, strategies


def _tree(depth=2, lam=0.0):
    return build_tree(TimeGrid.uniform(1.0, depth), lam=lam)


def test_shape_checks():
    with pytest.raises(ProcessError):
        LadlagProcess([1.0, 2.0], [1.0, 2.0])
    tree = _tree(1)
    with pytest.raises(ProcessError):
        LadlagProcess([1.0, 2.0, 3.0, 4.0], [0.0]).check(tree)


def test_envelopes_and_flags():
    tree = _tree(1)
    phi = LadlagProcess([1.0, 3.0, 0.5], [2.0])
    assert left_limit(phi, 1, tree) == 2.0
    assert right_envelope(phi, 0, tree) == 2.0
    with pytest.raises(ProcessError):
        left_limit(phi, 0, tree)
    with pytest.raises(ProcessError):
        right_envelope(phi, 2, tree)
    fl = regularity(phi, tree)
    assert not fl.right_usc and fl.right_lsc and not fl.right_continuous
    # child 1 sits above the left limit 2, child 2 below it
    assert not fl.left_usc_along_st and not fl.left_lsc_along_st


def test_right_envelope_identity_on_right_continuous():
    tree = _tree(2, 0.5)
    v = np.linspace(-1, 1, tree.n_nodes)
    phi = LadlagProcess.from_adapted(tree, v)
    for u in range(tree.n_inner):
        assert right_envelope(phi, u, tree) == phi.at[u]
    assert regularity(phi, tree).right_continuous


def test_admissible_pair_rules():
    tree = _tree(1)
    xi = LadlagProcess([0.0, 1.0, 1.0], [0.0])
    with pytest.raises(ProcessError):
        AdmissiblePair(xi, LadlagProcess([1.0, 1.0, 2.0], [1.0])).check(tree)  # terminal mismatch
    with pytest.raises(ProcessError):
        AdmissiblePair(xi, LadlagProcess([1.0, 1.0, 1.0], [-1.0])).check(tree)  # right slot crosses
    AdmissiblePair(xi, LadlagProcess([1.0, 1.0, 1.0], [0.0])).check(tree)


def test_algebra():
    a = LadlagProcess([1.0, 2.0, 3.0], [4.0])
    b = LadlagProcess([0.5, 0.5, 0.5], [0.5])
    assert (a - b).max_abs_diff(LadlagProcess([0.5, 1.5, 2.5], [3.5])) == 0.0
    assert (2 * a).right[0] == 8.0
    assert (-a).at[2] == -3.0
    assert b.le(a) and not a.le(b)


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 10_000), lam=st.sampled_from([0.0, 0.6]))
def test_strong_supermartingale_exhaustive(seed, lam):
    """E[phi_sigma] <= E[phi_theta] for all enumerated stopping times theta <= sigma."""
    rng = np.random.default_rng(seed)
    depth = 3 if lam == 0.0 else 2
    tree = _tree(depth, lam)
    pair = random_pair(rng, tree, "irregular")
    X = ref_operator(pair.xi, tree).X  # a strong supermartingale by construction
    assert is_strong_supermartingale(X, tree)
    pp = path_prob(tree)
    S = strategies(tree)

    def level_at(s):
        out = {}
        for leaf in tree.leaves():
            out[int(leaf)] = next(tree.level[u] for u in tree.path(int(leaf)) if u in s)
        return out

    lv = [level_at(s) for s in S]
    ev = [sum(pp[u] * X.at[u] for u in s) for s in S]
    for i in range(len(S)):
        for j in range(len(S)):
            if all(lv[i][leaf] <= lv[j][leaf] for leaf in lv[i]):
                assert ev[j] <= ev[i] + 1e-12


def test_not_supermartingale_detected():
    tree = _tree(1)
    assert not is_strong_supermartingale(LadlagProcess([0.0, 1.0, 1.0], [0.0]), tree)
    assert not is_strong_supermartingale(LadlagProcess([0.0, 0.0, 0.0], [1.0]), tree)


@settings(max_examples=50, deadline=None)
@given(seed=st.integers(0, 10_000), kind=st.sampled_from(["irregular", "right_regular", "left_regular"]))
def test_mokobodzki_bracket(seed, kind):
    rng = np.random.default_rng(seed)
    tree = build_tree(TimeGrid.uniform(1.0, int(rng.integers(1, 4))), lam=float(rng.choice([0.0, 0.5])))
    pair = random_pair(rng, tree, kind)
    sp = mokobodzki_construct(pair, tree)
    assert sp.verify(pair, tree, tol=1e-12)
    d = sp.H - sp.Hp
    assert pair.xi.le(d, 1e-12) and d.le(pair.zeta, 1e-12)
