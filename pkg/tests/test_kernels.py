import os
import subprocess
import sys

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from irrdrbsde import _fallback, kernels
from irrdrbsde.generators import random_pair, random_tree

compiled = pytest.importorskip("irrdrbsde._kernels")


def _args(tree):
    return np.ascontiguousarray(tree.prob), np.ascontiguousarray(tree.level_start, dtype=np.int64), int(tree.b)


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 2**32 - 1))
def test_ref_backward_parity(seed):
    rng = np.random.default_rng(seed)
    tree = random_tree(rng, max_depth=5)
    pair = random_pair(rng, tree, "irregular")
    a = _fallback.ref_backward(pair.xi.at, pair.xi.right, *_args(tree))
    b = compiled.ref_backward(pair.xi.at, pair.xi.right, *_args(tree))
    for u, v in zip(a, b):
        assert np.max(np.abs(u - v)) <= 1e-14


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 2**32 - 1))
def test_picard_parity(seed):
    rng = np.random.default_rng(seed)
    tree = random_tree(rng, max_depth=4)
    pair = random_pair(rng, tree, "irregular")
    ni = tree.n_inner
    # the kernels take the barrier residuals relative to the terminal value
    xt = (pair.xi.at.copy(), pair.xi.right.copy())
    zt = (pair.zeta.at.copy(), pair.zeta.right.copy())
    xt[0][ni:] = zt[0][ni:] = 0.0
    A = _fallback.picard(*xt, *zt, *_args(tree), 1e-13, 10000)
    B = compiled.picard(*xt, *zt, *_args(tree), 1e-13, 10000)
    assert A[2] == B[2]
    for u, v in zip(A[0] + A[1], B[0] + B[1]):
        assert np.max(np.abs(u - v)) <= 1e-12


def test_default_backend_is_compiled():
    assert kernels.BACKEND == "cython"


def test_pure_switch_selects_fallback():
    env = {**os.environ, "IRRDRBSDE_PURE": "1"}
    r = subprocess.run([sys.executable, "-c", "import irrdrbsde; print(irrdrbsde.BACKEND)"],
                       capture_output=True, text=True, env=env)
    assert r.stdout.strip() == "python"
