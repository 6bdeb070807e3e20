"""Reflected BSDE with driver 0 (the Ref operator) and the Mertens decomposition."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import kernels
from .process import LadlagProcess, ProcessError, is_strong_supermartingale
from .tree import ScenarioTree


@dataclass(frozen=True, eq=False)
class RefSolution:
    """Smallest strong supermartingale X above an obstacle.

    ``A_inc`` is charged on the child that closes the interval (zero at the
    root); ``C_jump`` sits on the instant of the right jump.
    """

    X: LadlagProcess
    A_inc: np.ndarray
    C_jump: np.ndarray
    Z: np.ndarray
    k: np.ndarray
    h_inc: np.ndarray


def _martingale_parts(tree: ScenarioTree, at: np.ndarray):
    Z = np.zeros(tree.n_inner)
    K = np.zeros(tree.n_inner)
    H = np.zeros(tree.n_nodes)
    for l in range(tree.depth):
        s = tree.level_slice(l)
        cs = slice(tree.level_start[l + 1], tree.level_start[l + 2])
        Z[s], K[s], H[cs] = tree.decompose_level(at, l)
    return Z, K, H


def ref_raw(lo_at: np.ndarray, lo_right: np.ndarray, tree: ScenarioTree):
    return kernels.ref_backward(
        np.ascontiguousarray(lo_at, dtype=float),
        np.ascontiguousarray(lo_right, dtype=float),
        np.ascontiguousarray(tree.prob),
        np.ascontiguousarray(tree.level_start, dtype=np.int64),
        int(tree.b),
    )


def ref_operator(xi: LadlagProcess, tree: ScenarioTree) -> RefSolution:
    xi.check(tree)
    x_at, x_right, a_inc, c_jump = ref_raw(xi.at, xi.right, tree)
    Z, K, H = _martingale_parts(tree, x_at)
    return RefSolution(LadlagProcess(x_at, x_right), a_inc, c_jump, Z, K, H)


def mertens_decompose(X: LadlagProcess, tree: ScenarioTree, tol: float = 1e-12):
    """Split a strong supermartingale into (martingale part, A_inc, C_jump).

    The martingale part is returned as its (Z, k, h_inc) increments.
    """
    if not is_strong_supermartingale(X, tree, tol):
        raise ProcessError("input is not a strong supermartingale")
    c_jump = X.at[: tree.n_inner] - X.right
    a_inc = np.zeros(tree.n_nodes)
    for l in range(tree.depth):
        s = tree.level_slice(l)
        cs = slice(tree.level_start[l + 1], tree.level_start[l + 2])
        a_inc[cs] = np.repeat(X.right[s] - tree.expect_children(X.at, l), tree.b)
    return _martingale_parts(tree, X.at), np.maximum(a_inc, 0.0), np.maximum(c_jump, 0.0)


def reconstruct(tree: ScenarioTree, terminal: np.ndarray, a_inc: np.ndarray, c_jump: np.ndarray) -> np.ndarray:
    """E[X_T + future A increments + future C jumps | node], per node (at slot)."""
    v = np.zeros(tree.n_nodes)
    v[tree.n_inner :] = terminal
    for l in range(tree.depth - 1, -1, -1):
        s = tree.level_slice(l)
        v[s] = tree.expect_children(v + a_inc, l) + c_jump[s]
    return v


def ref_monotone_check(xi1: LadlagProcess, xi2: LadlagProcess, tree: ScenarioTree, tol: float = 1e-12) -> bool:
    """Ref is nondecreasing: with xi1 <= xi2, Ref(xi1) <= Ref(xi2)."""
    if not xi1.le(xi2):
        raise ProcessError("obstacles are not ordered")
    return ref_operator(xi1, tree).X.le(ref_operator(xi2, tree).X, tol)


def ref_monotone_limit_check(seq, limit: LadlagProcess, tree: ScenarioTree, tol: float = 1e-10) -> bool:
    """Ref commutes with nondecreasing limits.

    ``seq`` is a finite nondecreasing run xi^1 <= xi^2 <= ... approaching
    ``limit``. Checks that Ref(xi^n) is nondecreasing and that its last
    element is within ``tol`` of Ref(limit).
    """
    seq = list(seq)
    for a, b in zip(seq, seq[1:]):
        if not a.le(b):
            raise ProcessError("sequence is not nondecreasing")
    refs = [ref_operator(x, tree).X for x in seq]
    mono = all(a.le(b, 1e-12) for a, b in zip(refs, refs[1:]))
    return mono and refs[-1].max_abs_diff(ref_operator(limit, tree).X) <= tol


__all__ = [
    "RefSolution",
    "mertens_decompose",
    "reconstruct",
    "ref_monotone_check",
    "ref_monotone_limit_check",
    "ref_operator",
]
