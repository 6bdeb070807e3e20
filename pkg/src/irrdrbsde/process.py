"""Ladlag step processes on a scenario tree.

A process is encoded by its value ``at`` each node and, on non-terminal
nodes, its constant value ``right`` on the open interval that follows.
Every left or right envelope of such a process is exact.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .tree import ScenarioTree, TreeError


class ProcessError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class LadlagProcess:
    at: np.ndarray
    right: np.ndarray

    def __post_init__(self):
        at = np.array(self.at, dtype=float)
        right = np.array(self.right, dtype=float)
        if at.ndim != 1 or right.ndim != 1 or right.size >= at.size:
            raise ProcessError("need one `at` value per node and one `right` value per inner node")
        at.setflags(write=False)
        right.setflags(write=False)
        object.__setattr__(self, "at", at)
        object.__setattr__(self, "right", right)

    @classmethod
    def constant(cls, tree: ScenarioTree, c: float) -> "LadlagProcess":
        return cls(np.full(tree.n_nodes, float(c)), np.full(tree.n_inner, float(c)))

    @classmethod
    def from_adapted(cls, tree: ScenarioTree, values) -> "LadlagProcess":
        """Right-continuous encoding: the interval value repeats the node value."""
        v = np.asarray(values, dtype=float)
        if v.shape != (tree.n_nodes,):
            raise ProcessError("adapted process needs one value per node")
        return cls(v, v[: tree.n_inner])

    def check(self, tree: ScenarioTree) -> "LadlagProcess":
        if self.at.size != tree.n_nodes or self.right.size != tree.n_inner:
            raise ProcessError("process does not match the tree")
        return self

    def restrict(self, sub: ScenarioTree, base: ScenarioTree | None = None) -> "LadlagProcess":
        """Values on a subtree; ``origin`` of the subtree indexes this process."""
        idx = sub.origin
        return LadlagProcess(self.at[idx], self.right[idx[: sub.n_inner]])

    def terminal_zeroed(self, tree: ScenarioTree) -> "LadlagProcess":
        at = self.at.copy()
        at[tree.n_inner :] = 0.0
        return LadlagProcess(at, self.right)

    def __add__(self, other):
        if isinstance(other, LadlagProcess):
            return LadlagProcess(self.at + other.at, self.right + other.right)
        return LadlagProcess(self.at + other, self.right + other)

    __radd__ = __add__

    def __sub__(self, other):
        if isinstance(other, LadlagProcess):
            return LadlagProcess(self.at - other.at, self.right - other.right)
        return LadlagProcess(self.at - other, self.right - other)

    def __neg__(self):
        return LadlagProcess(-self.at, -self.right)

    def __mul__(self, c: float):
        return LadlagProcess(self.at * c, self.right * c)

    __rmul__ = __mul__

    def max_abs_diff(self, other: "LadlagProcess") -> float:
        return float(max(np.max(np.abs(self.at - other.at), initial=0.0),
                         np.max(np.abs(self.right - other.right), initial=0.0)))

    def le(self, other: "LadlagProcess", tol: float = 0.0) -> bool:
        return bool(np.all(self.at <= other.at + tol) and np.all(self.right <= other.right + tol))

    def to_dict(self) -> dict:
        return {"at": self.at.tolist(), "right": self.right.tolist()}


def left_limit(phi: LadlagProcess, node: int, tree: ScenarioTree) -> float:
    """Value on the interval just before ``node`` (the parent's right value)."""
    if node == tree.root:
        raise ProcessError("the root has no left limit")
    tree._check_node(node)
    return float(phi.right[tree.parent[node]])


def right_envelope(phi: LadlagProcess, node: int, tree: ScenarioTree) -> float:
    """Value on the interval just after ``node``."""
    tree._check_node(node)
    if tree.is_terminal(node):
        raise ProcessError("terminal nodes have no right envelope")
    return float(phi.right[node])


@dataclass(frozen=True)
class RegularityFlags:
    right_usc: bool
    right_lsc: bool
    right_continuous: bool
    left_usc_along_st: bool
    left_lsc_along_st: bool


def regularity(phi: LadlagProcess, tree: ScenarioTree | None = None, tol: float = 0.0) -> RegularityFlags:
    ni = phi.right.size
    a = phi.at[:ni]
    r = phi.right
    if tree is not None:
        phi.check(tree)
        left = phi.right[tree.parent[1:]]
        at_nr = phi.at[1:]
        lusc = bool(np.all(at_nr >= left - tol))
        llsc = bool(np.all(at_nr <= left + tol))
    else:
        lusc = llsc = True
    return RegularityFlags(
        right_usc=bool(np.all(a >= r - tol)),
        right_lsc=bool(np.all(a <= r + tol)),
        right_continuous=bool(np.all(np.abs(a - r) <= tol)),
        left_usc_along_st=lusc,
        left_lsc_along_st=llsc,
    )


def is_strong_supermartingale(phi: LadlagProcess, tree: ScenarioTree, tol: float = 1e-12) -> bool:
    phi.check(tree)
    if np.any(phi.at[: tree.n_inner] < phi.right - tol):
        return False
    for l in range(tree.depth):
        s = tree.level_slice(l)
        if np.any(phi.right[s] < tree.expect_children(phi.at, l) - tol):
            return False
    return True


@dataclass(frozen=True)
class AdmissiblePair:
    xi: LadlagProcess
    zeta: LadlagProcess

    def check(self, tree: ScenarioTree, tol: float = 0.0) -> "AdmissiblePair":
        self.xi.check(tree)
        self.zeta.check(tree)
        if not self.xi.le(self.zeta, tol):
            raise ProcessError("barriers not ordered: need xi <= zeta on both slots")
        ti = tree.n_inner
        if np.any(np.abs(self.xi.at[ti:] - self.zeta.at[ti:]) > tol):
            raise ProcessError("barriers must agree at terminal nodes")
        return self

    def restrict(self, sub: ScenarioTree) -> "AdmissiblePair":
        return AdmissiblePair(self.xi.restrict(sub), self.zeta.restrict(sub))


@dataclass(frozen=True)
class SupermartingalePair:
    H: LadlagProcess
    Hp: LadlagProcess

    def verify(self, pair: AdmissiblePair, tree: ScenarioTree, tol: float = 1e-12) -> bool:
        d = self.H - self.Hp
        return (
            bool(np.all(self.H.at >= -tol) and np.all(self.H.right >= -tol))
            and bool(np.all(self.Hp.at >= -tol) and np.all(self.Hp.right >= -tol))
            and is_strong_supermartingale(self.H, tree, tol)
            and is_strong_supermartingale(self.Hp, tree, tol)
            and pair.xi.le(d, tol)
            and d.le(pair.zeta, tol)
        )


def _expected_sum(tree: ScenarioTree, terminal: np.ndarray, jump_at: np.ndarray, drift: np.ndarray):
    """H.right = E[H.at(children)] + drift, H.at = H.right + jump_at, from the leaves up."""
    at = np.zeros(tree.n_nodes)
    right = np.zeros(tree.n_inner)
    at[tree.n_inner :] = terminal
    for l in range(tree.depth - 1, -1, -1):
        s = tree.level_slice(l)
        right[s] = tree.expect_children(at, l) + drift[s]
        at[s] = right[s] + jump_at[s]
    return LadlagProcess(at, right)


def mokobodzki_construct(pair: AdmissiblePair, tree: ScenarioTree) -> SupermartingalePair:
    """Two nonnegative strong supermartingales whose difference is ``pair.xi``.

    The predictable drift and the right jumps of xi are split into positive
    and negative parts and each part is accumulated forward under E[.|F].
    """
    pair.check(tree)
    xi = pair.xi
    ti = tree.n_inner
    gamma = xi.at[:ti] - xi.right
    alpha = np.empty(ti)
    for l in range(tree.depth):
        s = tree.level_slice(l)
        alpha[s] = xi.right[s] - tree.expect_children(xi.at, l)
    xT = xi.at[ti:]
    H = _expected_sum(tree, np.maximum(xT, 0.0), np.maximum(gamma, 0.0), np.maximum(alpha, 0.0))
    Hp = _expected_sum(tree, np.maximum(-xT, 0.0), np.maximum(-gamma, 0.0), np.maximum(-alpha, 0.0))
    return SupermartingalePair(H, Hp)


__all__ = [
    "AdmissiblePair",
    "LadlagProcess",
    "ProcessError",
    "RegularityFlags",
    "SupermartingalePair",
    "TreeError",
    "is_strong_supermartingale",
    "left_limit",
    "mokobodzki_construct",
    "regularity",
    "right_envelope",
]
