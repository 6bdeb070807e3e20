"""Finite filtered scenario trees carrying a Brownian-like and a Poisson-like increment.

Nodes are stored breadth first with a uniform branching factor, so every
level is a contiguous block and the children of a node are contiguous too.
Edge data (probability, dW, dN) lives on the child node.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

THREE = "three"
FOUR = "four"


class TreeError(ValueError):
    """Invalid tree construction or query."""


@dataclass(frozen=True)
class TimeGrid:
    """Instants t_0 = 0 < t_1 < ... < t_N = T."""

    times: np.ndarray

    def __post_init__(self):
        t = np.asarray(self.times, dtype=float)
        if t.ndim != 1 or t.size < 2:
            raise TreeError("grid needs at least two instants")
        if t[0] != 0.0:
            raise TreeError("grid must start at 0")
        if not np.all(np.diff(t) > 0):
            raise TreeError("grid must be strictly increasing")
        t.setflags(write=False)
        object.__setattr__(self, "times", t)

    @classmethod
    def uniform(cls, T: float, n: int) -> "TimeGrid":
        return cls(np.linspace(0.0, T, n + 1))

    @property
    def horizon(self) -> float:
        return float(self.times[-1])

    @property
    def steps(self) -> np.ndarray:
        return np.diff(self.times)

    @property
    def n(self) -> int:
        return self.times.size - 1


def _edge_pattern(dt: float, lam: float, scheme: str):
    """Child probabilities, dW and dN for one parent at step dt."""
    q = lam * dt
    if lam == 0.0:
        s = math.sqrt(dt)
        return np.array([0.5, 0.5]), np.array([s, -s]), np.array([0.0, 0.0])
    if scheme == THREE:
        # the two diffusive children share 1 - q, so their spread is widened to
        # keep E[dW^2] = dt
        s = math.sqrt(dt / (1.0 - q))
        return (
            np.array([(1.0 - q) / 2, (1.0 - q) / 2, q]),
            np.array([s, -s, 0.0]),
            np.array([0.0, 0.0, 1.0]),
        )
    s = math.sqrt(dt)
    return (
        np.array([(1.0 - q) / 2, (1.0 - q) / 2, q / 2, q / 2]),
        np.array([s, -s, s, -s]),
        np.array([0.0, 0.0, 1.0, 1.0]),
    )


@dataclass(frozen=True, eq=False)
class ScenarioTree:
    """Immutable non-recombining tree.

    ``times[l]`` is the instant of level ``l``; ``level_start[l]`` the first
    node of level ``l`` (with a trailing sentinel). ``origin`` maps nodes of a
    subtree back to the tree it was cut from.
    """

    times: np.ndarray
    lam: float
    scheme: str
    b: int
    level_start: np.ndarray
    pat_prob: np.ndarray  # (depth, b)
    pat_dw: np.ndarray
    pat_dn: np.ndarray
    origin: np.ndarray
    horizon: float
    level: np.ndarray = field(init=False)
    parent: np.ndarray = field(init=False)
    prob: np.ndarray = field(init=False)
    dw: np.ndarray = field(init=False)
    dn: np.ndarray = field(init=False)
    dnt: np.ndarray = field(init=False)
    gram: np.ndarray = field(init=False)

    def __post_init__(self):
        ls = self.level_start
        depth = len(ls) - 2
        n = int(ls[-1])
        level = np.empty(n, dtype=np.int64)
        parent = np.full(n, -1, dtype=np.int64)
        prob = np.ones(n)
        dw = np.zeros(n)
        dn = np.zeros(n)
        for l in range(depth + 1):
            level[ls[l] : ls[l + 1]] = l
        for l in range(depth):
            lo, hi, nxt = ls[l], ls[l + 1], ls[l + 2]
            parent[hi:nxt] = np.repeat(np.arange(lo, hi), self.b)
            m = hi - lo
            prob[hi:nxt] = np.tile(self.pat_prob[l], m)
            dw[hi:nxt] = np.tile(self.pat_dw[l], m)
            dn[hi:nxt] = np.tile(self.pat_dn[l], m)
        dts = np.diff(self.times)
        dnt = dn - self.lam * np.concatenate([[0.0], dts[level[1:] - 1]])
        gram = np.zeros((depth, 2, 2))
        for l in range(depth):
            p, w = self.pat_prob[l], self.pat_dw[l]
            nt = self.pat_dn[l] - self.lam * dts[l]
            gram[l] = [[p @ (w * w), p @ (w * nt)], [p @ (w * nt), p @ (nt * nt)]]
        for name, val in (("level", level), ("parent", parent), ("prob", prob),
                          ("dw", dw), ("dn", dn), ("dnt", dnt), ("gram", gram)):
            val.setflags(write=False)
            object.__setattr__(self, name, val)

    # -- shape -----------------------------------------------------------------
    @property
    def depth(self) -> int:
        return len(self.level_start) - 2

    @property
    def n_nodes(self) -> int:
        return int(self.level_start[-1])

    @property
    def n_inner(self) -> int:
        """Number of non-terminal nodes (they come first)."""
        return int(self.level_start[-2])

    @property
    def root(self) -> int:
        return 0

    @property
    def dt(self) -> np.ndarray:
        return np.diff(self.times)

    def level_slice(self, l: int) -> slice:
        return slice(int(self.level_start[l]), int(self.level_start[l + 1]))

    def leaves(self) -> np.ndarray:
        return np.arange(self.n_inner, self.n_nodes)

    def is_terminal(self, node: int) -> bool:
        return node >= self.n_inner

    def node_time(self, node) -> np.ndarray:
        return self.times[self.level[node]]

    def children(self, node: int) -> np.ndarray:
        self._check_node(node)
        if self.is_terminal(node):
            return np.empty(0, dtype=np.int64)
        l = self.level[node]
        c0 = self.level_start[l + 1] + (node - self.level_start[l]) * self.b
        return np.arange(c0, c0 + self.b)

    def first_child(self, nodes) -> np.ndarray:
        l = self.level[nodes]
        return self.level_start[l + 1] + (nodes - self.level_start[l]) * self.b

    def path(self, node: int) -> list[int]:
        """Nodes from the root down to ``node``."""
        out = [node]
        while self.parent[out[-1]] >= 0:
            out.append(int(self.parent[out[-1]]))
        return out[::-1]

    def _check_node(self, node: int):
        if not 0 <= node < self.n_nodes:
            raise TreeError(f"unknown node {node}")

    # -- expectations ----------------------------------------------------------
    def expect_children(self, values: np.ndarray, l: int) -> np.ndarray:
        """E[values(children) | node] for every node of level ``l``.

        ``values`` is indexed by node on its last axis; leading axes are batch.
        """
        lo, hi, nxt = self.level_start[l], self.level_start[l + 1], self.level_start[l + 2]
        v = values[..., hi:nxt].reshape(values.shape[:-1] + (hi - lo, self.b))
        return v @ self.pat_prob[l]

    def path_probabilities(self) -> np.ndarray:
        pp = np.ones(self.n_nodes)
        for l in range(self.depth):
            s = slice(self.level_start[l + 1], self.level_start[l + 2])
            pp[s] = pp[self.parent[s]] * self.prob[s]
        return pp

    def expectation(self, values: np.ndarray, node: int = 0) -> float:
        """E[values at leaves | node] by full backward aggregation."""
        v = np.asarray(values, dtype=float).copy()
        for l in range(self.depth - 1, self.level[node] - 1, -1):
            v[self.level_slice(l)] = self.expect_children(v, l)
        return float(v[node])

    def decompose_level(self, values: np.ndarray, l: int):
        """Project child increments of every level-``l`` node on (dW, Ñ).

        Returns ``(Z, k, h)``; ``h`` has one entry per child and the same
        batch axes as ``values``. When Ñ vanishes identically ``k`` is 0.
        """
        lo, hi, nxt = self.level_start[l], self.level_start[l + 1], self.level_start[l + 2]
        m = hi - lo
        v = values[..., hi:nxt].reshape(values.shape[:-1] + (m, self.b))
        p = self.pat_prob[l]
        w = self.pat_dw[l]
        nt = self.pat_dn[l] - self.lam * self.dt[l]
        dm = v - (v @ p)[..., None]
        rw = dm @ (p * w)
        rn = dm @ (p * nt)
        g = self.gram[l]
        det = g[0, 0] * g[1, 1] - g[0, 1] ** 2
        if g[1, 1] <= 1e-300 or abs(det) <= 1e-14 * g[0, 0] * g[1, 1]:
            z = rw / g[0, 0]
            k = np.zeros_like(z)
        else:
            z = (g[1, 1] * rw - g[0, 1] * rn) / det
            k = (g[0, 0] * rn - g[0, 1] * rw) / det
        h = dm - z[..., None] * w - k[..., None] * nt
        return z, k, h.reshape(values.shape[:-1] + (m * self.b,))

    @property
    def jump_degenerate(self) -> bool:
        return self.lam == 0.0

    # -- subtrees --------------------------------------------------------------
    def subtree(self, node: int) -> "ScenarioTree":
        """The tree hanging below ``node``; ``origin`` indexes this tree."""
        self._check_node(node)
        L = int(self.level[node])
        off = node - self.level_start[L]
        idx, starts = [], [0]
        for r in range(self.depth - L + 1):
            cnt = self.b**r
            s = self.level_start[L + r] + off * cnt
            idx.append(np.arange(s, s + cnt))
            starts.append(starts[-1] + cnt)
        return ScenarioTree(
            times=self.times[L:],
            lam=self.lam,
            scheme=self.scheme,
            b=self.b,
            level_start=np.asarray(starts, dtype=np.int64),
            pat_prob=self.pat_prob[L:],
            pat_dw=self.pat_dw[L:],
            pat_dn=self.pat_dn[L:],
            origin=self.origin[np.concatenate(idx)],
            horizon=self.horizon,
        )

    def with_probabilities(self, pat_prob: np.ndarray) -> "ScenarioTree":
        """Same tree shape and increments under other branch probabilities."""
        pat_prob = np.asarray(pat_prob, dtype=float)
        if pat_prob.shape != self.pat_prob.shape:
            raise TreeError("probability pattern has the wrong shape")
        if np.any(pat_prob <= 0) or not np.allclose(pat_prob.sum(axis=1), 1.0, atol=1e-14):
            raise TreeError("branch probabilities must be positive and sum to 1")
        return ScenarioTree(self.times, self.lam, self.scheme, self.b, self.level_start,
                            pat_prob, self.pat_dw, self.pat_dn, self.origin, self.horizon)

    def to_dict(self) -> dict:
        """JSON-friendly dump for debugging."""
        return {
            "times": self.times.tolist(),
            "lambda": self.lam,
            "scheme": self.scheme,
            "branching": self.b,
            "nodes": [
                {
                    "id": i,
                    "level": int(self.level[i]),
                    "parent": int(self.parent[i]),
                    "prob": float(self.prob[i]),
                    "dW": float(self.dw[i]),
                    "dN": float(self.dn[i]),
                }
                for i in range(self.n_nodes)
            ],
        }


def build_tree(grid: TimeGrid | np.ndarray | list, lam: float = 0.0, scheme: str = THREE) -> ScenarioTree:
    """Deterministic scenario tree on ``grid``.

    The jump branch is dropped when ``lam == 0``.
    """
    if not isinstance(grid, TimeGrid):
        grid = TimeGrid(np.asarray(grid, dtype=float))
    scheme = scheme.lower()
    if scheme not in (THREE, FOUR):
        raise TreeError(f"unknown branching scheme {scheme!r}")
    lam = float(lam)
    if lam < 0:
        raise TreeError("intensity must be nonnegative")
    dts = grid.steps
    if np.any(lam * dts >= 1.0):
        raise TreeError("lambda * dt must stay below 1")
    pats = [_edge_pattern(float(dt), lam, scheme) for dt in dts]
    b = pats[0][0].size
    depth = grid.n
    starts = np.cumsum([0] + [b**l for l in range(depth + 1)]).astype(np.int64)
    return ScenarioTree(
        times=grid.times,
        lam=lam,
        scheme=scheme,
        b=b,
        level_start=starts,
        pat_prob=np.array([p[0] for p in pats]),
        pat_dw=np.array([p[1] for p in pats]),
        pat_dn=np.array([p[2] for p in pats]),
        origin=np.arange(starts[-1]),
        horizon=grid.horizon,
    )


def _child_values(tree: ScenarioTree, node: int, X) -> np.ndarray:
    ch = tree.children(node)
    if ch.size == 0:
        raise TreeError("terminal node has no children")
    if isinstance(X, dict):
        missing = [int(c) for c in ch if int(c) not in X]
        if missing:
            raise TreeError(f"missing child values for nodes {missing}")
        return np.array([float(X[int(c)]) for c in ch])
    x = np.asarray(X, dtype=float)
    if x.shape != (ch.size,) or np.any(np.isnan(x)):
        raise TreeError(f"expected {ch.size} child values")
    return x


def conditional_expectation(tree: ScenarioTree, node: int, X) -> float:
    """Sum of p_c X_c over the children of ``node``.

    ``X`` is either a sequence aligned with ``tree.children(node)`` or a
    mapping child id -> value.
    """
    x = _child_values(tree, node, X)
    return float(tree.prob[tree.children(node)] @ x)


@dataclass(frozen=True)
class DecompositionRow:
    Z: float
    k: float
    h_inc: np.ndarray
    degenerate: bool


def martingale_decompose(tree: ScenarioTree, node: int, M_next) -> DecompositionRow:
    """Least-squares split of the child increments into Z dW + k Ñ + dh."""
    x = _child_values(tree, node, M_next)
    l = int(tree.level[node])
    full = np.zeros(tree.n_nodes)
    full[tree.children(node)] = x
    # only this node's block matters; decompose its level and pick the row
    z, k, h = tree.decompose_level(full, l)
    i = node - tree.level_start[l]
    hb = h.reshape(-1, tree.b)[i]
    return DecompositionRow(float(z[i]), float(k[i]), hb.copy(), tree.jump_degenerate)
