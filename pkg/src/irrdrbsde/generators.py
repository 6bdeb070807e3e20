"""Seeded random instances for fuzzing and property tests.

Barrier values live on a quarter grid so that ties between the at and right
slots, and between the two barriers, occur often.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .bsde import Driver, driver_library
from .process import AdmissiblePair, LadlagProcess
from .tree import THREE, ScenarioTree, TimeGrid, build_tree

KINDS = ("irregular", "right_regular", "left_regular", "right_continuous")


@dataclass(frozen=True, eq=False)
class Instance:
    tree: ScenarioTree
    pair: AdmissiblePair
    driver_spec: dict
    kind: str

    @property
    def driver(self) -> Driver:
        return driver_from_spec(self.driver_spec, self.tree)

    def to_scenario(self) -> dict:
        return {
            "tree": {"times": [float(t) for t in self.tree.times], "lam": float(self.tree.lam),
                     "scheme": self.tree.scheme},
            "barriers": {
                "xi": {"at": self.pair.xi.at.tolist(), "right": self.pair.xi.right.tolist()},
                "zeta": {"at": self.pair.zeta.at.tolist(), "right": self.pair.zeta.right.tolist()},
            },
            "driver": _plain(self.driver_spec),
        }


def _plain(d):
    if isinstance(d, dict):
        return {k: _plain(v) for k, v in d.items()}
    if isinstance(d, (list, tuple, np.ndarray)):
        return [_plain(v) for v in d]
    if isinstance(d, np.generic):
        return d.item()
    return d


def driver_from_spec(spec: dict, tree: ScenarioTree | None = None) -> Driver:
    """{"process": [...]} or {"name": ..., "params": {...}}; ``lam`` defaults to the tree's."""
    if "process" in spec:
        v = np.asarray(spec["process"], dtype=float)
        if tree is not None and v.shape != (tree.n_inner,):
            raise ValueError(f"driver process needs {tree.n_inner} values, got {v.size}")
        if tree is not None:
            v = np.concatenate([v, np.zeros(tree.n_nodes - tree.n_inner)])
        return Driver.process(v)
    params = dict(spec.get("params", {}))
    if tree is not None:
        params.setdefault("lam", float(tree.lam))
    return driver_library(spec.get("name", "zero"), params)


def _q(rng, size, scale=1.0):
    return np.round(rng.normal(size=size) * scale * 4) / 4


def _qu(rng, size, hi=1.0):
    return np.round(rng.uniform(0.0, hi, size) * 4) / 4


def random_tree(rng, max_depth: int = 5, min_depth: int = 1, scheme: str = THREE, lam=None,
                max_nodes: int | None = None, T: float | None = None) -> ScenarioTree:
    while True:
        depth = int(rng.integers(min_depth, max_depth + 1))
        lam_ = float(rng.choice([0.0, 0.5, 1.0])) if lam is None else float(lam)
        horizon = float(rng.choice([0.5, 1.0])) if T is None else float(T)
        # a random grid: uniform, or with jittered interior points
        if rng.random() < 0.5:
            times = np.linspace(0.0, horizon, depth + 1)
        else:
            inner = np.sort(rng.uniform(0.05, 0.95, depth - 1)) * horizon
            times = np.concatenate([[0.0], inner, [horizon]])
            if np.min(np.diff(times)) < 0.02 * horizon:
                times = np.linspace(0.0, horizon, depth + 1)
        if lam is None and lam_ * np.max(np.diff(times)) >= 0.9:
            lam_ = 0.5 * lam_
        tree = build_tree(TimeGrid(times), lam=lam_, scheme=scheme)
        if max_nodes is None or tree.n_nodes <= max_nodes:
            return tree
        if depth == min_depth:
            return tree


def _children_block(tree: ScenarioTree, v: np.ndarray, op) -> np.ndarray:
    return op(v[1:].reshape(-1, tree.b), axis=1)[: tree.n_inner]


def random_pair(rng, tree: ScenarioTree, kind: str = "irregular") -> AdmissiblePair:
    """Admissible pair of the requested regularity class.

    Every class keeps xi.right <= zeta.at at inner nodes.
    """
    if kind not in KINDS:
        raise ValueError(f"unknown kind {kind!r}")
    n, ni = tree.n_nodes, tree.n_inner
    xa = _q(rng, n)
    za = xa + _qu(rng, n, 1.5)
    za[ni:] = xa[ni:]
    if kind == "irregular":
        xr = np.minimum(xa[:ni] + _q(rng, ni), za[:ni])
        zr = np.maximum(za[:ni] + _q(rng, ni), xr)
    elif kind == "right_regular":
        xr = xa[:ni] - _qu(rng, ni)
        zr = za[:ni] + _qu(rng, ni)
    elif kind == "left_regular":
        xr = np.minimum(xa[:ni], _children_block(tree, xa, np.min)) - _qu(rng, ni)
        zr = np.maximum(za[:ni], _children_block(tree, za, np.max)) + _qu(rng, ni)
    else:
        xr, zr = xa[:ni].copy(), za[:ni].copy()
    return AdmissiblePair(LadlagProcess(xa, xr), LadlagProcess(za, zr))


def random_driver_spec(rng, tree: ScenarioTree, kind: str | None = None) -> dict:
    """A driver whose K dt < 1 and, when lam > 0, with a comparison certificate."""
    kind = kind or str(rng.choice(["zero", "linear", "process", "two_rates"]))
    lam = float(tree.lam)
    if kind == "zero":
        return {"name": "zero", "params": {}}
    if kind == "linear":
        a = float(np.round(rng.uniform(-0.5, 0.5), 3))
        bz = float(np.round(rng.uniform(-0.5, 0.5), 3))
        bk = float(np.round(rng.uniform(-0.4, 0.4) * lam, 3)) if lam > 0 else 0.0
        c = float(np.round(rng.uniform(-0.3, 0.3), 3))
        return {"name": "linear", "params": {"a": a, "bz": bz, "bk": bk, "c": c}}
    if kind == "process":
        return {"process": _q(rng, tree.n_inner).tolist()}
    if kind == "two_rates":
        r = float(np.round(rng.uniform(0.0, 0.05), 3))
        return {"name": "two_rates", "params": {"r": r, "R": r + float(np.round(rng.uniform(0.0, 0.1), 3)),
                                               "mu": [r + 0.03, r + 0.02], "sigma": [0.3, 0.2],
                                               "beta": [0.0, 0.5] if lam > 0 else [0.1, 0.5]}}
    raise ValueError(f"unknown driver kind {kind!r}")


def random_instance(rng, kind: str = "irregular", max_depth: int = 5, min_depth: int = 1,
                    driver_kind: str | None = None, max_nodes: int | None = None, scheme: str = THREE,
                    lam=None) -> Instance:
    tree = random_tree(rng, max_depth, min_depth, scheme=scheme, lam=lam, max_nodes=max_nodes)
    pair = random_pair(rng, tree, kind)
    spec = random_driver_spec(rng, tree, driver_kind)
    return Instance(tree, pair, spec, kind)


def ordered_pair(rng, tree: ScenarioTree, pair: AdmissiblePair) -> AdmissiblePair:
    """A second pair lying below ``pair`` on both barriers and both slots."""
    n, ni = tree.n_nodes, tree.n_inner
    dx_at, dz_at = _qu(rng, n), _qu(rng, n)
    dz_at[ni:] = dx_at[ni:]
    xi = LadlagProcess(pair.xi.at - dx_at, pair.xi.right - _qu(rng, ni))
    za = pair.zeta.at - dz_at
    za = np.maximum(za, xi.at)
    za[ni:] = xi.at[ni:]
    zr = np.maximum(pair.zeta.right - _qu(rng, ni), xi.right)
    return AdmissiblePair(xi, LadlagProcess(za, np.minimum(zr, pair.zeta.right)))


__all__ = [
    "Instance",
    "KINDS",
    "driver_from_spec",
    "ordered_pair",
    "random_driver_spec",
    "random_instance",
    "random_pair",
    "random_tree",
]
