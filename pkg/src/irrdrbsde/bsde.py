"""Drivers, the implicit backward step and conditional f-expectations."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .process import LadlagProcess
from .tree import ScenarioTree

FIXED_POINT_TOL = 1e-13
FIXED_POINT_MAXIT = 500


class DriverError(ValueError):
    pass


class ConvergenceError(RuntimeError):
    def __init__(self, msg: str, residual: float):
        super().__init__(f"{msg} (residual {residual:.3e})")
        self.residual = residual


@dataclass(frozen=True, eq=False)
class Driver:
    """f(t, y, z, k, node), vectorized over numpy arrays.

    ``K`` bounds |f1 - f2| by K(|dy| + |dz| + sqrt(lam)|dk|). ``royer_gamma``,
    when present, returns gamma with f(k1) - f(k2) >= lam * gamma * (k1 - k2);
    ``royer_bound`` bounds |gamma| sqrt(lam).
    """

    func: Callable
    K: float
    name: str = "custom"
    lam: float = 0.0
    royer_gamma: Callable | None = None
    royer_bound: float = 0.0
    y_free: bool = False
    params: dict = field(default_factory=dict)

    def __call__(self, t, y, z, k, node=None):
        return self.func(t, y, z, k, node)

    @property
    def has_royer(self) -> bool:
        return self.royer_gamma is not None

    @classmethod
    def process(cls, values, name: str = "process") -> "Driver":
        """Driver that ignores (y, z, k) and returns ``values[node]``."""
        v = np.asarray(values, dtype=float)
        v.setflags(write=False)
        return cls(
            func=lambda t, y, z, k, node: np.broadcast_to(v[node], np.shape(y)) + 0.0,
            K=0.0,
            name=name,
            royer_gamma=lambda t, y, z, k1, k2, node=None: np.zeros(np.broadcast(k1, k2).shape),
            y_free=True,
            params={"values": v},
        )

    @classmethod
    def custom(cls, func, K: float, lam: float, royer_gamma=None, name: str = "custom",
               n_probes: int = 10_000, seed: int = 0) -> "Driver":
        d = cls(func=func, K=float(K), name=name, lam=float(lam), royer_gamma=royer_gamma)
        probe_driver(d, n_probes=n_probes, seed=seed)
        if royer_gamma is not None:
            rng = np.random.default_rng(seed + 1)
            g = royer_gamma(*_probe_points(rng, n_probes)[:4], rng.normal(size=n_probes) * 3, None)
            d = cls(func=func, K=float(K), name=name, lam=float(lam), royer_gamma=royer_gamma,
                    royer_bound=float(np.max(np.abs(g)) * math.sqrt(lam)))
        return d

    @property
    def is_process(self) -> bool:
        return "values" in self.params


def _probe_points(rng, n):
    t = rng.uniform(0.0, 1.0, n)
    y, z, k = (rng.normal(size=n) * 3 for _ in range(3))
    return t, y, z, k


def probe_driver(f: Driver, n_probes: int = 10_000, seed: int = 0, tol: float = 1e-9) -> None:
    """Check the Lipschitz and comparison inequalities on random probes.

    Passing is evidence, not proof: a driver can violate either inequality
    away from the probed points.
    """
    rng = np.random.default_rng(seed)
    t, y1, z1, k1 = _probe_points(rng, n_probes)
    _, y2, z2, k2 = _probe_points(rng, n_probes)
    lhs = np.abs(f(t, y1, z1, k1) - f(t, y2, z2, k2))
    rhs = f.K * (np.abs(y1 - y2) + np.abs(z1 - z2) + math.sqrt(f.lam) * np.abs(k1 - k2))
    bad = lhs > rhs * (1 + 1e-12) + tol
    if np.any(bad):
        raise DriverError(f"driver {f.name!r} violates its Lipschitz bound on {int(bad.sum())} probes")
    if f.royer_gamma is not None and f.lam > 0:
        g = f.royer_gamma(t, y1, z1, k1, k2, None)
        if np.any(g < -1.0 - 1e-12):
            raise DriverError(f"driver {f.name!r}: gamma below -1")
        diff = f(t, y1, z1, k1) - f(t, y1, z1, k2)
        if np.any(diff < f.lam * g * (k1 - k2) - tol * (1 + np.abs(diff))):
            raise DriverError(f"driver {f.name!r}: comparison certificate fails")


def _quotient_gamma(f, lam):
    """Difference quotient in k, clipped just above -1."""

    def gamma(t, y, z, k1, k2, node=None):
        k1, k2 = np.broadcast_arrays(np.asarray(k1, float), np.asarray(k2, float))
        dk = k1 - k2
        num = f(t, y, z, k1, node) - f(t, y, z, k2, node)
        safe = np.where(dk == 0.0, 1.0, dk)
        g = np.where(dk == 0.0, 0.0, num / (lam * safe))
        return np.maximum(g, -1.0 + 1e-9)

    return gamma


def _sigma_inverse(params) -> tuple[np.ndarray, np.ndarray]:
    sig = np.asarray(params.get("sigma", [0.2, 0.1]), dtype=float)
    beta = np.asarray(params.get("beta", [0.0, 0.1]), dtype=float)
    S = np.column_stack([sig, beta])
    if np.any(beta <= -1):
        raise DriverError("jump loadings must exceed -1")
    det = np.linalg.det(S)
    if not np.isfinite(det) or abs(det) <= 1e-12 * max(1.0, np.abs(S).max() ** 2):
        raise DriverError("Sigma is singular")
    return S, np.linalg.inv(S)


def _market_driver(name: str, params: dict) -> Driver:
    lam = float(params.get("lam", 0.0))
    r = float(params.get("r", 0.0))
    mu = np.asarray(params.get("mu", [r, r]), dtype=float)
    _, M = _sigma_inverse(params)
    c = M @ (mu - r)  # (z, k) Sigma^-1 (mu - r 1) = c0 z + c1 k
    one = M.sum(axis=1)  # phi' 1 = one0 z + one1 k
    sl = math.sqrt(lam)

    def kbound(kz, kk):
        return max(kz, kk / sl) if lam > 0 else kz

    if name == "perfect":

        def func(t, y, z, k, node=None):
            return -r * y - c[0] * z - c[1] * k

        K = max(abs(r), kbound(abs(c[0]), abs(c[1])))
        slopes = [-c[1]]
    elif name == "two_rates":
        R = float(params.get("R", r))
        if R < r:
            raise DriverError("borrowing rate below lending rate")
        d = R - r

        def func(t, y, z, k, node=None):
            return -r * y - c[0] * z - c[1] * k + d * np.maximum(-(y - one[0] * z - one[1] * k), 0.0)

        K = max(abs(r) + d, kbound(abs(c[0]) + d * abs(one[0]), abs(c[1]) + d * abs(one[1])))
        slopes = [-c[1], -c[1] + d * one[1]]
    elif name == "repo":
        b = np.asarray(params.get("b", [0.0, 0.0]), dtype=float)
        l = np.asarray(params.get("l", [0.0, 0.0]), dtype=float)

        def func(t, y, z, k, node=None):
            out = -r * y - c[0] * z - c[1] * k
            for i in range(2):
                phi = z * M[0, i] + k * M[1, i]
                out = out - l[i] * np.maximum(-phi, 0.0) + b[i] * np.maximum(phi, 0.0)
            return out

        m = np.maximum(np.abs(b), np.abs(l))
        K = max(abs(r), kbound(abs(c[0]) + m @ np.abs(M[0]), abs(c[1]) + m @ np.abs(M[1])))
        slopes = [-c[1] + s0 * M[1, 0] + s1 * M[1, 1] for s0 in (l[0], b[0]) for s1 in (l[1], b[1])]
    else:  # pragma: no cover - guarded by the caller
        raise DriverError(name)

    royer = None
    bound = 0.0
    if lam == 0.0:
        royer = lambda t, y, z, k1, k2, node=None: np.zeros(np.broadcast(k1, k2).shape)  # noqa: E731
    elif min(slopes) / lam >= -1.0:
        royer = _quotient_gamma(func, lam)
        bound = max(abs(s) for s in slopes) / sl
    return Driver(func=func, K=float(K), name=name, lam=lam, royer_gamma=royer,
                  royer_bound=float(bound), params=dict(params))


def driver_library(name: str, params: dict | None = None) -> Driver:
    """Named drivers: zero, linear, perfect, two_rates, repo.

    ``linear`` is f = a*y + bz*z + bk*k + c. Market drivers read r, R, mu,
    sigma, beta, b, l and the intensity ``lam``.
    """
    params = dict(params or {})
    lam = float(params.get("lam", 0.0))
    if name == "zero":
        return Driver(
            func=lambda t, y, z, k, node=None: np.zeros(np.broadcast(y, z, k).shape),
            K=0.0, name="zero", lam=lam,
            royer_gamma=lambda t, y, z, k1, k2, node=None: np.zeros(np.broadcast(k1, k2).shape),
            y_free=True, params=params,
        )
    if name == "linear":
        a = float(params.get("a", 0.0))
        bz = float(params.get("bz", 0.0))
        bk = float(params.get("bk", 0.0))
        c = float(params.get("c", 0.0))
        K = max(abs(a), abs(bz), abs(bk) / math.sqrt(lam) if lam > 0 else 0.0)
        if lam == 0.0:
            royer, bound = (lambda t, y, z, k1, k2, node=None: np.zeros(np.broadcast(k1, k2).shape)), 0.0
        elif bk / lam >= -1.0:
            g = bk / lam
            royer = lambda t, y, z, k1, k2, node=None: np.full(np.broadcast(k1, k2).shape, g)  # noqa: E731
            bound = abs(bk) / math.sqrt(lam)
        else:
            royer, bound = None, 0.0
        return Driver(
            func=lambda t, y, z, k, node=None: a * y + bz * z + bk * k + c,
            K=K, name="linear", lam=lam, royer_gamma=royer, royer_bound=bound,
            y_free=(a == 0.0), params=params,
        )
    if name in ("perfect", "two_rates", "repo"):
        return _market_driver(name, params)
    raise DriverError(f"unknown driver {name!r}")


def stability_constant(K: float, T: float) -> float:
    """L = exp((1 + 2K + K^2) T), the constant used in the epsilon-saddle bounds."""
    return math.exp((1.0 + 2.0 * K + K * K) * T)


def check_step(tree: ScenarioTree, f: Driver):
    if f.K * float(np.max(tree.dt)) >= 1.0:
        raise DriverError("K * dt must be below 1 for the implicit step")


def implicit_solve(f: Driver, t: float, cont, z, k, node, dt: float,
                   tol: float = FIXED_POINT_TOL, max_iter: int = FIXED_POINT_MAXIT):
    """Solve y = cont + f(t, y, z, k) dt by fixed-point iteration."""
    y = cont + f(t, cont, z, k, node) * dt
    if f.y_free:
        return y
    res = np.inf
    for _ in range(max_iter):
        y_new = cont + f(t, y, z, k, node) * dt
        res = float(np.max(np.abs(y_new - y) / np.maximum(1.0, np.abs(y_new)), initial=0.0))
        y = y_new
        if res <= tol:
            return y
    raise ConvergenceError("implicit step did not converge", res)


@dataclass(frozen=True, eq=False)
class BSDESolution:
    X: LadlagProcess
    Z: np.ndarray
    k: np.ndarray
    h_inc: np.ndarray


def _level_nodes(tree: ScenarioTree, l: int) -> np.ndarray:
    return tree.origin[tree.level_slice(l)]


def backward(tree: ScenarioTree, f: Driver, values: np.ndarray, stop: np.ndarray | None = None):
    """Batched implicit backward recursion.

    ``values`` carries the terminal values (and the payoff on stopped nodes);
    nodes where ``stop`` is true keep their value. Returns (V, Z, k, h).
    """
    check_step(tree, f)
    V = np.array(values, dtype=float)
    batch = V.shape[:-1]
    Z = np.zeros(batch + (tree.n_inner,))
    K = np.zeros(batch + (tree.n_inner,))
    H = np.zeros(batch + (tree.n_nodes,))
    for l in range(tree.depth - 1, -1, -1):
        s = tree.level_slice(l)
        cs = slice(tree.level_start[l + 1], tree.level_start[l + 2])
        z, k, h = tree.decompose_level(V, l)
        cont = tree.expect_children(V, l)
        y = implicit_solve(f, tree.times[l], cont, z, k, _level_nodes(tree, l), tree.dt[l])
        Z[..., s], K[..., s], H[..., cs] = z, k, h
        if stop is None:
            V[..., s] = y
        else:
            V[..., s] = np.where(stop[..., s], V[..., s], y)
    return V, Z, K, H


def bsde_step(tree: ScenarioTree, node: int, y_next, f: Driver):
    """One implicit step at ``node`` from child values; returns (y, z, k, h_inc)."""
    check_step(tree, f)
    ch = tree.children(node)
    if ch.size == 0:
        raise ValueError("terminal node")
    yn = np.asarray(y_next, dtype=float)
    if yn.shape != ch.shape:
        raise ValueError(f"expected {ch.size} child values")
    l = int(tree.level[node])
    full = np.zeros(tree.n_nodes)
    full[ch] = yn
    z, k, h = tree.decompose_level(full, l)
    i = node - tree.level_start[l]
    cont = float(tree.prob[ch] @ yn)
    y = implicit_solve(f, tree.times[l], np.array([cont]), z[i : i + 1], k[i : i + 1],
                       tree.origin[node : node + 1], tree.dt[l])
    return float(y[0]), float(z[i]), float(k[i]), h.reshape(-1, tree.b)[i].copy()


def bsde_solve(tree: ScenarioTree, terminal, f: Driver) -> BSDESolution:
    term = np.asarray(terminal, dtype=float)
    nl = tree.n_nodes - tree.n_inner
    if term.shape == (tree.n_nodes,):
        term = term[tree.n_inner :]
    if term.shape != (nl,):
        raise ValueError(f"terminal needs {nl} leaf values")
    V = np.zeros(tree.n_nodes)
    V[tree.n_inner :] = term
    V, Z, K, H = backward(tree, f, V)
    return BSDESolution(LadlagProcess.from_adapted(tree, V), Z, K, H)


def _stop_mask(x, tree: ScenarioTree) -> np.ndarray:
    m = np.asarray(getattr(x, "stop", x), dtype=bool)
    if m.shape != (tree.n_nodes,):
        raise ValueError("stopping time does not match the tree")
    return m


def first_stop_level(tree: ScenarioTree, stop: np.ndarray) -> np.ndarray:
    """Per node: level of the first stopped node on its root path (or a large sentinel)."""
    big = tree.depth + 1
    out = np.full(tree.n_nodes, big, dtype=np.int64)
    out[0] = 0 if stop[0] else big
    for l in range(1, tree.depth + 1):
        s = tree.level_slice(l)
        inherited = out[tree.parent[s]]
        out[s] = np.where(inherited < big, inherited, np.where(stop[s], l, big))
    return out


def effective_nodes(tree: ScenarioTree, stop: np.ndarray) -> np.ndarray:
    """Boolean mask of the first stopped node on every path."""
    fl = first_stop_level(tree, stop)
    return stop & (fl == tree.level)


def f_expectation(tree: ScenarioTree, theta, tau, payoff, f: Driver) -> np.ndarray:
    """E^f between two stopping times; values on the theta nodes, NaN elsewhere.

    ``payoff`` is read at the nodes where ``tau`` stops.
    """
    th = _stop_mask(theta, tree)
    ta = _stop_mask(tau, tree)
    lt, lta = first_stop_level(tree, th), first_stop_level(tree, ta)
    leaves = tree.leaves()
    if np.any(lt[leaves] > lta[leaves]):
        raise ValueError("theta must not exceed tau on any path")
    pay = np.asarray(payoff, dtype=float)
    V = np.where(ta, pay, 0.0)
    V, _, _, _ = backward(tree, f, V, stop=ta)
    out = np.full(tree.n_nodes, np.nan)
    eff = effective_nodes(tree, th)
    out[eff] = V[eff]
    return out


__all__ = [
    "BSDESolution",
    "ConvergenceError",
    "Driver",
    "DriverError",
    "backward",
    "bsde_solve",
    "bsde_step",
    "driver_library",
    "effective_nodes",
    "f_expectation",
    "first_stop_level",
    "implicit_solve",
    "probe_driver",
    "stability_constant",
]
