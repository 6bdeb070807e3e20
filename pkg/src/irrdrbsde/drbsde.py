"""Doubly reflected BSDEs on a scenario tree: three solvers and the checks.

Increment conventions: ``A_inc``/``Ap_inc`` are charged on the child node
closing the interval where reflection acted (so they are known one level
early); ``C_jump``/``Cp_jump`` sit on the instant of the right jump.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .bsde import ConvergenceError, Driver, DriverError, check_step, implicit_solve
from .process import AdmissiblePair, LadlagProcess
from .tree import ScenarioTree

PICARD_TOL = 1e-12
PICARD_MAXIT = 2_000_000
OUTER_TOL = 1e-11
OUTER_MAXIT = 1000


@dataclass(frozen=True, eq=False)
class DRBSDESolution:
    Y: LadlagProcess
    Z: np.ndarray
    k: np.ndarray
    h_inc: np.ndarray
    A_inc: np.ndarray
    Ap_inc: np.ndarray
    C_jump: np.ndarray
    Cp_jump: np.ndarray
    y_cont: np.ndarray  # continuation value at each inner node (argument of f)
    info: dict = field(default_factory=dict)

    @property
    def Y0(self) -> float:
        return float(self.Y.at[0])


def _level_nodes(tree: ScenarioTree, l: int):
    return tree.origin[tree.level_slice(l)]


def solve_direct(pair: AdmissiblePair, f: Driver, tree: ScenarioTree) -> DRBSDESolution:
    """Backward induction: implicit step, then clamp the interval and the instant."""
    pair.check(tree)
    check_step(tree, f)
    xi, zeta = pair.xi, pair.zeta
    n, ni = tree.n_nodes, tree.n_inner
    Yat = np.zeros(n)
    Yr = np.zeros(ni)
    yc = np.zeros(ni)
    Z, K = np.zeros(ni), np.zeros(ni)
    H = np.zeros(n)
    A, Ap = np.zeros(n), np.zeros(n)
    C, Cp = np.zeros(ni), np.zeros(ni)
    Yat[ni:] = xi.at[ni:]
    for l in range(tree.depth - 1, -1, -1):
        s = tree.level_slice(l)
        cs = slice(tree.level_start[l + 1], tree.level_start[l + 2])
        z, k, h = tree.decompose_level(Yat, l)
        cont = tree.expect_children(Yat, l)
        y = implicit_solve(f, tree.times[l], cont, z, k, _level_nodes(tree, l), tree.dt[l])
        r = np.minimum(np.maximum(y, xi.right[s]), zeta.right[s])
        at = np.minimum(np.maximum(r, xi.at[s]), zeta.at[s])
        Z[s], K[s], H[cs], yc[s], Yr[s], Yat[s] = z, k, h, y, r, at
        A[cs] = np.repeat(np.maximum(xi.right[s] - y, 0.0), tree.b)
        Ap[cs] = np.repeat(np.maximum(y - zeta.right[s], 0.0), tree.b)
        C[s] = np.maximum(at - r, 0.0)
        Cp[s] = np.maximum(r - at, 0.0)
    return DRBSDESolution(LadlagProcess(Yat, Yr), Z, K, H, A, Ap, C, Cp, yc, {"solver": "direct"})


def driver_expectation(tree: ScenarioTree, terminal: np.ndarray, fvals: np.ndarray) -> np.ndarray:
    """E[xi_T + integral of a driver process from t to T | F_t], per node."""
    v = np.zeros(tree.n_nodes)
    v[tree.n_inner :] = terminal
    for l in range(tree.depth - 1, -1, -1):
        s = tree.level_slice(l)
        v[s] = tree.expect_children(v, l) + fvals[s] * tree.dt[l]
    return v


def _process_values(f_proc, tree: ScenarioTree) -> np.ndarray:
    if isinstance(f_proc, Driver):
        if not f_proc.is_process:
            raise DriverError("expected a driver process (no dependence on y, z, k)")
        v = np.asarray(f_proc.params["values"], dtype=float)[tree.origin[: tree.n_inner]]
    else:
        v = np.asarray(getattr(f_proc, "values", f_proc), dtype=float)
        if v.shape == (tree.n_nodes,):
            v = v[: tree.n_inner]
    if v.shape != (tree.n_inner,):
        raise ValueError("driver process needs one value per inner node")
    return v


@dataclass(frozen=True, eq=False)
class PicardTrace:
    X: LadlagProcess
    Xp: LadlagProcess
    A_X: np.ndarray
    C_X: np.ndarray
    A_Xp: np.ndarray
    C_Xp: np.ndarray
    iterations: int
    residual: float
    history: list | None = None


def picard_iterate(xt: LadlagProcess, zt: LadlagProcess, tree: ScenarioTree,
                   tol: float = PICARD_TOL, max_iter: int = PICARD_MAXIT,
                   record: bool = False) -> PicardTrace:
    """Coupled Ref iteration X = Ref[(X' + xt) 1_[0,T)], X' = Ref[(X - zt) 1_[0,T)]."""
    prob = np.ascontiguousarray(tree.prob)
    ls = np.ascontiguousarray(tree.level_start, dtype=np.int64)
    if not record:
        X, Xp, it, res = kernels.picard(
            np.ascontiguousarray(xt.at), np.ascontiguousarray(xt.right),
            np.ascontiguousarray(zt.at), np.ascontiguousarray(zt.right),
            prob, ls, int(tree.b), float(tol), int(max_iter),
        )
        history = None
    else:
        ni = tree.n_inner
        zero = (np.zeros(tree.n_nodes), np.zeros(ni), np.zeros(tree.n_nodes), np.zeros(ni))
        X, Xp = zero, zero
        history = [(LadlagProcess(X[0], X[1]), LadlagProcess(Xp[0], Xp[1]))]
        it, res = 0, np.inf
        while it < max_iter:
            oa = Xp[0] + xt.at
            oa[ni:] = 0.0
            opa = X[0] - zt.at
            opa[ni:] = 0.0
            Xn = kernels.ref_backward(oa, Xp[1] + xt.right, prob, ls, int(tree.b))
            Xpn = kernels.ref_backward(opa, X[1] - zt.right, prob, ls, int(tree.b))
            res = max(float(np.max(np.abs(Xn[0] - X[0]))), float(np.max(np.abs(Xpn[0] - Xp[0]))),
                      float(np.max(np.abs(Xn[1] - X[1]), initial=0.0)),
                      float(np.max(np.abs(Xpn[1] - Xp[1]), initial=0.0)))
            X, Xp = Xn, Xpn
            it += 1
            history.append((LadlagProcess(X[0], X[1]), LadlagProcess(Xp[0], Xp[1])))
            if res < tol:
                break
    if not res < tol:
        raise ConvergenceError("Picard iteration did not converge", float(res))
    return PicardTrace(LadlagProcess(X[0], X[1]), LadlagProcess(Xp[0], Xp[1]),
                       X[2], X[3], Xp[2], Xp[3], int(it), float(res), history)


def solve_picard_driver_process(pair: AdmissiblePair, f_proc, tree: ScenarioTree,
                                tol: float = PICARD_TOL, max_iter: int = PICARD_MAXIT,
                                record: bool = False) -> DRBSDESolution:
    """Solve through the coupled reflected system for a driver given as a process."""
    pair.check(tree)
    fv = _process_values(f_proc, tree)
    ni = tree.n_inner
    ebar = driver_expectation(tree, pair.xi.at[ni:], fv)
    E = LadlagProcess(ebar, ebar[:ni])
    tr = picard_iterate(pair.xi - E, pair.zeta - E, tree, tol, max_iter, record)
    Y = tr.X - tr.Xp + E
    Yat = Y.at.copy()
    Yat[ni:] = pair.xi.at[ni:]
    Y = LadlagProcess(Yat, Y.right)
    a_net = tr.A_X - tr.A_Xp
    c_net = tr.C_X - tr.C_Xp
    Z, K = np.zeros(ni), np.zeros(ni)
    H = np.zeros(tree.n_nodes)
    yc = np.zeros(ni)
    for l in range(tree.depth):
        s = tree.level_slice(l)
        cs = slice(tree.level_start[l + 1], tree.level_start[l + 2])
        Z[s], K[s], H[cs] = tree.decompose_level(Yat, l)
        yc[s] = tree.expect_children(Yat, l) + fv[s] * tree.dt[l]
    a_net[0] = 0.0
    info = {"solver": "picard", "iterations": tr.iterations, "residual": tr.residual, "trace": tr}
    return DRBSDESolution(Y, Z, K, H, np.maximum(a_net, 0.0), np.maximum(-a_net, 0.0),
                          np.maximum(c_net, 0.0), np.maximum(-c_net, 0.0), yc, info)


def _frozen_driver(f: Driver, sol_y: np.ndarray, Z: np.ndarray, K: np.ndarray, tree: ScenarioTree) -> np.ndarray:
    out = np.empty(tree.n_inner)
    for l in range(tree.depth):
        s = tree.level_slice(l)
        out[s] = f(tree.times[l], sol_y[s], Z[s], K[s], _level_nodes(tree, l))
    return out


def solve_fixed_point(pair: AdmissiblePair, f: Driver, tree: ScenarioTree, init: str = "zero",
                      tol: float = OUTER_TOL, max_iter: int = OUTER_MAXIT) -> DRBSDESolution:
    """Freeze (y, z, k) in f, solve the driver-process problem, repeat.

    ``init`` is "zero" or "terminal" (conditional expectation of xi_T).
    """
    pair.check(tree)
    check_step(tree, f)
    ni = tree.n_inner
    if init == "zero":
        yc, Z, K = np.zeros(ni), np.zeros(ni), np.zeros(ni)
    elif init == "terminal":
        v = driver_expectation(tree, pair.xi.at[ni:], np.zeros(ni))
        yc = v[:ni].copy()
        Z, K = np.zeros(ni), np.zeros(ni)
        for l in range(tree.depth):
            s = tree.level_slice(l)
            Z[s], K[s], _ = tree.decompose_level(v, l)
    else:
        raise ValueError(f"unknown init {init!r}")
    prev = None
    settled = None
    for it in range(1, max_iter + 1):
        fv = _frozen_driver(f, yc, Z, K, tree)
        sol = solve_picard_driver_process(pair, fv, tree)
        if prev is not None:
            change = max(sol.Y.max_abs_diff(prev.Y), float(np.max(np.abs(sol.y_cont - prev.y_cont), initial=0.0)))
            if change < tol:
                settled = it - 1
                break
        prev = sol
        yc, Z, K = sol.y_cont, sol.Z, sol.k
    else:
        raise ConvergenceError("fixed-point iteration did not converge", float("nan"))
    info = {"solver": "fixed_point", "outer_iterations": settled, "init": init}
    return DRBSDESolution(sol.Y, sol.Z, sol.k, sol.h_inc, sol.A_inc, sol.Ap_inc,
                          sol.C_jump, sol.Cp_jump, sol.y_cont, info)


# -- verification ----------------------------------------------------------------

@dataclass
class VerificationReport:
    violations: dict

    def ok(self, tol: float = 1e-10) -> bool:
        return all(v <= tol for v in self.violations.values())

    def failures(self, tol: float = 1e-10) -> dict:
        return {k: v for k, v in self.violations.items() if v > tol}

    @property
    def worst(self) -> float:
        return max(self.violations.values())


def _mx(a) -> float:
    a = np.asarray(a, dtype=float)
    return float(np.max(a)) if a.size else 0.0


def verify_solution(sol: DRBSDESolution, pair: AdmissiblePair, f: Driver, tree: ScenarioTree) -> VerificationReport:
    """Max violation of every defining condition, keyed by name."""
    xi, zeta, Y = pair.xi, pair.zeta, sol.Y
    ni = tree.n_inner
    yat, yr = Y.at, Y.right
    v = {}
    v["terminal"] = _mx(np.abs(yat[ni:] - xi.at[ni:]))
    v["sandwich_lower"] = max(_mx(xi.at - yat), _mx(xi.right - yr), 0.0)
    v["sandwich_upper"] = max(_mx(yat - zeta.at), _mx(yr - zeta.right), 0.0)
    v["nonnegative"] = max(_mx(-sol.A_inc), _mx(-sol.Ap_inc), _mx(-sol.C_jump), _mx(-sol.Cp_jump), 0.0)
    fv = _frozen_driver(f, sol.y_cont, sol.Z, sol.k, tree)
    cont_res, dyn, orth, pred = [], [], [], []
    for l in range(tree.depth):
        s = tree.level_slice(l)
        cs = slice(tree.level_start[l + 1], tree.level_start[l + 2])
        dt = tree.dt[l]
        cont_res.append(np.abs(sol.y_cont[s] - tree.expect_children(yat, l) - fv[s] * dt))
        par = tree.parent[cs]
        rhs = (yat[cs] + fv[par] * dt - sol.Z[par] * tree.dw[cs] - sol.k[par] * tree.dnt[cs]
               - sol.h_inc[cs] + sol.A_inc[cs] - sol.Ap_inc[cs] + sol.C_jump[par] - sol.Cp_jump[par])
        dyn.append(np.abs(yat[par] - rhs))
        h = sol.h_inc
        orth.append(np.abs(tree.expect_children(h, l)))
        orth.append(np.abs(tree.expect_children(h * tree.dw, l)))
        orth.append(np.abs(tree.expect_children(h * tree.dnt, l)))
        for arr in (sol.A_inc, sol.Ap_inc):
            blk = arr[cs].reshape(-1, tree.b)
            pred.append(blk.max(axis=1) - blk.min(axis=1))
    v["continuation"] = max(map(_mx, cont_res), default=0.0)
    v["dynamics"] = max(map(_mx, dyn), default=0.0)
    v["orthogonality"] = max(map(_mx, orth), default=0.0)
    v["predictable_A"] = max(map(_mx, pred), default=0.0)
    par = tree.parent[1:]
    v["skorokhod_A"] = _mx(np.minimum(sol.A_inc[1:], np.abs(yr[par] - xi.right[par])))
    v["skorokhod_Ap"] = _mx(np.minimum(sol.Ap_inc[1:], np.abs(yr[par] - zeta.right[par])))
    v["skorokhod_C"] = _mx(np.minimum(sol.C_jump, np.abs(yat[:ni] - xi.at[:ni])))
    v["skorokhod_Cp"] = _mx(np.minimum(sol.Cp_jump, np.abs(yat[:ni] - zeta.at[:ni])))
    v["singular_A"] = _mx(np.minimum(sol.A_inc, sol.Ap_inc))
    v["singular_C"] = _mx(np.minimum(sol.C_jump, sol.Cp_jump))
    v["right_jump_C"] = _mx(np.abs(sol.C_jump - np.maximum(yat[:ni] - yr, 0.0)))
    v["right_jump_Cp"] = _mx(np.abs(sol.Cp_jump - np.maximum(yr - yat[:ni], 0.0)))
    v["clamp"] = _mx(np.abs(yat[:ni] - np.minimum(np.maximum(yr, xi.at[:ni]), zeta.at[:ni])))
    return VerificationReport(v)


# -- comparison and a priori estimate ----------------------------------------------

class PreconditionError(ValueError):
    pass


def compare(sol1: DRBSDESolution, sol2: DRBSDESolution, pair1: AdmissiblePair, pair2: AdmissiblePair,
            f1: Driver, f2: Driver, tree: ScenarioTree, tol: float = 1e-12) -> bool:
    """Whether Y2 <= Y1 everywhere, after checking the ordering hypotheses."""
    if not (pair2.xi.le(pair1.xi) and pair2.zeta.le(pair1.zeta)):
        raise PreconditionError("barriers are not ordered")
    if not (f1.has_royer and f2.has_royer):
        raise PreconditionError("both drivers need a comparison certificate")
    g1 = _frozen_driver(f1, sol2.y_cont, sol2.Z, sol2.k, tree)
    g2 = _frozen_driver(f2, sol2.y_cont, sol2.Z, sol2.k, tree)
    if np.any(g2 > g1 + 1e-12):
        raise PreconditionError("f2 exceeds f1 along the second solution")
    return sol2.Y.le(sol1.Y, tol)


@dataclass
class AprioriReport:
    lhs_at: np.ndarray
    rhs_at: np.ndarray
    lhs_right: np.ndarray
    rhs_right: np.ndarray
    violations: int
    worst_ratio: float

    @property
    def ok(self) -> bool:
        return self.violations == 0


def _paths(tree: ScenarioTree) -> np.ndarray:
    """(leaves, depth + 1) array of node ids from root to each leaf."""
    P = np.empty((tree.n_nodes - tree.n_inner, tree.depth + 1), dtype=np.int64)
    P[:, -1] = tree.leaves()
    for c in range(tree.depth - 1, -1, -1):
        P[:, c] = tree.parent[P[:, c + 1]]
    return P


def _cond_leaf_mean(tree: ScenarioTree, per_leaf_by_level: np.ndarray, pp: np.ndarray) -> np.ndarray:
    """out[u] = E[g(leaf, level(u)) | u] with g given as (leaves, depth + 1)."""
    out = np.empty(tree.n_nodes)
    pl = pp[tree.n_inner :]
    D = tree.depth
    for L in range(D + 1):
        s = tree.level_slice(L)
        m = s.stop - s.start
        w = (pl * per_leaf_by_level[:, L]).reshape(m, -1).sum(axis=1)
        out[s] = w / pp[s]
    return out


def apriori_check(sol1: DRBSDESolution, sol2: DRBSDESolution, pair1: AdmissiblePair, pair2: AdmissiblePair,
                  f1: Driver, f2: Driver, tree: ScenarioTree, beta: float, eta: float, C: float,
                  rtol: float = 1e-8) -> AprioriReport:
    """Evaluate both sides of the a priori estimate at every instant and interval start."""
    if eta <= 0 or beta <= 0:
        raise PreconditionError("beta and eta must be positive")
    if beta < 3.0 / eta + 2.0 * C - 1e-12 or (C > 0 and eta > 1.0 / C**2 + 1e-12):
        raise PreconditionError("need beta >= 3/eta + 2C and eta <= 1/C^2")
    D = tree.depth
    ni = tree.n_inner
    P = _paths(tree)
    pp = tree.path_probabilities()
    dxi = pair1.xi - pair2.xi
    dze = pair1.zeta - pair2.zeta

    def suffix_max(proc: LadlagProcess):
        sq_at = proc.at**2
        sq_r = proc.right**2
        suf_at = np.empty(P.shape)  # sup over [t_L, T]
        suf_r = np.empty(P.shape)  # sup over (t_L, T]
        suf_at[:, D] = sq_at[P[:, D]]
        suf_r[:, D] = -np.inf
        for L in range(D - 1, -1, -1):
            suf_r[:, L] = np.maximum(sq_r[P[:, L]], suf_at[:, L + 1])
            suf_at[:, L] = np.maximum(sq_at[P[:, L]], suf_r[:, L])
        return suf_at, suf_r

    xa, xr = suffix_max(dxi)
    za, zr = suffix_max(dze)
    g1 = _frozen_driver(f1, sol2.y_cont, sol2.Z, sol2.k, tree)
    g2 = _frozen_driver(f2, sol2.y_cont, sol2.Z, sol2.k, tree)
    df2 = (g2 - g1) ** 2
    eb = np.exp(beta * (tree.times - tree.times[0]))
    seg = (eb[1:] - eb[:-1]) / beta  # integral of e^{beta s} over each step, times e^{-beta t_0}
    suf_int = np.zeros(P.shape)
    for L in range(D - 1, -1, -1):
        suf_int[:, L] = suf_int[:, L + 1] + df2[P[:, L]] * seg[L]
    t_rel = tree.times[tree.level] - tree.times[0]
    T_rel = tree.times[-1] - tree.times[0]
    growth = np.exp(beta * (T_rel - t_rel))
    disc = np.exp(-beta * t_rel)
    integral = _cond_leaf_mean(tree, suf_int, pp) * disc
    rhs_at = growth * _cond_leaf_mean(tree, xa + za, pp) + eta * integral
    zr_fin = np.where(np.isfinite(zr), zr, 0.0)
    xr_fin = np.where(np.isfinite(xr), xr, 0.0)
    rhs_right = (growth * _cond_leaf_mean(tree, xr_fin + zr_fin, pp) + eta * integral)[:ni]
    lhs_at = (sol1.Y.at - sol2.Y.at) ** 2
    lhs_right = (sol1.Y.right - sol2.Y.right) ** 2
    bad_at = lhs_at > rhs_at * (1 + rtol) + 1e-300
    bad_r = lhs_right > rhs_right * (1 + rtol) + 1e-300
    with np.errstate(divide="ignore", invalid="ignore"):
        ratios = np.concatenate([lhs_at / rhs_at, lhs_right / rhs_right])
    ratios = ratios[np.isfinite(ratios)]
    return AprioriReport(lhs_at, rhs_at, lhs_right, rhs_right, int(bad_at.sum() + bad_r.sum()),
                         float(ratios.max()) if ratios.size else 0.0)


def apriori_parameters(C: float) -> tuple[float, float]:
    """(beta, eta) at the boundary of the admissible region: eta = 1/C^2, beta = 3/eta + 2C."""
    C = C if C > 0 else 1.0
    eta = 1.0 / C**2
    return 3.0 / eta + 2.0 * C, eta


__all__ = [
    "AprioriReport",
    "DRBSDESolution",
    "PicardTrace",
    "PreconditionError",
    "VerificationReport",
    "apriori_check",
    "apriori_parameters",
    "compare",
    "driver_expectation",
    "picard_iterate",
    "solve_direct",
    "solve_fixed_point",
    "solve_picard_driver_process",
    "verify_solution",
]
