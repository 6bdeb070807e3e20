"""Stopping times, stopping systems and brute-force E^f Dynkin games.

Strategies are boolean node masks. A stopping time marks the first stopped
node on every path; a stopping system adds a flag ``H`` on those nodes:
True means "stop at the instant", False means "stop just after it".
Game values at a stopping time theta are computed separately on the
subtree below each node where theta stops.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .bsde import Driver, backward, effective_nodes, first_stop_level, stability_constant
from .drbsde import DRBSDESolution, solve_direct
from .process import AdmissiblePair, LadlagProcess, regularity
from .tree import ScenarioTree

NODE_CAP = 20
LITERAL = "literal"
INSTANT_FIRST = "instant_first"
_BATCH = 8192


class EnumerationError(ValueError):
    pass


class RegularityError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class StoppingTime:
    stop: np.ndarray

    def __post_init__(self):
        s = np.array(self.stop, dtype=bool)
        s.setflags(write=False)
        object.__setattr__(self, "stop", s)

    @classmethod
    def first_hit(cls, tree: ScenarioTree, cond, after=None) -> "StoppingTime":
        """First node (at or after ``after``) where ``cond`` holds; leaves always qualify."""
        c = np.array(cond, dtype=bool)
        c[tree.n_inner :] = True
        if after is not None:
            c &= reached(tree, after)
        return cls(effective_nodes(tree, c))

    @classmethod
    def constant(cls, tree: ScenarioTree, level: int) -> "StoppingTime":
        return cls(tree.level == level)

    def check(self, tree: ScenarioTree) -> "StoppingTime":
        if self.stop.shape != (tree.n_nodes,):
            raise ValueError("stopping time does not match the tree")
        if np.any(first_stop_level(tree, self.stop)[tree.leaves()] > tree.depth):
            raise ValueError("some path is never stopped")
        return self

    def nodes(self, tree: ScenarioTree) -> np.ndarray:
        return np.flatnonzero(effective_nodes(tree, self.stop))

    def le(self, other: "StoppingTime", tree: ScenarioTree) -> bool:
        """Pathwise self <= other."""
        lv = tree.leaves()
        return bool(np.all(first_stop_level(tree, self.stop)[lv] <= first_stop_level(tree, other.stop)[lv]))


@dataclass(frozen=True, eq=False)
class StoppingSystem:
    tau: StoppingTime
    H: np.ndarray

    def __post_init__(self):
        h = np.array(self.H, dtype=bool)
        h.setflags(write=False)
        object.__setattr__(self, "H", h)

    def check(self, tree: ScenarioTree) -> "StoppingSystem":
        self.tau.check(tree)
        eff = effective_nodes(tree, self.tau.stop)
        if np.any(eff[tree.n_inner :] & ~self.H[tree.n_inner :]):
            raise ValueError("H must contain every terminal stop")
        return self

    @classmethod
    def of_time(cls, tau: StoppingTime) -> "StoppingSystem":
        return cls(tau, np.ones(tau.stop.shape, dtype=bool))


def reached(tree: ScenarioTree, theta) -> np.ndarray:
    """Nodes at or after theta on their path."""
    if theta is None:
        return np.ones(tree.n_nodes, dtype=bool)
    st = np.asarray(getattr(theta, "stop", theta), dtype=bool)
    return first_stop_level(tree, st) <= tree.level


def _right_full(tree: ScenarioTree, phi: LadlagProcess) -> np.ndarray:
    return np.concatenate([phi.right, phi.at[tree.n_inner :]])


# -- payoffs -----------------------------------------------------------------------

def _payoff_arrays(tree, pair, rho_stop, rho_H, del_stop, del_H, tie_rule):
    xr = _right_full(tree, pair.xi)
    zr = _right_full(tree, pair.zeta)
    xpay = np.where(rho_H, pair.xi.at, xr)
    zpay = np.where(del_H, pair.zeta.at, zr)
    if tie_rule == LITERAL:
        take_x = rho_stop
    elif tie_rule == INSTANT_FIRST:
        take_x = rho_stop & (rho_H | ~(del_stop & del_H))
    else:
        raise ValueError(f"unknown tie rule {tie_rule!r}")
    return rho_stop | del_stop, np.where(take_x, xpay, zpay)


def _path_value(tree: ScenarioTree, stop, pay) -> np.ndarray:
    """Read ``pay`` at the first stopped node along each node's path."""
    eff = effective_nodes(tree, stop)
    out = np.full(tree.n_nodes, np.nan)
    out[eff] = pay[eff]
    for l in range(1, tree.depth + 1):
        s = tree.level_slice(l)
        inherit = ~np.isnan(out[tree.parent[s]])
        out[s] = np.where(inherit, out[tree.parent[s]], out[s])
    return out


def payoff_I(pair: AdmissiblePair, tau: StoppingTime, sigma: StoppingTime, tree: ScenarioTree) -> np.ndarray:
    """Per node: the payoff realized on its path (xi at tau if tau <= sigma, else zeta at sigma)."""
    stop, pay = _payoff_arrays(tree, pair, tau.stop, np.ones_like(tau.stop), sigma.stop,
                               np.ones_like(sigma.stop), LITERAL)
    return _path_value(tree, stop, pay)


def payoff_I_systems(pair: AdmissiblePair, rho: StoppingSystem, delta: StoppingSystem, tree: ScenarioTree,
                     tie_rule: str = LITERAL) -> np.ndarray:
    """Extended payoff: xi.at on H, xi.right off H; zeta symmetrically with G."""
    stop, pay = _payoff_arrays(tree, pair, rho.tau.stop, rho.H, delta.tau.stop, delta.H, tie_rule)
    return _path_value(tree, stop, pay)


# -- enumeration -------------------------------------------------------------------

def count_stopping(tree: ScenarioTree, systems: bool = False) -> int:
    """Closed-form count: S(leaf) = 1, S(node) = (2 if systems else 1) + prod S(children)."""
    own = 2 if systems else 1
    cnt = 1
    for _ in range(tree.depth):
        cnt = own + cnt**tree.b
    return cnt


def enumerate_masks(tree: ScenarioTree, systems: bool = False):
    """All stopping times (or systems) as (stop, H) boolean arrays of shape (M, n)."""
    if tree.n_nodes > NODE_CAP:
        raise EnumerationError(f"tree has {tree.n_nodes} nodes; enumeration is capped at {NODE_CAP}")
    n = tree.n_nodes

    def opts(u):
        rows_s, rows_h = [], []
        s = np.zeros(n, dtype=bool)
        s[u] = True
        rows_s.append(s)
        rows_h.append(s.copy())
        if tree.is_terminal(u):
            return np.array(rows_s), np.array(rows_h)
        if systems:
            rows_s.append(s.copy())
            rows_h.append(np.zeros(n, dtype=bool))
        acc_s = acc_h = None
        for c in tree.children(u):
            cs, ch = opts(int(c))
            if acc_s is None:
                acc_s, acc_h = cs, ch
            else:
                acc_s = (acc_s[:, None, :] | cs[None, :, :]).reshape(-1, n)
                acc_h = (acc_h[:, None, :] | ch[None, :, :]).reshape(-1, n)
        return np.vstack([np.array(rows_s), acc_s]), np.vstack([np.array(rows_h), acc_h])

    S, H = opts(0)
    # stopping times carry H on every node so the instant value is used
    if not systems:
        H = np.ones_like(S)
    return S, H


@dataclass
class Enumeration:
    items: list
    count: int


def enumerate_stopping(tree: ScenarioTree, systems: bool = False) -> Enumeration:
    S, H = enumerate_masks(tree, systems)
    if systems:
        items = [StoppingSystem(StoppingTime(s), h) for s, h in zip(S, H)]
    else:
        items = [StoppingTime(s) for s in S]
    return Enumeration(items, len(items))


# -- pair evaluation ---------------------------------------------------------------

def pair_values(tree: ScenarioTree, pair: AdmissiblePair, f: Driver, rho_stop, rho_H, del_stop, del_H,
                tie_rule: str = LITERAL) -> np.ndarray:
    """E^f at the root of ``tree`` for a batch of strategy pairs (rows)."""
    rho_stop, rho_H, del_stop, del_H = np.broadcast_arrays(rho_stop, rho_H, del_stop, del_H)
    P = rho_stop.shape[0]
    out = np.empty(P)
    for a in range(0, P, _BATCH):
        b = slice(a, a + _BATCH)
        stop, pay = _payoff_arrays(tree, pair, rho_stop[b], rho_H[b], del_stop[b], del_H[b], tie_rule)
        V, _, _, _ = backward(tree, f, pay, stop)
        out[b] = V[:, 0]
    return out


def payoff_matrix(tree: ScenarioTree, pair: AdmissiblePair, f: Driver, systems: bool,
                  tie_rule: str = LITERAL):
    """M[i, j] = E^f value when the maximizer plays i and the minimizer plays j."""
    S, H = enumerate_masks(tree, systems)
    m = S.shape[0]
    ii, jj = np.meshgrid(np.arange(m), np.arange(m), indexing="ij")
    ii, jj = ii.ravel(), jj.ravel()
    vals = pair_values(tree, pair, f, S[ii], H[ii], S[jj], H[jj], tie_rule)
    return vals.reshape(m, m), S, H


@dataclass
class GameReport:
    upper: np.ndarray  # per node, NaN off the theta frontier
    lower: np.ndarray
    has_value: bool
    systems: bool
    counts: dict
    matrices: dict = field(default_factory=dict)
    best: dict = field(default_factory=dict)

    @property
    def value(self) -> float:
        nodes = np.flatnonzero(~np.isnan(self.upper))
        if nodes.size != 1:
            raise ValueError("value is a random variable here; read `upper`/`lower`")
        return float(self.upper[nodes[0]])

    @property
    def upper0(self) -> float:
        return float(self.upper[~np.isnan(self.upper)][0])

    @property
    def lower0(self) -> float:
        return float(self.lower[~np.isnan(self.lower)][0])


def theta_nodes(tree: ScenarioTree, theta) -> np.ndarray:
    if theta is None:
        return np.array([0])
    st = np.asarray(getattr(theta, "stop", theta), dtype=bool)
    return np.flatnonzero(effective_nodes(tree, st))


def game_values(pair: AdmissiblePair, f: Driver, tree: ScenarioTree, theta=None, systems: bool = False,
                tie_rule: str = LITERAL, keep_matrices: bool = True) -> GameReport:
    """Upper and lower values by exhaustive enumeration on each subtree below theta."""
    pair.check(tree)
    up = np.full(tree.n_nodes, np.nan)
    lo = np.full(tree.n_nodes, np.nan)
    counts, mats, best = {}, {}, {}
    for u in theta_nodes(tree, theta):
        sub = tree.subtree(int(u))
        sp = pair.restrict(sub)
        if sub.depth == 0:
            up[u] = lo[u] = sp.xi.at[0]
            counts[int(u)] = 1
            continue
        M, S, H = payoff_matrix(sub, sp, f, systems, tie_rule)
        up[u] = M.max(axis=0).min()
        lo[u] = M.min(axis=1).max()
        counts[int(u)] = M.shape[0]
        best[int(u)] = {"maximizer": int(np.argmax(M.min(axis=1))), "minimizer": int(np.argmin(M.max(axis=0)))}
        if keep_matrices:
            mats[int(u)] = M
    has_value = bool(np.all(np.abs(up - lo)[~np.isnan(up)] <= 1e-12 * np.maximum(1.0, np.abs(up[~np.isnan(up)]))))
    return GameReport(up, lo, has_value, systems, counts, mats, best)


# -- saddle points ---------------------------------------------------------------

@dataclass
class SaddleReport:
    tau: object
    sigma: object
    L: float
    epsilon: float
    lower_violation: float  # max over opponents of E^f[I(tau, sigma_eps)] - L eps - Y
    upper_violation: float  # max over opponents of Y - E^f[I(tau_eps, sigma)] - L eps
    extra: dict = field(default_factory=dict)

    def holds(self, tol: float = 1e-10) -> bool:
        return self.lower_violation <= tol and self.upper_violation <= tol and all(
            v <= tol for v in self.extra.get("checks", {}).values()
        )


def _solution(pair, f, tree, sol):
    return sol if sol is not None else solve_direct(pair, f, tree)


def _against_opponents(pair, f, tree, theta, Y_at, my_stop, my_H, their_stop, their_H, systems, tie_rule, L_eps):
    """Worst-case violations of the two saddle inequalities on every theta subtree."""
    low_v = up_v = -np.inf
    for u in theta_nodes(tree, theta):
        sub = tree.subtree(int(u))
        if sub.depth == 0:
            low_v = max(low_v, 0.0)
            up_v = max(up_v, 0.0)
            continue
        sp = pair.restrict(sub)
        S, H = enumerate_masks(sub, systems)
        idx = sub.origin
        ts, th = my_stop[idx], my_H[idx]
        ss, sh = their_stop[idx], their_H[idx]
        y = Y_at[u]
        # opponents of the minimizer's strategy: every maximizer strategy
        v1 = pair_values(sub, sp, f, S, H, ss[None, :], sh[None, :], tie_rule)
        v2 = pair_values(sub, sp, f, ts[None, :], th[None, :], S, H, tie_rule)
        low_v = max(low_v, float(v1.max() - L_eps - y))
        up_v = max(up_v, float(y - v2.min() - L_eps))
    return low_v, up_v


def _L(f: Driver, tree: ScenarioTree) -> float:
    return stability_constant(f.K, tree.horizon)


def epsilon_saddle(pair: AdmissiblePair, f: Driver, tree: ScenarioTree, epsilon: float, theta=None,
                   sol: DRBSDESolution | None = None, verify: bool = True) -> SaddleReport:
    """tau_eps = first Y <= xi + eps, sigma_eps = first Y >= zeta - eps, checked against all opponents."""
    if epsilon <= 0:
        raise ValueError("epsilon must be positive")
    fx, fz = regularity(pair.xi, tree), regularity(pair.zeta, tree)
    if not (fx.right_usc and fz.right_lsc):
        raise RegularityError("needs xi right-u.s.c. and zeta right-l.s.c.; use system_epsilon_saddle")
    sol = _solution(pair, f, tree, sol)
    Y = sol.Y.at
    after = theta
    tau = StoppingTime.first_hit(tree, Y <= pair.xi.at + epsilon, after)
    sigma = StoppingTime.first_hit(tree, Y >= pair.zeta.at - epsilon, after)
    L = _L(f, tree)
    rep = SaddleReport(tau, sigma, L, epsilon, -np.inf, -np.inf)
    if verify:
        ones = np.ones(tree.n_nodes, dtype=bool)
        rep.lower_violation, rep.upper_violation = _against_opponents(
            pair, f, tree, theta, Y, tau.stop, ones, sigma.stop, ones, False, LITERAL, L * epsilon)
    return rep


def _first_increase(tree: ScenarioTree, a_inc: np.ndarray, c_jump: np.ndarray) -> np.ndarray:
    """Nodes whose following interval carries a predictable increase, or that carry a right jump."""
    cond = np.zeros(tree.n_nodes, dtype=bool)
    fc = tree.first_child(np.arange(tree.n_inner))
    cond[: tree.n_inner] = (a_inc[fc] > 0) | (c_jump > 0)
    return cond


def saddle_points(pair: AdmissiblePair, f: Driver, tree: ScenarioTree, theta=None,
                  sol: DRBSDESolution | None = None, verify: bool = True, tol: float = 1e-12):
    """(tau*, sigma*) and (tau_bar, sigma_bar) with exact saddle verification.

    Returns two SaddleReports; ``extra['checks']`` of the first holds the
    ordering tau* <= tau_bar, sigma* <= sigma_bar and the barrier contacts.
    """
    fx, fz = regularity(pair.xi, tree), regularity(pair.zeta, tree)
    if not (fx.right_usc and fx.left_usc_along_st and fz.right_lsc and fz.left_lsc_along_st):
        raise RegularityError("needs xi left- and right-u.s.c., zeta left- and right-l.s.c.")
    sol = _solution(pair, f, tree, sol)
    Y = sol.Y.at
    scale = np.maximum(1.0, np.abs(Y))
    tau_s = StoppingTime.first_hit(tree, np.abs(Y - pair.xi.at) <= tol * scale, theta)
    sig_s = StoppingTime.first_hit(tree, np.abs(Y - pair.zeta.at) <= tol * scale, theta)
    tau_b = StoppingTime.first_hit(tree, _first_increase(tree, sol.A_inc, sol.C_jump), theta)
    sig_b = StoppingTime.first_hit(tree, _first_increase(tree, sol.Ap_inc, sol.Cp_jump), theta)
    L = _L(f, tree)
    star = SaddleReport(tau_s, sig_s, L, 0.0, -np.inf, -np.inf)
    bar = SaddleReport(tau_b, sig_b, L, 0.0, -np.inf, -np.inf)
    checks = {
        "tau_star_le_tau_bar": 0.0 if tau_s.le(tau_b, tree) else 1.0,
        "sigma_star_le_sigma_bar": 0.0 if sig_s.le(sig_b, tree) else 1.0,
    }
    for name, st, bar_ in (("Y_eq_xi_at_tau", tau_s, pair.xi.at), ("Y_eq_zeta_at_sigma", sig_s, pair.zeta.at),
                           ("Y_eq_xi_at_tau_bar", tau_b, pair.xi.at), ("Y_eq_zeta_at_sigma_bar", sig_b, pair.zeta.at)):
        nd = st.nodes(tree)
        checks[name] = float(np.max(np.abs(Y[nd] - bar_[nd]), initial=0.0))
    star.extra["checks"] = checks
    if verify:
        ones = np.ones(tree.n_nodes, dtype=bool)
        for rep in (star, bar):
            rep.lower_violation, rep.upper_violation = _against_opponents(
                pair, f, tree, theta, Y, rep.tau.stop, ones, rep.sigma.stop, ones, False, LITERAL, 0.0)
    return star, bar


def system_epsilon_saddle(pair: AdmissiblePair, f: Driver, tree: ScenarioTree, epsilon: float, theta=None,
                          sol: DRBSDESolution | None = None, verify: bool = True,
                          tie_rule: str = LITERAL) -> SaddleReport:
    """rho_eps = (tau_eps, H_eps), delta_eps = (sigma_eps, G_eps) over instants and intervals."""
    if epsilon <= 0:
        raise ValueError("epsilon must be positive")
    pair.check(tree)
    sol = _solution(pair, f, tree, sol)
    ni = tree.n_inner
    Y = sol.Y
    at_x = Y.at <= pair.xi.at + epsilon
    at_z = Y.at >= pair.zeta.at - epsilon
    r_x = np.zeros(tree.n_nodes, dtype=bool)
    r_z = np.zeros(tree.n_nodes, dtype=bool)
    r_x[:ni] = Y.right <= pair.xi.right + epsilon
    r_z[:ni] = Y.right >= pair.zeta.right - epsilon
    tau = StoppingTime.first_hit(tree, at_x | r_x, theta)
    sig = StoppingTime.first_hit(tree, at_z | r_z, theta)
    at_x[ni:] = at_z[ni:] = True
    rho = StoppingSystem(tau, at_x)
    delta = StoppingSystem(sig, at_z)
    L = _L(f, tree)
    rep = SaddleReport(rho, delta, L, epsilon, -np.inf, -np.inf)
    # the stopped value of Y against the regularized barrier values
    yr, xr, zr = _right_full(tree, Y), _right_full(tree, pair.xi), _right_full(tree, pair.zeta)
    nt, ns = tau.nodes(tree), sig.nodes(tree)
    y_rho = np.where(at_x[nt], Y.at[nt], yr[nt])
    x_u = np.where(at_x[nt], pair.xi.at[nt], xr[nt])
    y_del = np.where(at_z[ns], Y.at[ns], yr[ns])
    z_l = np.where(at_z[ns], pair.zeta.at[ns], zr[ns])
    rep.extra["checks"] = {
        "Y_rho_le_xi_u_plus_eps": float(np.max(y_rho - x_u - epsilon, initial=-np.inf)) if nt.size else 0.0,
        "Y_delta_ge_zeta_l_minus_eps": float(np.max(z_l - epsilon - y_del, initial=-np.inf)) if ns.size else 0.0,
    }
    rep.extra["checks"] = {k: max(v, 0.0) for k, v in rep.extra["checks"].items()}
    if verify:
        rep.lower_violation, rep.upper_violation = _against_opponents(
            pair, f, tree, theta, Y.at, tau.stop, at_x, sig.stop, at_z, True, tie_rule, L * epsilon)
    return rep


def ef_martingale_checks(pair: AdmissiblePair, f: Driver, tree: ScenarioTree, epsilon: float, theta=None,
                         sol: DRBSDESolution | None = None) -> tuple[float, float]:
    """Worst violations of: E^f[Y_s] >= Y_theta for s <= tau_eps, and <= Y_theta for s <= sigma_eps."""
    sol = _solution(pair, f, tree, sol)
    rep = epsilon_saddle(pair, f, tree, epsilon, theta, sol, verify=False)
    sub_v = super_v = 0.0
    for u in theta_nodes(tree, theta):
        sub = tree.subtree(int(u))
        if sub.depth == 0:
            continue
        S, _ = enumerate_masks(sub, False)
        lv = sub.leaves()
        fl = np.array([first_stop_level(sub, s)[lv] for s in S])
        y = sol.Y.at[sub.origin]
        for bound, sign in ((rep.tau, 1.0), (rep.sigma, -1.0)):
            bl = first_stop_level(sub, bound.stop[sub.origin])[lv]
            ok = np.all(fl <= bl[None, :], axis=1)
            Ss = S[ok]
            V, _, _, _ = backward(sub, f, np.broadcast_to(y, Ss.shape).copy(), Ss)
            gap = sign * (y[0] - V[:, 0])
            if sign > 0:
                sub_v = max(sub_v, float(gap.max(initial=0.0)))
            else:
                super_v = max(super_v, float(gap.max(initial=0.0)))
    return sub_v, super_v


__all__ = [
    "EnumerationError",
    "GameReport",
    "INSTANT_FIRST",
    "LITERAL",
    "RegularityError",
    "SaddleReport",
    "StoppingSystem",
    "StoppingTime",
    "count_stopping",
    "ef_martingale_checks",
    "enumerate_masks",
    "enumerate_stopping",
    "epsilon_saddle",
    "game_values",
    "pair_values",
    "payoff_I",
    "payoff_I_systems",
    "payoff_matrix",
    "reached",
    "saddle_points",
    "system_epsilon_saddle",
]
