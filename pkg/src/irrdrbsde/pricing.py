"""Game-option pricing in an imperfect market on a scenario tree.

Two risky assets follow exact multiplicative updates
``S_child = S (1 + mu dt + sigma dW + beta dN~)``. The seller's price is the
time-0 value of the doubly reflected BSDE with a market driver; the hedge
is read off the martingale integrands through phi' = (Z, k) Sigma^-1.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from .bsde import Driver, check_step, driver_library, first_stop_level
from .drbsde import DRBSDESolution, solve_direct
from .dynkin import StoppingTime, _first_increase, game_values
from .process import AdmissiblePair, LadlagProcess, regularity
from .tree import FOUR, ScenarioTree

SUPERHEDGE_TOL = 1e-9


class MarketError(ValueError):
    pass


class FourBranchWarning(UserWarning):
    """The market filtration is generated by W and N; Four-branch trees carry an extra orthogonal part."""


@dataclass(frozen=True, eq=False)
class MarketModel:
    tree: ScenarioTree
    r: float
    R: float
    mu: np.ndarray  # (2,)
    sigma: np.ndarray  # (2,)
    beta: np.ndarray  # (2,)
    b: np.ndarray  # repo rates for long positions
    l: np.ndarray  # repo rates for short positions
    Sigma: np.ndarray  # (n_inner, 2, 2), rows (sigma^i, beta^i)
    S0: np.ndarray
    S1: np.ndarray
    S2: np.ndarray
    params: dict = field(default_factory=dict)

    @property
    def invertible(self) -> bool:
        return _nonsingular(self.Sigma[0]) if self.Sigma.shape[0] else True

    @property
    def Sigma_inv(self) -> np.ndarray:
        if not self.invertible:
            raise MarketError("Sigma is singular; no portfolio can be read off (Z, k)")
        return np.linalg.inv(self.Sigma)

    def driver(self, kind: str = "perfect", **extra) -> Driver:
        """Market driver (perfect, two_rates or repo) with this model's coefficients."""
        p = {"r": self.r, "R": self.R, "mu": list(self.mu), "sigma": list(self.sigma),
             "beta": list(self.beta), "b": list(self.b), "l": list(self.l), "lam": self.tree.lam}
        p.update(extra)
        return driver_library(kind, p)


def _vec2(x, name):
    v = np.broadcast_to(np.asarray(x, dtype=float), (2,)).copy()
    if not np.all(np.isfinite(v)):
        raise MarketError(f"{name} must be finite")
    return v


def _nonsingular(M: np.ndarray) -> bool:
    return abs(np.linalg.det(M)) > 1e-12 * max(1.0, np.abs(M).max() ** 2)


def build_market(params: dict, tree: ScenarioTree, require_invertible: bool = True) -> MarketModel:
    """Forward-simulate S0, S1, S2 on every node.

    A singular volatility matrix is rejected unless ``require_invertible`` is
    False; such a model still prices with a caller-supplied driver but yields
    no hedge plan.
    """
    r = float(params.get("r", 0.0))
    R = float(params.get("R", r))
    mu = _vec2(params.get("mu", [r, r]), "mu")
    sigma = _vec2(params.get("sigma", [0.2, 0.1]), "sigma")
    beta = _vec2(params.get("beta", [0.0, 0.1]), "beta")
    if np.any(beta <= -1.0):
        raise MarketError("jump loadings must exceed -1")
    M = np.column_stack([sigma, beta])
    if require_invertible and not _nonsingular(M):
        raise MarketError("Sigma is singular")
    s_init = _vec2(params.get("S_init", [1.0, 1.0]), "S_init")
    s0_init = float(params.get("S0_init", 1.0))
    n = tree.n_nodes
    S0, S1, S2 = np.empty(n), np.empty(n), np.empty(n)
    S0[0], S1[0], S2[0] = s0_init, s_init[0], s_init[1]
    ntil = tree.dnt
    for l in range(1, tree.depth + 1):
        s = tree.level_slice(l)
        par = tree.parent[s]
        dt = tree.dt[l - 1]
        S0[s] = S0[par] * (1.0 + r * dt)
        S1[s] = S1[par] * (1.0 + mu[0] * dt + sigma[0] * tree.dw[s] + beta[0] * ntil[s])
        S2[s] = S2[par] * (1.0 + mu[1] * dt + sigma[1] * tree.dw[s] + beta[1] * ntil[s])
    if np.any(S1 <= 0) or np.any(S2 <= 0) or np.any(S0 <= 0):
        raise MarketError("non-positive prices produced; reduce the step or the loadings")
    Sig = np.broadcast_to(M, (tree.n_inner, 2, 2)).copy()
    return MarketModel(
        tree=tree, r=r, R=R, mu=mu, sigma=sigma, beta=beta,
        b=_vec2(params.get("b", [0.0, 0.0]), "b"), l=_vec2(params.get("l", [0.0, 0.0]), "l"),
        Sigma=Sig, S0=S0, S1=S1, S2=S2, params=dict(params),
    )


def wealth_forward(model: MarketModel | None, x: float, Z, k, f: Driver, tree: ScenarioTree) -> np.ndarray:
    """X(root) = x, X(child) = X - f(t, X, Z, k) dt + Z dW + k dN~."""
    check_step(tree, f)
    Z = np.asarray(Z, dtype=float)
    k = np.asarray(k, dtype=float)
    X = np.empty(tree.n_nodes)
    X[0] = x
    for l in range(tree.depth):
        s = tree.level_slice(l)
        cs = slice(tree.level_start[l + 1], tree.level_start[l + 2])
        fv = f(tree.times[l], X[s], Z[s], k[s], tree.origin[s])
        base = np.repeat(X[s] - fv * tree.dt[l], tree.b)
        par = tree.parent[cs]
        X[cs] = base + Z[par] * tree.dw[cs] + k[par] * tree.dnt[cs]
    return X


def portfolio(model: MarketModel, Z, k) -> np.ndarray:
    """phi per inner node, shape (n_inner, 2), from phi' = (Z, k) Sigma^-1."""
    zk = np.stack([np.asarray(Z, float), np.asarray(k, float)], axis=-1)
    return np.einsum("ni,nij->nj", zk, model.Sigma_inv)


@dataclass(frozen=True, eq=False)
class HedgePlan:
    x: float
    phi: np.ndarray  # (n_inner, 2) amounts invested in S1, S2
    Z: np.ndarray
    k: np.ndarray
    sigma: StoppingTime
    label: str = "sigma_star"

    def shifted(self, dx: float) -> "HedgePlan":
        return HedgePlan(self.x + dx, self.phi, self.Z, self.k, self.sigma, self.label)


@dataclass
class PriceResult:
    u0: float
    solution: DRBSDESolution
    plan_star: HedgePlan | None
    plan_bar: HedgePlan | None
    flags: dict
    notes: list


def price_game_option(pair: AdmissiblePair, model: MarketModel, f: Driver, tree: ScenarioTree | None = None,
                      strict: bool = True) -> PriceResult:
    """Seller's price u0 = Y0 and the hedges with cancellation at sigma* and sigma_bar.

    The plans need xi right-u.s.c. and zeta right-l.s.c.; with ``strict`` the
    grid left-l.s.c. flag of zeta is required as well.
    """
    tree = tree or model.tree
    notes = []
    if tree.scheme == FOUR and tree.lam > 0:
        msg = "Four-branch tree: the orthogonal martingale part is not hedgeable with (S1, S2)"
        warnings.warn(msg, FourBranchWarning, stacklevel=2)
        notes.append(msg)
    sol = solve_direct(pair, f, tree)
    fx, fz = regularity(pair.xi, tree), regularity(pair.zeta, tree)
    flags = {"xi_right_usc": fx.right_usc, "zeta_right_lsc": fz.right_lsc,
             "zeta_left_lsc": fz.left_lsc_along_st}
    ok = fx.right_usc and fz.right_lsc and (fz.left_lsc_along_st or not strict)
    plan_s = plan_b = None
    if ok and not model.invertible:
        notes.append("singular Sigma: price only, no hedge plan")
    elif ok:
        phi = portfolio(model, sol.Z, sol.k)
        Y = sol.Y.at
        scale = np.maximum(1.0, np.abs(Y))
        sig_s = StoppingTime.first_hit(tree, np.abs(Y - pair.zeta.at) <= 1e-12 * scale)
        sig_b = StoppingTime.first_hit(tree, _first_increase(tree, sol.Ap_inc, sol.Cp_jump))
        plan_s = HedgePlan(sol.Y0, phi, sol.Z, sol.k, sig_s, "sigma_star")
        plan_b = HedgePlan(sol.Y0, phi, sol.Z, sol.k, sig_b, "sigma_bar")
    else:
        notes.append("regularity flags unmet: price only, no hedge plan")
    return PriceResult(sol.Y0, sol, plan_s, plan_b, flags, notes)


@dataclass
class SuperhedgeReport:
    ok: bool
    worst_exercise: float  # max of xi - X over nodes up to sigma
    worst_cancel: float  # max of zeta - X at sigma
    failing_nodes: np.ndarray
    wealth: np.ndarray


def superhedge_verify(plan: HedgePlan, pair: AdmissiblePair, model: MarketModel | None, f: Driver,
                      tree: ScenarioTree, tol: float = SUPERHEDGE_TOL) -> SuperhedgeReport:
    """Forward wealth from plan.x must dominate xi up to sigma and zeta at sigma, on every path."""
    X = wealth_forward(model, plan.x, plan.Z, plan.k, f, tree)
    st = np.asarray(plan.sigma.stop, dtype=bool)
    fl = first_stop_level(tree, st)
    upto = tree.level <= fl  # nodes on [0, sigma]
    at_sig = st & (fl == tree.level)
    ex = np.where(upto, pair.xi.at - X, -np.inf)
    ca = np.where(at_sig, pair.zeta.at - X, -np.inf)
    bad = (ex > tol) | (ca > tol)
    return SuperhedgeReport(not bool(bad.any()), float(ex.max()), float(ca.max()), np.flatnonzero(bad), X)


# -- payoff builders -------------------------------------------------------------

def _running_min(tree: ScenarioTree, S: np.ndarray) -> np.ndarray:
    m = S.copy()
    for l in range(1, tree.depth + 1):
        s = tree.level_slice(l)
        m[s] = np.minimum(S[s], m[tree.parent[s]])
    return m


def _terminal_match(tree: ScenarioTree, xi: LadlagProcess, zeta_at: np.ndarray, zeta_r: np.ndarray) -> AdmissiblePair:
    za = zeta_at.copy()
    za[tree.n_inner :] = xi.at[tree.n_inner :]
    return AdmissiblePair(xi, LadlagProcess(za, zeta_r))


def payoff_builders(name: str, params: dict, model: MarketModel) -> AdmissiblePair:
    """``basket``: xi = g(S1) h(S2), zeta = delta g(S1), g a call on S1 and h = delta 1{S2 >= H}.

    ``barrier_call``: xi = (S1 - K)^+ 1{min S1 >= L} and zeta = (S1 - K)^+ + delta;
    with ``form="multiplicative"`` zeta = delta (S1 - K)^+ and delta >= 1.

    Right slots carry the value on the following interval; the indicators
    there use the strict inequality, which keeps xi right-u.s.c.
    """
    tree = model.tree
    ni = tree.n_inner
    S1, S2 = model.S1, model.S2
    if name == "basket":
        K = float(params.get("K", 1.0))
        delta = float(params.get("delta", 1.0))
        H = float(params.get("H", 1.0))
        if delta < 0:
            raise MarketError("delta must be nonnegative")
        g = np.maximum(S1 - K, 0.0)
        xi = LadlagProcess(g * delta * (S2 >= H), (g * delta * (S2 > H))[:ni])
        zeta = delta * g
        return _terminal_match(tree, xi, zeta, zeta[:ni].copy())
    if name == "barrier_call":
        K = float(params.get("K", 1.0))
        L = float(params.get("L", 0.5))
        delta = float(params.get("delta", 0.1))
        if not (K > L >= 0):
            raise MarketError("need K > L >= 0")
        if delta < 0:
            raise MarketError("delta must be nonnegative")
        form = str(params.get("form", "additive"))
        m = _running_min(tree, S1)
        g = np.maximum(S1 - K, 0.0)
        xi = LadlagProcess(g * (m >= L), (g * (m > L))[:ni])
        if form == "additive":
            zeta = g + delta
        elif form == "multiplicative":
            if delta < 1:
                raise MarketError("multiplicative penalty needs delta >= 1")
            zeta = delta * g
        else:
            raise MarketError(f"unknown penalty form {form!r}")
        return _terminal_match(tree, xi, zeta, zeta[:ni].copy())
    raise MarketError(f"unknown payoff builder {name!r}")


# -- perfect-market oracle -------------------------------------------------------

def risk_neutral_tree(model: MarketModel) -> ScenarioTree:
    """Tilt branch probabilities by theta = Sigma^-1 (mu - r 1) so discounted prices are martingales."""
    tree = model.tree
    M = np.column_stack([model.sigma, model.beta])
    if not _nonsingular(M):
        raise MarketError("Sigma is singular; the tilt is undefined")
    c = np.linalg.inv(M) @ (model.mu - model.r)
    new = np.empty_like(tree.pat_prob)
    for l in range(tree.depth):
        p, w = tree.pat_prob[l], tree.pat_dw[l]
        nt = tree.pat_dn[l] - tree.lam * tree.dt[l]
        dt = tree.dt[l]
        tilt = 1.0 - c[0] * dt * w / (p @ (w * w))
        en = p @ (nt * nt)
        if en > 0:
            tilt = tilt - c[1] * dt * nt / en
        new[l] = p * tilt
    if np.any(new <= 0):
        raise MarketError("risk-neutral probabilities are not positive; reduce the market price of risk")
    return tree.with_probabilities(new)


def perfect_market_oracle(pair: AdmissiblePair, model: MarketModel) -> tuple[float, float]:
    """Classical Dynkin (upper, lower) values under the tilted measure with f = -r y."""
    qt = risk_neutral_tree(model)
    disc = driver_library("linear", {"a": -model.r, "lam": qt.lam})
    g = game_values(pair, disc, qt, keep_matrices=False)
    return g.upper0, g.lower0


__all__ = [
    "FourBranchWarning",
    "HedgePlan",
    "MarketError",
    "MarketModel",
    "PriceResult",
    "SuperhedgeReport",
    "build_market",
    "payoff_builders",
    "perfect_market_oracle",
    "portfolio",
    "price_game_option",
    "risk_neutral_tree",
    "superhedge_verify",
    "wealth_forward",
]
