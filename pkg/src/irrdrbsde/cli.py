"""Command-line entry point: solve, game, price, ref, verify, fuzz.

Exit status: 0 when every check passes, 2 on an invariant violation,
1 on usage or configuration errors.
"""

from __future__ import annotations

import argparse
import csv
import json
import re
import sys
import warnings
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import dynkin, generators, pricing
from .bsde import ConvergenceError, DriverError
from .drbsde import (
    DRBSDESolution,
    solve_direct,
    solve_fixed_point,
    solve_picard_driver_process,
    verify_solution,
)
from .process import AdmissiblePair, LadlagProcess, ProcessError, regularity
from .rbsde import ref_operator
from .tree import ScenarioTree, TimeGrid, TreeError, build_tree

EXIT_OK, EXIT_CONFIG, EXIT_VIOLATION = 0, 1, 2
VERIFY_TOL = 1e-10
AGREE_TOL = 1e-9
GAME_TOL = 1e-10


class ConfigError(Exception):
    def __init__(self, msg: str, line: int | None = None):
        super().__init__(f"line {line}: {msg}" if line is not None else msg)
        self.line = line


# -- scenario loading ------------------------------------------------------------

class Scenario:
    """Parsed scenario file with line lookup for error messages."""

    def __init__(self, text: str, source: str = "<scenario>"):
        self.text = text
        self.source = source
        try:
            self.data = json.loads(text)
        except json.JSONDecodeError as e:
            raise ConfigError(f"invalid JSON: {e.msg}", e.lineno) from None
        if not isinstance(self.data, dict):
            raise ConfigError("top level must be an object", 1)

    @classmethod
    def load(cls, path: str | Path) -> "Scenario":
        try:
            return cls(Path(path).read_text(), str(path))
        except OSError as e:
            raise ConfigError(f"cannot read scenario: {e}") from None

    def line_of(self, *keys) -> int:
        """Line of the last key in ``keys``, searching each after the previous one."""
        pos = 0
        for k in keys:
            m = re.compile(r'"%s"\s*:' % re.escape(str(k))).search(self.text, pos)
            if m is None:
                break
            pos = m.start()
        return self.text.count("\n", 0, pos) + 1

    def fail(self, msg: str, *keys):
        raise ConfigError(msg, self.line_of(*keys) if keys else 1)

    def get(self, *keys, required=True, default=None):
        cur = self.data
        for i, k in enumerate(keys):
            if not isinstance(cur, dict) or k not in cur:
                if required:
                    self.fail(f"missing key {'.'.join(keys[: i + 1])!r}", *keys[:i])
                return default
            cur = cur[k]
        return cur


def _floats(sc: Scenario, value, n: int, *keys) -> np.ndarray:
    try:
        a = np.asarray(value, dtype=float)
    except (TypeError, ValueError):
        sc.fail(f"{'.'.join(keys)} must be a list of numbers", *keys)
    if a.shape != (n,):
        sc.fail(f"{'.'.join(keys)} needs {n} values, got {a.size}", *keys)
    if not np.all(np.isfinite(a)):
        sc.fail(f"{'.'.join(keys)} contains non-finite values", *keys)
    return a


def tree_from(sc: Scenario) -> ScenarioTree:
    spec = sc.get("tree")
    if not isinstance(spec, dict):
        sc.fail("tree must be an object", "tree")
    try:
        if "times" in spec:
            grid = TimeGrid(np.asarray(spec["times"], dtype=float))
        elif "steps" in spec:
            grid = TimeGrid.uniform(float(spec.get("T", 1.0)), int(spec["steps"]))
        else:
            sc.fail("tree needs 'times' or 'steps'", "tree")
        return build_tree(grid, lam=float(spec.get("lam", 0.0)), scheme=str(spec.get("scheme", "three")))
    except (TreeError, ValueError, TypeError) as e:
        if isinstance(e, ConfigError):
            raise
        sc.fail(f"bad tree: {e}", "tree")


def _ladlag(sc: Scenario, tree: ScenarioTree, name: str) -> LadlagProcess:
    spec = sc.get("barriers", name)
    if not isinstance(spec, dict):
        sc.fail(f"barriers.{name} must be an object", "barriers", name)
    at = _floats(sc, sc.get("barriers", name, "at"), tree.n_nodes, "barriers", name, "at")
    right = _floats(sc, sc.get("barriers", name, "right"), tree.n_inner, "barriers", name, "right")
    return LadlagProcess(at, right)


def market_from(sc: Scenario, tree: ScenarioTree) -> pricing.MarketModel:
    params = sc.get("market", required=False, default={}) or {}
    try:
        return pricing.build_market(params, tree)
    except pricing.MarketError as e:
        sc.fail(f"bad market: {e}", "market")


def pair_from(sc: Scenario, tree: ScenarioTree, model=None) -> AdmissiblePair:
    b = sc.get("barriers")
    if not isinstance(b, dict):
        sc.fail("barriers must be an object", "barriers")
    if "builder" in b:
        model = model or market_from(sc, tree)
        try:
            return pricing.payoff_builders(str(b["builder"]), b.get("params", {}), model)
        except pricing.MarketError as e:
            sc.fail(str(e), "barriers", "builder")
    pair = AdmissiblePair(_ladlag(sc, tree, "xi"), _ladlag(sc, tree, "zeta"))
    try:
        pair.check(tree)
    except ProcessError as e:
        sc.fail(str(e), "barriers")
    return pair


def driver_from(sc: Scenario, tree: ScenarioTree, model=None):
    spec = sc.get("driver", required=False, default={"name": "zero"})
    if not isinstance(spec, dict):
        sc.fail("driver must be an object", "driver")
    try:
        if spec.get("market") and model is not None:
            return model.driver(spec.get("name", "perfect"), **spec.get("params", {}))
        return generators.driver_from_spec(spec, tree)
    except (DriverError, ValueError) as e:
        sc.fail(f"bad driver: {e}", "driver")


def theta_from(arg: str | None, sc: Scenario, tree: ScenarioTree):
    spec = arg if arg is not None else sc.get("game", "theta", required=False)
    if spec is None or spec in ("0", "root", "none"):
        return None
    m = re.fullmatch(r"(?:level:)?(\d+)", str(spec))
    if not m:
        raise ConfigError(f"bad theta {spec!r}; use 'level:<l>'", sc.line_of("game", "theta"))
    lv = int(m.group(1))
    if lv > tree.depth:
        raise ConfigError(f"theta level {lv} beyond depth {tree.depth}", sc.line_of("game", "theta"))
    return dynkin.StoppingTime.constant(tree, lv)


# -- emission --------------------------------------------------------------------

def _num(x):
    x = float(x)
    return repr(x) if np.isfinite(x) else ("nan" if np.isnan(x) else ("inf" if x > 0 else "-inf"))


def write_csv(path: Path, header: list, cols: list):
    n = len(cols[0])
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for i in range(n):
            w.writerow([c[i] if isinstance(c[i], (str, int, np.integer)) else _num(c[i]) for c in cols])


def _jsonable(x):
    if isinstance(x, dict):
        return {str(k): _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, np.ndarray):
        return [_jsonable(v) for v in x.tolist()]
    if isinstance(x, (bool, np.bool_)):
        return bool(x)
    if isinstance(x, (int, np.integer)):
        return int(x)
    if isinstance(x, (float, np.floating)):
        x = float(x)
        return x if np.isfinite(x) else str(x)
    return x


def write_json(path: Path, obj):
    path.write_text(json.dumps(_jsonable(obj), indent=2, sort_keys=True) + "\n")


def _pad(a: np.ndarray, n: int) -> np.ndarray:
    out = np.full(n, np.nan)
    out[: a.size] = a
    return out


SOLUTION_HEADER = ["node", "level", "time", "Y_at", "Y_right", "y_cont", "Z", "k", "h_inc",
                   "A_inc", "Ap_inc", "C_jump", "Cp_jump"]


def solution_columns(sol: DRBSDESolution, tree: ScenarioTree) -> list:
    n = tree.n_nodes
    return [np.arange(n), tree.level, tree.times[tree.level], sol.Y.at, _pad(sol.Y.right, n),
            _pad(sol.y_cont, n), _pad(sol.Z, n), _pad(sol.k, n), sol.h_inc, sol.A_inc, sol.Ap_inc,
            _pad(sol.C_jump, n), _pad(sol.Cp_jump, n)]


def read_solution(path: Path, tree: ScenarioTree) -> DRBSDESolution:
    with path.open() as fh:
        rows = list(csv.reader(fh))
    if not rows or rows[0] != SOLUTION_HEADER:
        raise ConfigError(f"{path}: unexpected header", 1)
    if len(rows) - 1 != tree.n_nodes:
        raise ConfigError(f"{path}: expected {tree.n_nodes} rows, got {len(rows) - 1}", 1)
    data = {}
    for j, h in enumerate(SOLUTION_HEADER):
        try:
            data[h] = np.array([float(r[j]) for r in rows[1:]])
        except (ValueError, IndexError):
            raise ConfigError(f"{path}: bad value in column {h!r}", 1) from None
    ni = tree.n_inner
    return DRBSDESolution(
        LadlagProcess(data["Y_at"], data["Y_right"][:ni]), data["Z"][:ni], data["k"][:ni], data["h_inc"],
        data["A_inc"], data["Ap_inc"], data["C_jump"][:ni], data["Cp_jump"][:ni], data["y_cont"][:ni],
        {"solver": "csv"},
    )


# -- commands --------------------------------------------------------------------

def _out(args) -> Path:
    p = Path(args.out)
    p.mkdir(parents=True, exist_ok=True)
    return p


def cmd_solve(args) -> int:
    sc = Scenario.load(args.scenario)
    tree = tree_from(sc)
    pair = pair_from(sc, tree)
    f = driver_from(sc, tree)
    sol = solve_direct(pair, f, tree)
    rep = verify_solution(sol, pair, f, tree)
    out = _out(args)
    write_csv(out / "solution.csv", SOLUTION_HEADER, solution_columns(sol, tree))
    ok = rep.ok(VERIFY_TOL)
    write_json(out / "report.json", {"Y0": sol.Y0, "ok": ok, "violations": rep.violations,
                                     "n_nodes": tree.n_nodes, "driver": f.name})
    print(f"Y0 = {sol.Y0!r}  verification {'ok' if ok else 'FAILED'}")
    return EXIT_OK if ok else EXIT_VIOLATION


def cmd_verify(args) -> int:
    sc = Scenario.load(args.scenario)
    tree = tree_from(sc)
    pair = pair_from(sc, tree)
    f = driver_from(sc, tree)
    src = Path(args.solution) if args.solution else Path(args.out) / "solution.csv"
    sol = read_solution(src, tree)
    rep = verify_solution(sol, pair, f, tree)
    ok = rep.ok(VERIFY_TOL)
    write_json(_out(args) / "verify.json", {"ok": ok, "violations": rep.violations, "source": str(src)})
    print(f"verification {'ok' if ok else 'FAILED'}")
    return EXIT_OK if ok else EXIT_VIOLATION


def cmd_ref(args) -> int:
    sc = Scenario.load(args.scenario)
    tree = tree_from(sc)
    if "barriers" in sc.data and "xi" in sc.data["barriers"]:
        xi = _ladlag(sc, tree, "xi")
    else:
        xi = pair_from(sc, tree).xi
    rs = ref_operator(xi, tree)
    n = tree.n_nodes
    out = _out(args)
    write_csv(out / "ref.csv", ["node", "level", "X_at", "X_right", "A_inc", "C_jump"],
              [np.arange(n), tree.level, rs.X.at, _pad(rs.X.right, n), rs.A_inc, _pad(rs.C_jump, n)])
    write_json(out / "ref.json", {"X0": float(rs.X.at[0])})
    print(f"X0 = {float(rs.X.at[0])!r}")
    return EXIT_OK


def cmd_game(args) -> int:
    sc = Scenario.load(args.scenario)
    tree = tree_from(sc)
    pair = pair_from(sc, tree)
    f = driver_from(sc, tree)
    systems = bool(args.systems or sc.get("game", "systems", required=False, default=False))
    tie = str(sc.get("game", "tie_rule", required=False, default=dynkin.LITERAL))
    eps = args.epsilon if args.epsilon is not None else sc.get("game", "epsilon", required=False)
    theta = theta_from(args.theta, sc, tree)
    try:
        g = dynkin.game_values(pair, f, tree, theta=theta, systems=systems, tie_rule=tie)
    except dynkin.EnumerationError as e:
        raise ConfigError(str(e), sc.line_of("tree")) from None
    sol = solve_direct(pair, f, tree)
    nodes = dynkin.theta_nodes(tree, theta)
    fx, fz = regularity(pair.xi, tree), regularity(pair.zeta, tree)
    literal_safe = bool(np.all(pair.xi.right <= pair.zeta.at[: tree.n_inner]))
    # the value must coincide with Y whenever the theory says so
    expect_eq = (systems and (tie == dynkin.INSTANT_FIRST or literal_safe)) or (fx.right_usc and fz.right_lsc)
    gap = float(np.max(np.abs(g.upper[nodes] - sol.Y.at[nodes]))) if nodes.size else 0.0
    report = {
        "systems": systems, "tie_rule": tie, "theta_nodes": nodes, "upper": g.upper[nodes],
        "lower": g.lower[nodes], "has_value": g.has_value, "Y_at_theta": sol.Y.at[nodes],
        "value_matches_Y": gap <= GAME_TOL, "expected_match": expect_eq, "strategy_counts": g.counts,
    }
    if nodes.size == 1:
        report["value"] = float(g.upper[nodes[0]]) if g.has_value else None
    ok = (not expect_eq) or (g.has_value and gap <= GAME_TOL)
    if eps is not None:
        eps = float(eps)
        try:
            if systems:
                srep = dynkin.system_epsilon_saddle(pair, f, tree, eps, theta, sol, tie_rule=tie)
            else:
                srep = dynkin.epsilon_saddle(pair, f, tree, eps, theta, sol)
            report["epsilon_saddle"] = {"epsilon": eps, "L": srep.L, "lower_violation": srep.lower_violation,
                                        "upper_violation": srep.upper_violation, "holds": srep.holds(GAME_TOL)}
            ok = ok and srep.holds(GAME_TOL)
        except dynkin.RegularityError as e:
            report["epsilon_saddle"] = {"skipped": str(e)}
    out = _out(args)
    write_json(out / "game.json", report)
    with (out / "matrix.csv").open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["theta_node", "maximizer", "minimizer", "value"])
        for u, M in sorted(g.matrices.items()):
            for i in range(M.shape[0]):
                for j in range(M.shape[1]):
                    w.writerow([u, i, j, _num(M[i, j])])
    if nodes.size == 1:
        print(f"upper = {float(g.upper[nodes[0]])!r}  lower = {float(g.lower[nodes[0]])!r}")
    return EXIT_OK if ok else EXIT_VIOLATION


def cmd_price(args) -> int:
    sc = Scenario.load(args.scenario)
    tree = tree_from(sc)
    model = market_from(sc, tree)
    pair = pair_from(sc, tree, model)
    dspec = sc.get("driver", required=False, default={"name": "perfect", "market": True})
    if "market" not in dspec and dspec.get("name") in ("perfect", "two_rates", "repo"):
        dspec = {**dspec, "market": True}
    f = model.driver(dspec.get("name", "perfect"), **dspec.get("params", {})) if dspec.get("market") \
        else driver_from(sc, tree)
    strict = bool(sc.get("pricing", "strict", required=False, default=True))
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        res = pricing.price_game_option(pair, model, f, tree, strict=strict)
    report = {"u0": res.u0, "flags": res.flags, "notes": res.notes + [str(w.message) for w in caught
                                                                       if str(w.message) not in res.notes]}
    ok = True
    out = _out(args)
    cols = [np.arange(tree.n_nodes), tree.level, model.S1, model.S2]
    header = ["node", "level", "S1", "S2"]
    if res.plan_star is not None:
        for plan in (res.plan_star, res.plan_bar):
            v = pricing.superhedge_verify(plan, pair, model, f, tree)
            report[plan.label] = {"superhedge": v.ok, "worst_exercise": v.worst_exercise,
                                  "worst_cancel": v.worst_cancel}
            ok = ok and v.ok
            cols += [v.wealth, plan.sigma.stop.astype(int)]
            header += [f"wealth_{plan.label}", f"stop_{plan.label}"]
        n = tree.n_nodes
        cols += [_pad(res.plan_star.phi[:, 0], n), _pad(res.plan_star.phi[:, 1], n)]
        header += ["phi1", "phi2"]
    write_json(out / "price.json", report)
    write_csv(out / "hedge.csv", header, cols)
    print(f"u0 = {res.u0!r}")
    return EXIT_OK if ok else EXIT_VIOLATION


# -- fuzz ------------------------------------------------------------------------

FUZZ_KINDS = ("irregular", "right_regular", "left_regular", "right_continuous")


def instance_for(seed: int, i: int) -> generators.Instance:
    rng = np.random.default_rng([seed, i])
    kind = FUZZ_KINDS[i % len(FUZZ_KINDS)]
    return generators.random_instance(rng, kind=kind, max_depth=4)


def check_instance(inst: generators.Instance) -> dict:
    """Run the invariant suite; returns {check: violation} (<= 0 means pass)."""
    tree, pair, f = inst.tree, inst.pair, inst.driver
    out = {}
    sol = solve_direct(pair, f, tree)
    out["verify"] = verify_solution(sol, pair, f, tree).worst - VERIFY_TOL
    fp = solve_fixed_point(pair, f, tree)
    out["fixed_point"] = max(fp.Y.max_abs_diff(sol.Y), 0.0) - AGREE_TOL
    if f.is_process:
        pc = solve_picard_driver_process(pair, f, tree)
        out["picard"] = pc.Y.max_abs_diff(sol.Y) - AGREE_TOL
    fx, fz = regularity(pair.xi, tree), regularity(pair.zeta, tree)
    if fx.right_continuous and fz.right_continuous:
        out["no_right_jumps"] = float(max(np.max(sol.C_jump, initial=0.0), np.max(sol.Cp_jump, initial=0.0)))
    if tree.n_nodes <= dynkin.NODE_CAP and tree.depth >= 1:
        gs = dynkin.game_values(pair, f, tree, systems=True, keep_matrices=False)
        out["system_game"] = max(abs(gs.upper0 - sol.Y0), abs(gs.lower0 - sol.Y0)) - GAME_TOL
        if fx.right_usc and fz.right_lsc:
            g = dynkin.game_values(pair, f, tree, keep_matrices=False)
            out["game"] = max(abs(g.upper0 - sol.Y0), abs(g.lower0 - sol.Y0)) - GAME_TOL
    return {k: float(v) for k, v in out.items()}


def _summary(i: int, inst: generators.Instance, checks: dict | None, error: str | None) -> dict:
    return {"index": i, "kind": inst.kind, "depth": inst.tree.depth, "lam": inst.tree.lam,
            "driver": inst.driver_spec.get("name", "process"), "checks": checks, "error": error}


def run_one(seed: int, i: int) -> dict:
    inst = instance_for(seed, i)
    try:
        checks = check_instance(inst)
        return _summary(i, inst, checks, None)
    except (ConvergenceError, DriverError, ProcessError, ValueError) as e:
        return _summary(i, inst, None, f"{type(e).__name__}: {e}")


def failed(summary: dict) -> bool:
    return summary["error"] is not None or any(v > 0 for v in summary["checks"].values())


def truncate(inst: generators.Instance, depth: int) -> generators.Instance:
    """Keep the first ``depth`` steps; the new leaves get xi.at on both barriers."""
    tree = inst.tree
    small = build_tree(TimeGrid(tree.times[: depth + 1]), lam=tree.lam, scheme=tree.scheme)
    n, ni = small.n_nodes, small.n_inner
    xa = inst.pair.xi.at[:n].copy()
    za = inst.pair.zeta.at[:n].copy()
    za[ni:] = xa[ni:]
    pair = AdmissiblePair(LadlagProcess(xa, inst.pair.xi.right[:ni].copy()),
                          LadlagProcess(za, inst.pair.zeta.right[:ni].copy()))
    spec = dict(inst.driver_spec)
    if "process" in spec:
        spec["process"] = list(spec["process"][:ni])
    return generators.Instance(small, pair, spec, inst.kind)


def minimize(inst: generators.Instance, still_fails) -> generators.Instance:
    """Shrink depth first, then pull right slots onto at slots one node at a time."""
    cur = inst
    for d in range(1, inst.tree.depth):
        cand = truncate(inst, d)
        if still_fails(cand):
            cur = cand
            break
    ni = cur.tree.n_inner
    for which in ("xi", "zeta"):
        for u in range(ni):
            xi, zeta = cur.pair.xi, cur.pair.zeta
            proc = xi if which == "xi" else zeta
            if proc.right[u] == proc.at[u]:
                continue
            r = proc.right.copy()
            r[u] = proc.at[u]
            new = LadlagProcess(proc.at, r)
            pair = AdmissiblePair(new, zeta) if which == "xi" else AdmissiblePair(xi, new)
            try:
                pair.check(cur.tree)
            except ProcessError:
                continue
            cand = generators.Instance(cur.tree, pair, cur.driver_spec, cur.kind)
            if still_fails(cand):
                cur = cand
    return cur


def _instance_fails(inst: generators.Instance) -> bool:
    try:
        return any(v > 0 for v in check_instance(inst).values())
    except (ConvergenceError, DriverError, ProcessError, ValueError):
        return True


def cmd_fuzz(args) -> int:
    seed, n = int(args.seed), int(args.n)
    if n < 0:
        raise ConfigError("--n must be nonnegative")
    out = _out(args)
    jobs = max(1, int(args.jobs))
    if jobs == 1:
        results = [run_one(seed, i) for i in range(n)]
    else:
        with ProcessPoolExecutor(max_workers=jobs) as ex:
            results = list(ex.map(run_one, [seed] * n, range(n), chunksize=max(1, n // (4 * jobs))))
    bad = [r for r in results if failed(r)]
    report = {"seed": seed, "n": n, "failures": len(bad), "instances": results}
    if bad:
        first = bad[0]
        inst = minimize(instance_for(seed, first["index"]), _instance_fails)
        repro = out / "repro.json"
        repro.write_text(json.dumps(_jsonable({**inst.to_scenario(), "seed": seed, "index": first["index"]}),
                                    indent=2, sort_keys=True) + "\n")
        report["repro"] = str(repro.name)
        report["first_failure"] = first
    write_json(out / "fuzz_report.json", report)
    print(f"fuzz: {n} instances, {len(bad)} failures")
    return EXIT_VIOLATION if bad else EXIT_OK


# -- entry -----------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="irrdrbsde", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, scenario=True):
        if scenario:
            sp.add_argument("--scenario", required=True, help="JSON scenario file")
        sp.add_argument("--out", default="out", help="output directory")
        return sp

    common(sub.add_parser("solve", help="solve the DRBSDE and verify it"))
    v = common(sub.add_parser("verify", help="re-verify an emitted solution table"))
    v.add_argument("--solution", help="solution CSV (default: <out>/solution.csv)")
    common(sub.add_parser("ref", help="reflected solution below the lower barrier only"))
    g = common(sub.add_parser("game", help="brute-force Dynkin game values"))
    g.add_argument("--systems", action="store_true", help="play over stopping systems")
    g.add_argument("--epsilon", type=float, help="also check the epsilon-saddle inequalities")
    g.add_argument("--theta", help="start time: 'level:<l>'")
    common(sub.add_parser("price", help="game-option price, hedge and superhedge check"))
    fz = common(sub.add_parser("fuzz", help="seeded random invariant suite"), scenario=False)
    fz.add_argument("--seed", type=int, default=0)
    fz.add_argument("--n", type=int, default=100)
    fz.add_argument("--jobs", type=int, default=1)
    return p


COMMANDS = {"solve": cmd_solve, "verify": cmd_verify, "ref": cmd_ref, "game": cmd_game,
            "price": cmd_price, "fuzz": cmd_fuzz}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return EXIT_CONFIG if e.code not in (0, None) else EXIT_OK
    try:
        return COMMANDS[args.command](args)
    except ConfigError as e:
        src = getattr(args, "scenario", None) or ""
        print(f"{src}:{e}" if src else str(e), file=sys.stderr)
        return EXIT_CONFIG
    except (ProcessError, DriverError, ConvergenceError, pricing.MarketError, dynkin.RegularityError) as e:
        print(f"error in {args.command}: {type(e).__name__}: {e}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
