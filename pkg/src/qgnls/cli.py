"""Command-line front end.

Every command writes ``<out>/<command>.json`` (inputs echoed, results, and a
single volatile ``timestamp`` entry) plus CSV data where it applies. Exit
status: 0 success, 2 computation failed or did not certify, 3 invalid input.
"""

from __future__ import annotations

import argparse
import logging
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import combinatorial as cb
from . import graph as gr
from . import io as qio
from . import lab
from .continuation import continue_branch
from .errors import Diverging, InvalidInput, MinStepReached, QGError
from .field import discretize, energy, make_mesh
from .system import ProblemParams, multi_seed, newton_solve, star_seed, verify

log = logging.getLogger("qgnls")

BUILTINS = {
    "star": lambda arg: gr.star(int(arg or 2)),
    "tadpole": lambda arg: gr.tadpole(float(arg or 1.0)),
    "two-hub": lambda arg: gr.two_hub(float(arg or 1.0)),
    "pendant-star": lambda arg: gr.pendant_star(float(arg or 1.0)),
    "dumbbell": lambda arg: gr.dumbbell(float(arg or 1.0)),
}


class UsageError(InvalidInput):
    code = "UsageError"


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(3, f"{self.prog}: error: {message}\n")


def resolve_graph(source: str):
    """A graph file path, or ``builtin:<name>[:<arg>]`` for the standard graphs."""
    if source.startswith("builtin:"):
        _, name, *rest = source.split(":")
        if name not in BUILTINS:
            raise UsageError(f"unknown builtin graph {name!r}; choose from {sorted(BUILTINS)}")
        return BUILTINS[name](rest[0] if rest else None)
    return gr.load_graph(source)


def _params(a) -> ProblemParams:
    if a.p is None:
        raise UsageError("--p is required")
    return ProblemParams(a.p, a.rho, a.mu)


def _verified_or_fail(c, tol):
    rep = verify(c, tol=tol)
    return rep, (0 if rep.is_solution else 2)


def cmd_solve(a, out):
    g = resolve_graph(a.graph)
    params = _params(a)
    if a.seed_file:
        seed = qio.load_state(a.seed_file)
        seed = seed.__class__(g, params, seed.U, seed.lam)
    else:
        v = a.seed_vertex or next((w for w in g.vertices if g.defect(w) == gr.DELTA), None)
        if v is None:
            raise UsageError("graph has no delta vertex to seed at")
        if v not in g.index:
            raise UsageError(f"unknown seed vertex {v!r}")
        seed = star_seed(g, v, params)
    sol = newton_solve(g, params, seed, tol=a.tol, max_iter=a.max_iter)
    rep, status = _verified_or_fail(sol, a.tol)
    result = {"report": rep, "iterations": sol.meta.get("iterations")}
    if status == 0:
        result["state"] = qio.state_to_dict(sol)
        (out / "solution.json").write_text(qio.dumps(qio.state_to_dict(sol)))
        (out / "profile.csv").write_text(qio.profile_csv(sol, a.spacing))
    return result, status


def cmd_verify(a, out):
    c = qio.load_state(a.state)
    rep, status = _verified_or_fail(c, a.tol)
    return {"state": qio.state_to_dict(c), "report": rep}, status


def cmd_export_profile(a, out):
    c = qio.load_state(a.state)
    rep, status = _verified_or_fail(c, a.tol)
    if status == 0:
        (out / "profile.csv").write_text(qio.profile_csv(c, a.spacing))
    return {"report": rep, "csv": "profile.csv" if status == 0 else None}, status


def cmd_continue(a, out):
    c = qio.load_state(a.state)
    try:
        br = continue_branch(c.graph, c.params, c, a.target, max_steps=a.max_steps,
                             parameter=a.param, tol=a.tol)
        status, err = 0, None
    except MinStepReached as exc:
        br, status, err = exc.branch, 2, {"code": exc.code, "message": str(exc)}
    (out / "branch.csv").write_text(br.to_csv())
    end = br.last
    result = {"parameter": a.param, "target": a.target, "points": len(br), "folds": br.folds,
              "end": {"param": end.param, "state": qio.state_to_dict(end.solution),
                      "report": end.report}}
    if err:
        result["error"] = err
    return result, status


def cmd_multi_seed(a, out):
    g = resolve_graph(a.graph)
    params = _params(a)
    sols, failures = multi_seed(g, params, tol=a.tol)
    items = []
    for k, (s, r) in enumerate(sols):
        (out / f"solution_{k}.json").write_text(qio.dumps(qio.state_to_dict(s)))
        items.append({"seed": s.meta.get("seed"), "state": qio.state_to_dict(s), "report": r})
    return {"solutions": items, "failures": failures, "count": len(items)}, (0 if items else 2)


def cmd_morse(a, out):
    c = qio.load_state(a.state)
    reps = [lab.second_variation(c, a.h, th) for th in a.theta]
    return {"spectra": reps}, 0


def cmd_mp_geom(a, out):
    g = resolve_graph(a.graph)
    params = _params(a)
    r = lab.mp_geometry(g, params.p, params.mu, params.rho, h=a.h, samples=a.samples)
    return {"geometry": r}, (0 if r.passed else 2)


def _gn_chunk(mesh, p, n, seed):
    rng = np.random.default_rng(seed)
    V = rng.standard_normal((n, mesh.n_nodes)) * rng.uniform(0.1, 10.0, (n, 1))
    return lab.gn_ratios(mesh, V, p)


def cmd_gn_suite(a, out):
    g = resolve_graph(a.graph)
    if a.p is None:
        raise UsageError("--p is required")
    mesh = make_mesh(g, a.h, L=a.L)
    chunks = [a.trials // a.workers + (1 if k < a.trials % a.workers else 0) for k in range(a.workers)]
    seeds = np.random.SeedSequence(a.rng_seed).spawn(a.workers)
    with ThreadPoolExecutor(max_workers=a.workers) as pool:
        parts = list(pool.map(lambda args: _gn_chunk(mesh, a.p, *args), zip(chunks, seeds)))
    ratios = np.concatenate(parts)
    bad = int(np.sum(ratios > 1))
    return {"trials": int(ratios.size), "max_ratio": float(ratios.max()), "violations": bad,
            "C": lab.gn_constant(g, a.p), "nodes": mesh.n_nodes}, (0 if bad == 0 else 2)


def cmd_flow(a, out):
    g = resolve_graph(a.graph)
    params = _params(a)
    if a.init_state:
        c = qio.load_state(a.init_state)
        f0 = discretize(c, a.h)
        f0 = f0.with_values(f0.values * np.sqrt(params.mu / f0.mass()))
    else:
        v = a.vertex or g.vertices[0]
        f0 = lab.tent(g, v, mu=params.mu, t=a.t, h=a.h, L=a.L)
    e0 = energy(f0, params.p, params.rho)
    try:
        f = lab.gradient_flow(g, params, f0, steps=a.steps)
        outcome = "converged"
        e = energy(f, params.p, params.rho)
        hist = f.meta["history"]
    except Diverging as exc:
        f, outcome = exc.field, "diverging"
        e, hist = exc.field.meta["energy"], exc.history
    (out / "field.csv").write_text(f.to_csv())
    return {"outcome": outcome, "initial_energy": e0, "final_energy": e, "steps": len(hist) - 1,
            "mass": f.mass(), "lambda_estimate": f.meta.get("lam")}, 0


def cmd_discrete_solve(a, out):
    g = resolve_graph(a.graph)
    if a.p is None:
        raise UsageError("--p is required")
    core = gr.compact_core(g)
    vals = np.zeros(len(core.vertices))
    free = [v for v in core.vertices if v not in core.boundary]
    targets = [a.seed_vertex] if a.seed_vertex else free
    for v in targets:
        if v not in core.index:
            raise UsageError(f"unknown seed vertex {v!r}")
        vals[core.index[v]] = a.seed_value
    seed = cb.CombinatorialField(core, vals)
    f = cb.solve_discrete(core, a.p, a.rho, seed, tol=a.tol)
    lifted = cb.lift(core, f, g)
    res = lifted.vertex_residual(a.p, a.rho)[f.free_mask]
    (out / "field.csv").write_text(f.to_csv())
    return {"values": dict(zip(core.vertices, f.values)), "pinned": sorted(f.pinned),
            "residual": f.meta["residual"], "energy": f.meta["energy"],
            "S_empirical": f.meta.get("S_empirical"),
            "lifted_kinetic": lifted.kinetic(), "seminorm_squared": cb.seminorm(core, f) ** 2,
            "lifted_vertex_residual": float(np.max(np.abs(res)))}, 0


def cmd_lattice_demo(a, out):
    f = cb.lattice_demo(a.N, a.p, a.R, rho=a.rho, tol=a.tol)
    (out / "lattice.csv").write_text(f.to_csv())
    m = f.meta
    ok = m["positive"] and m["residual"] <= a.tol and m["symmetry_error"] <= 1e-8
    return {"N": a.N, "p": a.p, "R": a.R, "vertices": m["n_vertices"], "seed_value": m["seed_value"],
            "origin_value": f.value(",".join(["0"] * a.N)), "residual": m["residual"],
            "energy": m["energy"], "positive": m["positive"],
            "symmetry_error": m["symmetry_error"]}, (0 if ok else 2)


COMMANDS = {
    "solve": cmd_solve,
    "verify": cmd_verify,
    "continue": cmd_continue,
    "morse": cmd_morse,
    "mp-geom": cmd_mp_geom,
    "gn-suite": cmd_gn_suite,
    "flow": cmd_flow,
    "discrete-solve": cmd_discrete_solve,
    "lattice-demo": cmd_lattice_demo,
    "export-profile": cmd_export_profile,
    "multi-seed": cmd_multi_seed,
}


def build_parser() -> argparse.ArgumentParser:
    ap = _Parser(prog="qgnls", description="Normalized solutions on metric graphs with "
                                           "nonlinear point defects.")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(sp, graph=True, params=True):
        sp.add_argument("--out", default="qgnls-out", help="output directory")
        sp.add_argument("--tol", type=float, default=1e-10)
        sp.add_argument("--rng-seed", type=int, default=0)
        if graph:
            sp.add_argument("--graph", required=True,
                            help="graph JSON file, or builtin:<star|tadpole|two-hub|pendant-star|dumbbell>[:arg]")
        if params:
            sp.add_argument("--p", type=float)
            sp.add_argument("--rho", type=float, default=1.0)
            sp.add_argument("--mu", type=float, default=1.0)

    s = sub.add_parser("solve", help="Newton solve from a star seed")
    common(s)
    s.add_argument("--seed-vertex")
    s.add_argument("--seed-file", help="state JSON used as the initial guess")
    s.add_argument("--max-iter", type=int, default=50)
    s.add_argument("--spacing", type=float, default=0.01)

    s = sub.add_parser("verify", help="certify a state file")
    common(s, graph=False, params=False)
    s.add_argument("--state", required=True)

    s = sub.add_parser("export-profile", help="write the sampled profile of a state")
    common(s, graph=False, params=False)
    s.add_argument("--state", required=True)
    s.add_argument("--spacing", type=float, default=0.01)

    s = sub.add_parser("continue", help="follow a solution in rho, mu or an edge length")
    common(s, graph=False, params=False)
    s.add_argument("--state", required=True)
    s.add_argument("--param", default="rho", help="rho, mu or length:<edge id>")
    s.add_argument("--target", type=float, required=True)
    s.add_argument("--max-steps", type=int, default=1000)

    s = sub.add_parser("multi-seed", help="star seeds at every delta vertex")
    common(s)

    s = sub.add_parser("morse", help="approximate Morse index of a state")
    common(s, graph=False, params=False)
    s.add_argument("--state", required=True)
    s.add_argument("--h", type=float, default=0.01)
    s.add_argument("--theta", type=float, nargs="+", default=[0.0])

    s = sub.add_parser("mp-geom", help="mountain-pass constants and path")
    common(s)
    s.add_argument("--h", type=float, default=0.005)
    s.add_argument("--samples", type=int, default=200)

    s = sub.add_parser("gn-suite", help="random-field Gagliardo-Nirenberg ratios")
    common(s)
    s.add_argument("--trials", type=int, default=10_000)
    s.add_argument("--workers", type=int, default=4)
    s.add_argument("--h", type=float, default=0.1)
    s.add_argument("--L", type=float, default=5.0)

    s = sub.add_parser("flow", help="projected gradient flow on the mass sphere")
    common(s)
    s.add_argument("--init-state", help="start from the interpolant of a state")
    s.add_argument("--vertex", help="tent vertex (default: first vertex)")
    s.add_argument("--t", type=float, default=1.0, help="tent dilation")
    s.add_argument("--h", type=float, default=0.01)
    s.add_argument("--L", type=float, default=None)
    s.add_argument("--steps", type=int, default=2000)

    s = sub.add_parser("discrete-solve", help="vertex-only problem on the compact core")
    common(s)
    s.add_argument("--seed-vertex")
    s.add_argument("--seed-value", type=float, default=1.0)

    s = sub.add_parser("lattice-demo", help="solution on a truncated Z^N ball")
    common(s, graph=False, params=False)
    s.add_argument("--N", type=int, default=3)
    s.add_argument("--p", type=float, default=8.0)
    s.add_argument("--R", type=int, default=10)
    s.add_argument("--rho", type=float, default=1.0)
    return ap


def _echo(a) -> dict:
    return {k: v for k, v in sorted(vars(a).items()) if k not in ("out", "verbose")}


def run(argv=None) -> int:
    ap = build_parser()
    a = ap.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if a.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    out = Path(a.out)
    out.mkdir(parents=True, exist_ok=True)
    started = datetime.now(timezone.utc).isoformat()
    t0 = time.perf_counter()
    report = {"command": a.command, "inputs": _echo(a)}
    log.debug("running %s with %s", a.command, report["inputs"])
    try:
        result, status = COMMANDS[a.command](a, out)
        report["result"] = result
    except QGError as exc:
        status = exc.exit_status
        report["error"] = {"code": exc.code, "message": str(exc), "details": exc.details}
    except (ValueError, KeyError, OSError) as exc:
        status = 3
        report["error"] = {"code": "InvalidInput", "message": str(exc), "details": {}}
    report["status"] = status
    report["timestamp"] = {"started": started, "elapsed_s": time.perf_counter() - t0}
    path = out / f"{a.command}.json"
    path.write_text(qio.dumps(report))
    summary = report.get("error", {}).get("code", "ok")
    print(f"{a.command}: {summary} (exit {status}) -> {path}")
    return status


def main():
    sys.exit(run())


if __name__ == "__main__":
    main()
