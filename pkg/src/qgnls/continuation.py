"""Natural-parameter continuation of vertex-system solutions.

A parameter is named by a string: ``"rho"``, ``"mu"``, ``"length:<edge id>"``
or ``"scale"`` (all bounded edge lengths multiplied by one factor, relative to
the graph the branch starts on).
"""

from __future__ import annotations

import csv
import io
import logging
import math
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import ComputationFailed, LeftDomain, MinStepReached, PreconditionError
from .graph import MetricGraph
from .system import (
    CandidateSolution,
    ProblemParams,
    SolutionReport,
    newton_solve,
    star_seed,
    verify,
)

log = logging.getLogger(__name__)

MIN_STEP = 1e-8
GROWTH = 1.5
GROW_AFTER = 3
JUMP_FACTOR = 10.0


@dataclass
class BranchPoint:
    param: float
    solution: CandidateSolution
    report: SolutionReport


@dataclass
class Branch:
    parameter: str
    points: list = field(default_factory=list)
    folds: list = field(default_factory=list)

    @property
    def params(self) -> np.ndarray:
        return np.array([pt.param for pt in self.points])

    @property
    def lams(self) -> np.ndarray:
        return np.array([pt.solution.lam for pt in self.points])

    @property
    def last(self) -> BranchPoint:
        return self.points[-1]

    def __len__(self):
        return len(self.points)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        verts = self.points[0].solution.graph.vertices if self.points else ()
        w.writerow(["param", "lambda", "mass", "energy", "residual"] + [f"U[{v}]" for v in verts])
        for pt in self.points:
            r = pt.report
            w.writerow([repr(pt.param), repr(pt.solution.lam), repr(r.mass), repr(r.energy),
                        repr(r.residual_norm)] + [repr(float(u)) for u in pt.solution.U])
        return buf.getvalue()


def _parse(name: str, graph: MetricGraph):
    if name in ("rho", "mu", "scale"):
        return name, None
    if name.startswith("length:"):
        eid = name.split(":", 1)[1]
        e = graph.edge(eid)
        if e.is_halfline:
            raise PreconditionError(f"edge {eid!r} is a half-line; its length cannot vary")
        return "length", eid
    raise PreconditionError(f"unknown continuation parameter {name!r}")


def parameter_value(name: str, graph: MetricGraph, params: ProblemParams) -> float:
    kind, eid = _parse(name, graph)
    if kind == "rho":
        return params.rho
    if kind == "mu":
        return params.mu
    if kind == "scale":
        return 1.0
    return graph.edge(eid).length


def _scaled(graph: MetricGraph, factor: float) -> MetricGraph:
    g = graph
    for e in graph.bounded:
        g = g.with_edge_length(e.id, e.length * factor)
    return g


def _problem_at(name, base_graph, base_params, value):
    kind, eid = _parse(name, base_graph)
    if kind == "rho":
        return base_graph, replace(base_params, rho=value)
    if kind == "mu":
        return base_graph, replace(base_params, mu=value)
    if kind == "scale":
        if not value > 0:
            raise LeftDomain(f"scale factor {value} is not positive")
        return _scaled(base_graph, value), base_params
    if not value > 0:
        raise LeftDomain(f"edge length {value} is not positive")
    return base_graph.with_edge_length(eid, value), base_params


def _rebase(c: CandidateSolution, graph, params):
    return CandidateSolution(graph, params, c.U, c.lam, meta=dict(c.meta))


def continue_branch(graph: MetricGraph, params: ProblemParams, start: CandidateSolution,
                    target: float, max_steps: int = 1000, parameter: str = "rho",
                    tol: float = 1e-10) -> Branch:
    """Follow the solution ``start`` from its parameter value to ``target``.

    Secant predictor in the parameter, Newton corrector, adaptive step.
    Raises :class:`MinStepReached` (carrying the partial branch) when the step
    collapses below ``1e-8`` and :class:`PreconditionError` if ``start`` does
    not verify.
    """
    p0 = parameter_value(parameter, graph, params)
    rep = verify(_rebase(start, graph, params), tol=tol)
    if not rep.is_solution:
        raise PreconditionError("start point does not verify at its parameter value",
                                notes=list(rep.notes))
    start = _rebase(start, graph, params)
    branch = Branch(parameter, [BranchPoint(p0, start, rep)])
    if target == p0:
        return branch
    direction = math.copysign(1.0, target - p0)
    step = abs(target - p0) / 50.0
    successes = 0
    cur = p0
    for _ in range(max_steps):
        if cur == target:
            break
        nxt = cur + direction * step
        if direction * (nxt - target) > 0 or abs(target - nxt) < 1e-12 * max(1.0, abs(target)):
            nxt = target
        h = nxt - cur
        last = branch.last.solution
        if len(branch) >= 2:
            prev = branch.points[-2]
            dp = cur - prev.param
            slope = (last.x - prev.solution.x) / dp
            pred = last.x + slope * h
        else:
            slope = None
            pred = last.x
        n = last.U.size
        try:
            g, pr = _problem_at(parameter, graph, params, nxt)
            seed = CandidateSolution(g, pr, pred[:n], pred[n])
            if not g.is_compact and seed.lam <= 0:
                seed = CandidateSolution(g, pr, last.U, last.lam)
            sol = newton_solve(g, pr, seed, tol=tol)
            r = verify(sol, tol=tol)
            if not r.is_solution:
                raise ComputationFailed("corrected point does not verify")
            jump = np.max(np.abs(sol.U - last.U))
            if slope is not None:
                bound = JUMP_FACTOR * abs(h) * max(np.max(np.abs(slope[:n])), 1e-3)
                if jump > bound:
                    raise ComputationFailed(f"branch jump {jump:.3e} exceeds {bound:.3e}")
        except ComputationFailed as exc:
            log.debug("corrector failed at %s=%r: %s", parameter, nxt, exc)
            step *= 0.5
            successes = 0
            if step < MIN_STEP:
                branch.folds = detect_fold(branch)
                raise MinStepReached(f"step below {MIN_STEP} at {parameter}={cur!r}",
                                     branch=branch, last_param=cur) from exc
            continue
        branch.points.append(BranchPoint(nxt, sol, r))
        cur = nxt
        successes += 1
        if successes >= GROW_AFTER:
            step *= GROWTH
            successes = 0
    else:
        if cur != target:
            branch.folds = detect_fold(branch)
            raise MinStepReached(f"max_steps={max_steps} exhausted at {parameter}={cur!r}",
                                 branch=branch, last_param=cur)
    branch.folds = detect_fold(branch)
    return branch


def detect_fold(branch) -> list:
    """Fold markers where the parameter increment changes sign.

    Accepts a :class:`Branch` or a plain sequence of parameter values. Each
    marker is ``{"index", "bracket": (p_before, p_turn, p_after)}``.
    """
    ps = branch.params if isinstance(branch, Branch) else np.asarray(branch, dtype=float)
    if len(ps) < 3:
        return []
    d = np.diff(ps)
    folds = []
    for k in range(1, len(d)):
        if d[k - 1] * d[k] < 0:
            folds.append({"index": k, "bracket": (float(ps[k - 1]), float(ps[k]), float(ps[k + 1]))})
    return folds


def solve_by_stretching(graph: MetricGraph, params: ProblemParams, v: str,
                        tol: float = 1e-10, decay: float = 30.0) -> CandidateSolution:
    """Solve from the star seed at ``v`` on a stretched copy of ``graph`` and
    shrink the bounded edges back to their true lengths.

    The stretch makes every bounded edge long compared with the decay length
    ``1/sqrt(lam_seed)``, where the star seed is accurate.
    """
    if not graph.bounded:
        return newton_solve(graph, params, star_seed(graph, v, params), tol=tol)
    seed = star_seed(graph, v, params)
    shortest = min(e.length for e in graph.bounded)
    factor = max(1.0, decay / (math.sqrt(seed.lam) * shortest))
    stretched = _scaled(graph, factor)
    sol = newton_solve(stretched, params, star_seed(stretched, v, params), tol=tol)
    br = continue_branch(stretched, params, sol, 1.0 / factor, parameter="scale", tol=tol)
    end = br.last.solution
    return newton_solve(graph, params, CandidateSolution(graph, params, end.U, end.lam), tol=tol)
