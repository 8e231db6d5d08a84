"""Vertex-only counterpart of the problem at ``lam = 0``.

With ``lam = 0`` every edge profile is affine, so a metric solution that
vanishes on the half-lines is determined by its vertex values ``f``, which
solve ``-Delta_d f = rho |f|^{p-2} f`` on the free vertices of the compact
core, with ``Delta_d f(v) = sum_{w~v} (f(w) - f(v)) / l_vw``.
"""

from __future__ import annotations

import csv
import io
import itertools
import math
import threading
from dataclasses import dataclass, field

import numpy as np
import scipy.optimize as so
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import (
    ExponentOutOfRange,
    MaxIterExceeded,
    NonzeroLambda,
    PreconditionError,
    SingularJacobian,
)
from .graph import CompactCore, Edge, MetricGraph, compact_core

RESIDUAL_TOL = 1e-10
TIKHONOV = 1e-12


@dataclass
class CombinatorialField:
    core: CompactCore
    values: np.ndarray
    pinned: frozenset | None = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        v = np.array(self.values, dtype=float).reshape(-1)
        if v.shape != (len(self.core.vertices),):
            raise ValueError(f"{v.size} values for {len(self.core.vertices)} vertices")
        if self.pinned is None:
            self.pinned = frozenset(self.core.boundary)
        idx = [self.core.index[w] for w in self.pinned]
        if np.any(v[idx] != 0):
            raise PreconditionError("pinned vertices must carry the value 0")
        self.values = v

    @property
    def free_mask(self) -> np.ndarray:
        m = np.ones(len(self.core.vertices), dtype=bool)
        m[[self.core.index[w] for w in self.pinned]] = False
        return m

    def value(self, v: str) -> float:
        return float(self.values[self.core.index[v]])

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        coords = self.meta.get("coords")
        if coords is not None:
            n = len(coords[0])
            w.writerow(["vertex"] + [f"x{i}" for i in range(n)] + ["value"])
            for v, x, f in zip(self.core.vertices, coords, self.values):
                w.writerow([v, *x, repr(float(f))])
        else:
            w.writerow(["vertex", "value"])
            for v, f in zip(self.core.vertices, self.values):
                w.writerow([v, repr(float(f))])
        return buf.getvalue()


def core_from_edges(vertices, edges, boundary=()) -> CompactCore:
    """Compact core from ``(start, end, length)`` triples (ids are assigned)."""
    es = tuple(Edge(f"e{k}", a, b, float(l)) for k, (a, b, l) in enumerate(edges))
    return CompactCore(tuple(vertices), es, frozenset(boundary))


def laplacian_matrix(core: CompactCore) -> sp.csr_matrix:
    n = len(core.vertices)
    rows, cols, vals = [], [], []
    for e in core.edges:
        if e.is_loop:
            continue
        i, j, w = core.index[e.start], core.index[e.end], 1.0 / e.length
        rows += [i, j, i, j]
        cols += [j, i, i, j]
        vals += [w, w, -w, -w]
    return sp.coo_matrix((vals, (rows, cols)), shape=(n, n)).tocsr()


def laplacian(core: CompactCore, f: CombinatorialField) -> CombinatorialField:
    """``Delta_d f``; the result carries no pinned set."""
    return CombinatorialField(core, laplacian_matrix(core) @ f.values, frozenset())


def seminorm(core: CompactCore, f) -> float:
    vals = f.values if isinstance(f, CombinatorialField) else np.asarray(f, dtype=float)
    s = 0.0
    for e in core.edges:
        if e.is_loop:
            continue
        d = vals[core.index[e.end]] - vals[core.index[e.start]]
        s += d * d / e.length
    return math.sqrt(s)


def discrete_energy(core: CompactCore, f: CombinatorialField, p: float, rho: float) -> float:
    return 0.5 * seminorm(core, f) ** 2 - rho / p * float(np.sum(np.abs(f.values) ** p))


@dataclass
class MetricField:
    """Piecewise-affine function on a metric graph (the ``lam = 0`` profiles)."""

    graph: MetricGraph
    U: np.ndarray
    lam: float = 0.0

    def edge_profile(self, edge_id: str):
        e = self.graph.edge(edge_id)
        u0 = self.U[self.graph.index[e.start]]
        if e.is_halfline:
            return lambda x: np.zeros_like(np.asarray(x, dtype=float))
        ul = self.U[self.graph.index[e.end]]
        return lambda x: (ul - u0) / e.length * np.asarray(x, dtype=float) + u0

    def kinetic(self) -> float:
        k = 0.0
        for e in self.graph.bounded:
            d = self.U[self.graph.index[e.end]] - self.U[self.graph.index[e.start]]
            k += d * d / e.length
        return k

    def mass(self) -> float:
        m = 0.0
        for e in self.graph.bounded:
            a, b = self.U[self.graph.index[e.start]], self.U[self.graph.index[e.end]]
            m += e.length * (a * a + a * b + b * b) / 3.0
        return m

    def vertex_residual(self, p: float, rho: float) -> np.ndarray:
        """Sum of outgoing derivatives plus the defect term, per vertex."""
        g = self.graph
        r = np.zeros(g.n_vertices)
        for e in g.bounded:
            i, j = g.index[e.start], g.index[e.end]
            slope = (self.U[j] - self.U[i]) / e.length
            r[i] += slope
            r[j] -= slope
        r += np.where(g.defect_mask, rho * np.abs(self.U) ** (p - 2) * self.U, 0.0)
        return r


def restrict(c, core: CompactCore | None = None) -> CombinatorialField:
    """Vertex values of a ``lam = 0`` state that vanishes on the half-lines."""
    if c.lam != 0:
        raise NonzeroLambda(f"restrict needs lam = 0, got {c.lam}")
    core = core or compact_core(c.graph)
    U = np.asarray(c.U, dtype=float)
    return CombinatorialField(core, U.copy())


def lift(core: CompactCore, f: CombinatorialField, graph: MetricGraph | None = None) -> MetricField:
    """Affine extension over the bounded edges, zero on the half-lines of ``graph``."""
    g = graph or core.to_graph()
    if tuple(g.vertices) != tuple(core.vertices):
        raise PreconditionError("graph and core have different vertex sets")
    bad = [v for v in g.vertices if f.value(v) != 0 and any(e.is_halfline for e, _ in g.incident(v))]
    if bad:
        raise PreconditionError(f"nonzero values at half-line vertices {bad}")
    return MetricField(g, f.values.copy())


class SLedger:
    """Running supremum of discrete solution energies per ``(p, core)``."""

    def __init__(self):
        self._sup = {}
        self._lock = threading.Lock()

    @staticmethod
    def key(p: float, core: CompactCore):
        return (float(p), core.vertices, tuple((e.start, e.end, e.length) for e in core.edges),
                tuple(sorted(core.boundary)))

    def record(self, p: float, core: CompactCore, energy: float) -> float:
        k = self.key(p, core)
        with self._lock:
            self._sup[k] = max(self._sup.get(k, -math.inf), energy)
            return self._sup[k]

    def sup(self, p: float, core: CompactCore) -> float:
        return self._sup.get(self.key(p, core), -math.inf)


S_LEDGER = SLedger()


def solve_discrete(core: CompactCore, p: float, rho: float, seed: CombinatorialField,
                   tol: float = RESIDUAL_TOL, max_iter: int = 100,
                   ledger: SLedger | None = S_LEDGER) -> CombinatorialField:
    """Newton on ``-Delta_d f - rho |f|^{p-2} f = 0`` at the free vertices.

    The zero seed is rejected with :class:`SingularJacobian`: the nonlinear
    part of the linearization vanishes there and Newton can only return the
    trivial critical point.
    """
    if not p > 2:
        raise PreconditionError("need p > 2")
    free = seed.free_mask
    if not free.any():
        raise PreconditionError("every vertex is pinned")
    if not np.any(seed.values[free]):
        raise SingularJacobian("zero seed: the nonlinearity has zero derivative there and "
                               "Newton stays at the trivial critical point")
    L = laplacian_matrix(core)
    Lff = L[free][:, free].tocsc()
    f = seed.values[free].copy()

    def G(x):
        return -(Lff @ x) - rho * np.abs(x) ** (p - 2) * x

    def newton_step(x, r):
        J = (-Lff - sp.diags((p - 1) * rho * np.abs(x) ** (p - 2))).tocsc()
        try:
            step = spla.splu(J).solve(-r)
        except RuntimeError:
            try:
                step = spla.splu((J + TIKHONOV * sp.identity(x.size)).tocsc()).solve(-r)
            except RuntimeError as exc:
                raise SingularJacobian("singular discrete Jacobian") from exc
        if not np.all(np.isfinite(step)):
            raise SingularJacobian("non-finite Newton step")
        return step

    r = G(f)
    nrm = float(np.max(np.abs(r)))
    it = 0
    while nrm > tol:
        if it >= max_iter:
            raise MaxIterExceeded(f"discrete Newton: residual {nrm:.3e} after {max_iter} steps")
        step = newton_step(f, r)
        alpha = 1.0
        for _ in range(31):
            ft = f + alpha * step
            rt = G(ft)
            nt = float(np.max(np.abs(rt)))
            if nt < (1 - 1e-4 * alpha) * nrm:
                break
            alpha *= 0.5
        else:
            raise MaxIterExceeded(f"discrete line search failed at residual {nrm:.3e}")
        f, r, nrm = ft, rt, nt
        it += 1
    if nrm > 0:
        # one polishing step: quadratic convergence takes the error to rounding level
        ft = f + newton_step(f, r)
        nt = float(np.max(np.abs(G(ft))))
        if nt <= nrm:
            f, nrm = ft, nt
    vals = np.zeros_like(seed.values)
    vals[free] = f
    out = CombinatorialField(core, vals, seed.pinned, dict(seed.meta))
    en = discrete_energy(core, out, p, rho)
    out.meta.update(residual=nrm, iterations=it, energy=en, p=p, rho=rho)
    if ledger is not None:
        sup = ledger.record(p, core, en)
        out.meta.update(S_empirical=sup, within_S=en <= sup)
    return out


def single_edge_core(length: float = 1.0) -> CompactCore:
    """Edge ``v1 - v2`` with ``v1`` pinned (the attachment point of a half-line)."""
    return core_from_edges(["v1", "v2"], [("v1", "v2", length)], boundary=["v1"])


def lattice_core(N: int, R: int):
    """``{x in Z^N : |x|_1 <= R}`` with unit edges; boundary ``|x|_1 = R``."""
    pts = []
    for x in itertools.product(range(-R, R + 1), repeat=N):
        if sum(abs(c) for c in x) <= R:
            pts.append(x)
    ids = {x: ",".join(map(str, x)) for x in pts}
    edges = []
    for x in pts:
        for i in range(N):
            y = list(x)
            y[i] += 1
            y = tuple(y)
            if y in ids:
                edges.append((ids[x], ids[y], 1.0))
    boundary = [ids[x] for x in pts if sum(abs(c) for c in x) == R]
    return core_from_edges([ids[x] for x in pts], edges, boundary), pts


def symmetry_error(values: np.ndarray, pts: list) -> float:
    """Max deviation under coordinate permutations and sign flips."""
    pos = {x: k for k, x in enumerate(pts)}
    N = len(pts[0])
    worst = 0.0
    for perm in itertools.permutations(range(N)):
        for signs in itertools.product((1, -1), repeat=N):
            img = [pos[tuple(signs[i] * x[perm[i]] for i in range(N))] for x in pts]
            worst = max(worst, float(np.max(np.abs(values - values[img]))))
    return worst


def lattice_demo(N: int, p: float, R: int, rho: float = 1.0, tol: float = RESIDUAL_TOL,
                 ledger: SLedger | None = S_LEDGER) -> CombinatorialField:
    """Positive solution on the truncated lattice ball, seeded at the origin."""
    if N < 3:
        raise ExponentOutOfRange(f"lattice demonstration needs N >= 3, got N={N}")
    crit = 2 * N / (N - 2)
    if not p > crit:
        raise ExponentOutOfRange(f"need p > 2N/(N-2) = {crit:g}, got p={p}")
    if R < 3:
        raise PreconditionError("radius must be at least 3")
    core, pts = lattice_core(N, R)
    vals = np.zeros(len(pts))
    origin = core.index[",".join(["0"] * N)]
    f0 = (2 * N) ** (1 / (p - 2))
    vals[origin] = f0
    seed = CombinatorialField(core, vals, meta={"coords": pts, "seed_value": f0})
    sol = solve_discrete(core, p, rho, seed, tol=tol, ledger=ledger)
    free = sol.free_mask
    sol.meta.update(
        N=N, R=R,
        positive=bool(np.all(sol.values[free] > 0)),
        symmetry_error=symmetry_error(sol.values, pts),
        n_vertices=len(pts),
    )
    return sol


def norm_equivalence_constant(core: CompactCore, p: float, v0: str | None = None,
                              starts: int = 20, seed: int = 0) -> float:
    """Largest ``[f]_{H1(V)} / ||f||_{l^p(V)}`` over ``f`` with ``f(v0) = 0``.

    A finite-dimensional maximization by multi-start SLSQP on the unit
    ``l^p`` sphere; the result is a lower estimate of the optimal constant.
    """
    verts = core.vertices
    v0 = v0 or (min(core.boundary) if core.boundary else verts[0])
    keep = np.array([v != v0 for v in verts])
    L = laplacian_matrix(core)
    rng = np.random.default_rng(seed)
    n = int(keep.sum())
    if n == 0:
        raise PreconditionError("no free vertex besides v0")

    def full(x):
        f = np.zeros(len(verts))
        f[keep] = x
        return f

    def neg(x):
        f = full(x)
        return float(f @ (L @ f))  # equals -[f]^2

    cons = {"type": "eq", "fun": lambda x: np.sum(np.abs(x) ** p) - 1.0}
    best = 0.0
    for _ in range(starts):
        x0 = rng.standard_normal(n)
        x0 /= np.sum(np.abs(x0) ** p) ** (1 / p)
        res = so.minimize(neg, x0, constraints=[cons], method="SLSQP",
                          options={"maxiter": 500, "ftol": 1e-12})
        x = res.x / np.sum(np.abs(res.x) ** p) ** (1 / p)
        best = max(best, math.sqrt(max(0.0, -neg(x))))
    return best
