"""Piecewise-linear fields on a meshed metric graph.

Every edge carries its own increasing node list; vertex nodes are shared, so
fields are continuous across vertices. Half-lines are truncated at a finite
length ``L`` whose end node is pinned to zero. Stiffness and mass matrices are
the exact P1 ones, so ``u @ K @ u`` and ``u @ M @ u`` are the exact Dirichlet
integral and L2 mass of the piecewise-linear function.
"""

from __future__ import annotations

import csv
import io
import math
import os
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
import scipy.sparse as sp

from .errors import NonDecaying, TooManyNodes
from .graph import MetricGraph
from .system import CandidateSolution

TAIL_FACTOR = 1e-14
TAIL_AMPLITUDE = 1e-12
DEFAULT_MAX_NODES = 100_000


def max_nodes_default() -> int:
    return int(float(os.environ.get("QG_MAX_NODES", DEFAULT_MAX_NODES)))


@dataclass(frozen=True)
class EdgeMesh:
    edge_id: str
    x: np.ndarray       # arclength positions, x[0] = 0
    nodes: np.ndarray   # global node index per position

    @property
    def spacing(self) -> float:
        return float(np.max(np.diff(self.x)))


class Mesh:
    """Node layout plus assembled P1 stiffness ``K`` and mass ``M``.

    Nodes ``0..#V-1`` are the graph vertices in graph order; truncation nodes
    of half-lines are listed in ``fixed``.
    """

    def __init__(self, graph: MetricGraph, edge_x: dict, max_nodes: int | None = None):
        self.graph = graph
        n = graph.n_vertices
        count = n + sum(len(x) - (1 if graph.edge(eid).is_halfline else 2) for eid, x in edge_x.items())
        limit = max_nodes_default() if max_nodes is None else max_nodes
        if count > limit:
            raise TooManyNodes(f"mesh needs {count} nodes, limit is {limit} (QG_MAX_NODES)",
                               nodes=count, limit=limit)
        nxt = n
        edges = []
        fixed = []
        for e in graph.edges:
            x = np.asarray(edge_x[e.id], dtype=float)
            if x[0] != 0 or np.any(np.diff(x) <= 0):
                raise ValueError(f"edge {e.id}: node positions must start at 0 and increase")
            nodes = np.empty(len(x), dtype=int)
            nodes[0] = graph.index[e.start]
            if e.is_halfline:
                nodes[1:] = np.arange(nxt, nxt + len(x) - 1)
                nxt += len(x) - 1
                fixed.append(nodes[-1])
            else:
                if not math.isclose(x[-1], e.length, rel_tol=1e-12):
                    raise ValueError(f"edge {e.id}: last node {x[-1]} differs from length {e.length}")
                nodes[1:-1] = np.arange(nxt, nxt + len(x) - 2)
                nxt += len(x) - 2
                nodes[-1] = graph.index[e.end]
            edges.append(EdgeMesh(e.id, x, nodes))
        self.edges = tuple(edges)
        self.n_nodes = nxt
        self.fixed = np.zeros(nxt, dtype=bool)
        self.fixed[fixed] = True

    @property
    def h(self) -> float:
        return max(em.spacing for em in self.edges)

    @property
    def L(self) -> dict:
        return {em.edge_id: float(em.x[-1]) for em in self.edges
                if self.graph.edge(em.edge_id).is_halfline}

    @property
    def free(self) -> np.ndarray:
        return np.flatnonzero(~self.fixed)

    def edge_mesh(self, edge_id: str) -> EdgeMesh:
        for em in self.edges:
            if em.edge_id == edge_id:
                return em
        raise KeyError(edge_id)

    def _assemble(self):
        rows, cols, kv, mv = [], [], [], []
        for em in self.edges:
            d = np.diff(em.x)
            i, j = em.nodes[:-1], em.nodes[1:]
            rows += [i, j, i, j]
            cols += [i, j, j, i]
            kv += [1 / d, 1 / d, -1 / d, -1 / d]
            mv += [d / 3, d / 3, d / 6, d / 6]
        r, c = np.concatenate(rows), np.concatenate(cols)
        shape = (self.n_nodes, self.n_nodes)
        K = sp.coo_matrix((np.concatenate(kv), (r, c)), shape=shape).tocsr()
        M = sp.coo_matrix((np.concatenate(mv), (r, c)), shape=shape).tocsr()
        return K, M

    @cached_property
    def matrices(self):
        return self._assemble()

    @property
    def K(self):
        return self.matrices[0]

    @property
    def M(self):
        return self.matrices[1]


def uniform_positions(length: float, h: float) -> np.ndarray:
    n = max(1, math.ceil(length / h - 1e-9))
    return np.linspace(0.0, length, n + 1)


def aligned_positions(length: float, h: float, breaks=()) -> np.ndarray:
    """Uniform pieces of spacing <= h between 0, the breakpoints and length."""
    pts = sorted({0.0, float(length), *(b for b in breaks if 0 < b < length)})
    pieces = [uniform_positions(b - a, h)[:-1] + a for a, b in zip(pts[:-1], pts[1:])]
    return np.append(np.concatenate(pieces), length)


def make_mesh(graph: MetricGraph, h: float, L: float | dict | None = None,
              breaks: dict | None = None, max_nodes: int | None = None) -> Mesh:
    """Uniform mesh with spacing <= h (finer pieces around ``breaks``).

    ``L`` is the half-line truncation (scalar or per edge); default
    ``max(10 * longest bounded edge, 10)``.
    """
    if not h > 0:
        raise ValueError("mesh spacing must be positive")
    breaks = breaks or {}
    default_L = max(10.0 * graph.max_bounded_length, 10.0)
    edge_x = {}
    for e in graph.edges:
        if e.is_halfline:
            Le = L.get(e.id, default_L) if isinstance(L, dict) else (default_L if L is None else L)
            edge_x[e.id] = aligned_positions(Le, h, breaks.get(e.id, ()))
        else:
            edge_x[e.id] = aligned_positions(e.length, h, breaks.get(e.id, ()))
    return Mesh(graph, edge_x, max_nodes)


@dataclass
class DiscreteField:
    mesh: Mesh
    values: np.ndarray
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        v = np.array(self.values, dtype=float)
        if v.shape != (self.mesh.n_nodes,):
            raise ValueError(f"field has {v.size} values for {self.mesh.n_nodes} nodes")
        v[self.mesh.fixed] = 0.0
        self.values = v

    @property
    def graph(self) -> MetricGraph:
        return self.mesh.graph

    @property
    def h(self) -> float:
        return self.mesh.h

    @property
    def L(self) -> dict:
        return self.mesh.L

    @property
    def vertex_values(self) -> np.ndarray:
        return self.values[: self.graph.n_vertices]

    def with_values(self, values, **meta) -> "DiscreteField":
        return DiscreteField(self.mesh, values, meta)

    def on_edge(self, edge_id: str):
        em = self.mesh.edge_mesh(edge_id)
        return em.x, self.values[em.nodes]

    def mass(self) -> float:
        u = self.values
        return float(u @ (self.mesh.M @ u))

    def kinetic(self) -> float:
        u = self.values
        return float(u @ (self.mesh.K @ u))

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["edge", "x", "u"])
        for em in self.mesh.edges:
            for x, u in zip(em.x, self.values[em.nodes]):
                w.writerow([em.edge_id, repr(float(x)), repr(float(u))])
        return buf.getvalue()


def zero_field(mesh: Mesh) -> DiscreteField:
    return DiscreteField(mesh, np.zeros(mesh.n_nodes))


def from_functions(mesh: Mesh, funcs: dict) -> DiscreteField:
    """Sample ``funcs[edge_id](x)`` at the edge nodes; missing edges are zero.

    Vertex values are taken from the last edge that sets them, so callers
    should pass functions that agree at shared vertices.
    """
    u = np.zeros(mesh.n_nodes)
    for em in mesh.edges:
        f = funcs.get(em.edge_id)
        if f is not None:
            u[em.nodes] = f(em.x)
    return DiscreteField(mesh, u)


def truncation_length(lam: float, amplitude: float, mass: float, share: int = 1) -> float:
    """Half-line truncation for a decaying profile ``A e^{-sqrt(lam) x}``.

    At least ``12/sqrt(lam)``, long enough that the profile has dropped by
    ``1e-12`` at the pinned end, and long enough that the tail mass
    ``A^2 e^{-2 sqrt(lam) L}/(2 sqrt(lam))`` is below ``1e-14 * mass / share``.
    """
    s = math.sqrt(lam)
    L = max(12.0, -math.log(TAIL_AMPLITUDE)) / s
    if amplitude != 0 and mass > 0:
        # logs keep tiny amplitudes (far-away vertices) from underflowing
        need = (2 * math.log(abs(amplitude)) + math.log(share / (2 * s * TAIL_FACTOR * mass))) / (2 * s)
        L = max(L, need)
    return L


def discretize(c: CandidateSolution, h: float, max_nodes: int | None = None) -> DiscreteField:
    """Sample the closed-form profile of ``c`` on a uniform mesh of spacing <= h.

    Half-line lengths are rounded up to a multiple of ``h`` so the half-line
    spacing is exactly ``h``.
    """
    g = c.graph
    coefs = c.edge_coefficients()
    if not g.is_compact and c.lam <= 0 and np.any(c.U != 0):
        raise NonDecaying("discretize needs lam > 0 on a noncompact graph", lam=c.lam)
    mass = 0.0
    if np.any(c.U != 0):
        from .edge import edge_integrals
        mass = sum(edge_integrals(coef)[0] for _, coef in coefs)
    edge_x = {}
    tail = 0.0
    for e, coef in coefs:
        if e.is_halfline:
            if coef.u0 == 0 or c.lam <= 0:
                Le = max(10.0 * g.max_bounded_length, 10.0) if c.lam <= 0 else 12.0 / math.sqrt(c.lam)
            else:
                Le = truncation_length(c.lam, coef.u0, mass, len(g.halflines))
                s = math.sqrt(c.lam)
            Le = h * math.ceil(Le / h - 1e-9)
            if coef.u0 != 0:
                tail += coef.u0 ** 2 * math.exp(-2 * s * Le) / (2 * s)
            edge_x[e.id] = np.arange(round(Le / h) + 1) * h
        else:
            edge_x[e.id] = uniform_positions(e.length, h)
    mesh = Mesh(g, edge_x, max_nodes)
    u = np.zeros(mesh.n_nodes)
    for (e, coef), em in zip(coefs, mesh.edges):
        u[em.nodes] = coef(em.x)
    u[: g.n_vertices] = c.U
    return DiscreteField(mesh, u, {"tail_bound": tail, "lam": c.lam, "source": "solution"})


def _defect_weights(graph: MetricGraph, n_nodes: int) -> np.ndarray:
    w = np.zeros(n_nodes)
    w[: graph.n_vertices] = graph.defect_mask
    return w


def energy(f: DiscreteField, p: float, rho: float) -> float:
    """P1 energy: half the Dirichlet integral minus ``rho/p`` times the vertex sum."""
    uv = f.vertex_values[f.graph.defect_mask]
    return 0.5 * f.kinetic() - rho / p * float(np.sum(np.abs(uv) ** p))


def grad_energy(f: DiscreteField, p: float, rho: float, lam: float) -> DiscreteField:
    """Nodal derivative of ``energy + lam/2 * mass`` (zero on pinned nodes)."""
    u = f.values
    g = f.mesh.K @ u + lam * (f.mesh.M @ u)
    w = _defect_weights(f.graph, u.size)
    g -= rho * w * np.abs(u) ** (p - 2) * u
    g[f.mesh.fixed] = 0.0
    return DiscreteField(f.mesh, g, {"kind": "gradient"})


def refine_common(f: DiscreteField, g: DiscreteField):
    """Represent two fields on the union of their node sets (exact for P1)."""
    if f.graph is not g.graph and f.graph != g.graph:
        raise ValueError("fields live on different graphs")
    edge_x = {}
    for ef, eg in zip(f.mesh.edges, g.mesh.edges):
        x = np.union1d(ef.x, eg.x)
        # merge rounding-level duplicates; a 1e-16 interval wrecks K by cancellation
        keep = np.concatenate(([True], np.diff(x) > 1e-9 * max(ef.spacing, eg.spacing)))
        merged = x[keep]
        merged[-1] = x[-1]
        edge_x[ef.edge_id] = merged
    mesh = Mesh(f.graph, edge_x)

    def transfer(src):
        u = np.zeros(mesh.n_nodes)
        for em, es in zip(mesh.edges, src.mesh.edges):
            # beyond a shorter truncation the field is zero
            u[em.nodes] = np.interp(em.x, es.x, src.values[es.nodes], right=0.0)
        return DiscreteField(mesh, u, dict(src.meta))

    return transfer(f), transfer(g)
