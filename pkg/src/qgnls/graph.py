"""Metric multigraphs with half-lines and per-vertex defect flags."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path

import numpy as np

from .errors import (
    Disconnected,
    EmptyGraph,
    GraphError,
    GraphFormatError,
    NonpositiveLength,
)

DELTA = "delta"
KIRCHHOFF = "kirchhoff"


@dataclass(frozen=True)
class Edge:
    """A bounded edge ``start -> end`` of length ``length``, or a half-line.

    A half-line has ``end is None`` and ``length == inf``; its point ``x = 0``
    sits at ``start``. A bounded edge identifies ``start`` with ``x = 0`` and
    ``end`` with ``x = length``.
    """

    id: str
    start: str
    end: str | None
    length: float

    @property
    def is_halfline(self) -> bool:
        return self.end is None

    @property
    def is_loop(self) -> bool:
        return self.end == self.start


@dataclass(frozen=True)
class Violation:
    kind: str
    element: str
    message: str

    def as_dict(self):
        return {"kind": self.kind, "element": self.element, "message": self.message}


@dataclass(frozen=True)
class MetricGraph:
    vertices: tuple[str, ...]
    edges: tuple[Edge, ...]
    defects: tuple[tuple[str, str], ...] = ()
    name: str = ""

    def __post_init__(self):
        object.__setattr__(self, "vertices", tuple(sorted(self.vertices)))
        flags = dict(self.defects)
        normalized = tuple((v, flags.get(v, DELTA)) for v in self.vertices)
        object.__setattr__(self, "defects", normalized)

    # --- construction helpers -------------------------------------------------

    @classmethod
    def build(cls, vertices, edges, defects=None, name=""):
        """Build and validate a graph.

        ``edges`` is an iterable of ``(start, end, length)``; use
        ``(v, None, math.inf)`` for a half-line. ``defects`` maps vertex id to
        ``"delta"`` or ``"kirchhoff"`` (default: every vertex is ``"delta"``).
        """
        es = []
        for k, e in enumerate(edges):
            if isinstance(e, Edge):
                es.append(e)
                continue
            start, end, length = e
            length = math.inf if end is None else float(length)
            es.append(Edge(f"e{k}", str(start), None if end is None else str(end), length))
        graph = cls(tuple(str(v) for v in vertices), tuple(es),
                    tuple((defects or {}).items()), name)
        check(graph)
        return graph

    def with_edge_length(self, edge_id: str, length: float) -> "MetricGraph":
        edges = tuple(
            Edge(e.id, e.start, e.end, float(length)) if e.id == edge_id else e
            for e in self.edges
        )
        if edges == self.edges and edge_id not in {e.id for e in self.edges}:
            raise KeyError(edge_id)
        graph = MetricGraph(self.vertices, edges, self.defects, self.name)
        check(graph)
        return graph

    def with_defects(self, defects: dict) -> "MetricGraph":
        flags = dict(self.defects)
        flags.update(defects)
        return MetricGraph(self.vertices, self.edges, tuple(flags.items()), self.name)

    # --- derived layout ---------------------------------------------------------

    @cached_property
    def index(self) -> dict[str, int]:
        return {v: i for i, v in enumerate(self.vertices)}

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    @cached_property
    def defect_mask(self) -> np.ndarray:
        return np.array([flag == DELTA for _, flag in self.defects], dtype=bool)

    def defect(self, v: str) -> str:
        return dict(self.defects)[v]

    @cached_property
    def bounded(self) -> tuple[Edge, ...]:
        return tuple(e for e in self.edges if not e.is_halfline)

    @cached_property
    def halflines(self) -> tuple[Edge, ...]:
        return tuple(e for e in self.edges if e.is_halfline)

    @cached_property
    def bounded_arrays(self):
        """(start index, end index, length) arrays of the bounded edges."""
        i = np.array([self.index[e.start] for e in self.bounded], dtype=int)
        j = np.array([self.index[e.end] for e in self.bounded], dtype=int)
        ell = np.array([e.length for e in self.bounded], dtype=float)
        return i, j, ell

    @cached_property
    def halfline_index(self) -> np.ndarray:
        return np.array([self.index[e.start] for e in self.halflines], dtype=int)

    @property
    def is_compact(self) -> bool:
        return not self.halflines

    def degree(self, v: str) -> int:
        deg = 0
        for e in self.edges:
            deg += (e.start == v) + (e.end == v)
        return deg

    def edge(self, edge_id: str) -> Edge:
        for e in self.edges:
            if e.id == edge_id:
                return e
        raise KeyError(edge_id)

    def incident(self, v: str):
        """Yield ``(edge, at_start)`` for each edge-end at ``v``.

        A self-loop yields twice, once per end.
        """
        for e in self.edges:
            if e.start == v:
                yield e, True
            if e.end == v:
                yield e, False

    @property
    def max_bounded_length(self) -> float:
        return max((e.length for e in self.bounded), default=0.0)

    # --- serialization ----------------------------------------------------------

    def to_dict(self) -> dict:
        flags = dict(self.defects)
        return {
            "name": self.name,
            "vertices": [{"id": v, "defect": flags[v]} for v in self.vertices],
            "edges": [
                {"id": e.id, "from": e.start, "to": e.end,
                 "length": "inf" if e.is_halfline else e.length}
                for e in self.edges
            ],
        }


@dataclass(frozen=True)
class CompactCore:
    vertices: tuple[str, ...]
    edges: tuple[Edge, ...]
    boundary: frozenset = field(default_factory=frozenset)

    @cached_property
    def index(self) -> dict[str, int]:
        return {v: i for i, v in enumerate(self.vertices)}

    def to_graph(self) -> MetricGraph:
        return MetricGraph(self.vertices, self.edges)

    @cached_property
    def free(self) -> tuple[str, ...]:
        return tuple(v for v in self.vertices if v not in self.boundary)


def validate(graph: MetricGraph) -> list[Violation]:
    """Return every violated graph invariant (empty list when valid)."""
    out = []
    if not graph.vertices:
        return [Violation("EmptyGraph", "", "graph has no vertices")]
    if not graph.edges and len(graph.vertices) == 1:
        out.append(Violation("EmptyGraph", graph.vertices[0], "graph has no edges"))
    known = set(graph.vertices)
    seen_ids = set()
    for e in graph.edges:
        if e.id in seen_ids:
            out.append(Violation("DuplicateEdge", e.id, "duplicate edge id"))
        seen_ids.add(e.id)
        for v in (e.start, e.end):
            if v is not None and v not in known:
                out.append(Violation("UnknownVertex", e.id, f"unknown vertex {v!r}"))
        if e.is_halfline:
            if not math.isinf(e.length):
                out.append(Violation("NonpositiveLength", e.id,
                                     "half-line must have infinite length"))
        elif not (math.isfinite(e.length) and e.length > 0):
            out.append(Violation("NonpositiveLength", e.id,
                                 f"bounded edge length {e.length} is not in (0, inf)"))
    for v, flag in graph.defects:
        if flag not in (DELTA, KIRCHHOFF):
            out.append(Violation("BadDefect", v, f"unknown defect flag {flag!r}"))

    # union-find over edge endpoints
    parent = {v: v for v in graph.vertices}

    def find(v):
        while parent[v] != v:
            parent[v] = parent[parent[v]]
            v = parent[v]
        return v

    for e in graph.edges:
        if e.end is not None and e.start in known and e.end in known:
            parent[find(e.start)] = find(e.end)
    roots = {find(v) for v in graph.vertices}
    if len(roots) > 1:
        root0 = find(graph.vertices[0])
        for v in graph.vertices:
            if find(v) != root0:
                out.append(Violation("Disconnected", v,
                                     f"vertex {v!r} unreachable from {graph.vertices[0]!r}"))
    return out


_ERRORS = {"EmptyGraph": EmptyGraph, "Disconnected": Disconnected,
           "NonpositiveLength": NonpositiveLength}


def check(graph: MetricGraph) -> MetricGraph:
    """Raise the error class of the first violation, carrying all of them."""
    violations = validate(graph)
    if violations:
        first = violations[0]
        cls = _ERRORS.get(first.kind, GraphError)
        raise cls("; ".join(f"{v.kind}: {v.message}" for v in violations),
                  violations=violations)
    return graph


def compact_core(graph: MetricGraph) -> CompactCore:
    boundary = frozenset(e.start for e in graph.halflines)
    return CompactCore(graph.vertices, graph.bounded, boundary)


# --- JSON graph files -------------------------------------------------------------

def _field_error(path, message):
    return GraphFormatError(f"{path}: {message}", field=path)


def graph_from_dict(data: dict, name: str = "") -> MetricGraph:
    if not isinstance(data, dict):
        raise _field_error("<root>", "expected an object")
    verts = data.get("vertices")
    if not isinstance(verts, list):
        raise _field_error("vertices", "expected a list")
    ids, defects = [], {}
    for k, v in enumerate(verts):
        if isinstance(v, str):
            vid, flag = v, DELTA
        elif isinstance(v, dict) and "id" in v:
            vid, flag = str(v["id"]), v.get("defect", DELTA)
        else:
            raise _field_error(f"vertices[{k}]", "expected an object with an 'id'")
        if flag not in (DELTA, KIRCHHOFF):
            raise _field_error(f"vertices[{k}].defect", f"must be 'delta' or 'kirchhoff', got {flag!r}")
        if vid in defects:
            raise _field_error(f"vertices[{k}].id", f"duplicate vertex {vid!r}")
        ids.append(vid)
        defects[vid] = flag
    edges_in = data.get("edges", [])
    if not isinstance(edges_in, list):
        raise _field_error("edges", "expected a list")
    edges = []
    for k, e in enumerate(edges_in):
        if not isinstance(e, dict):
            raise _field_error(f"edges[{k}]", "expected an object")
        for key in ("from", "length"):
            if key not in e:
                raise _field_error(f"edges[{k}].{key}", "missing")
        length = e["length"]
        to = e.get("to")
        if length == "inf":
            if to is not None:
                raise _field_error(f"edges[{k}].to", "a half-line ('length': 'inf') requires 'to': null")
            length = math.inf
        else:
            if to is None:
                raise _field_error(f"edges[{k}].to", "bounded edge needs a 'to' vertex")
            if isinstance(length, bool) or not isinstance(length, (int, float)):
                raise _field_error(f"edges[{k}].length", "expected a number or 'inf'")
            length = float(length)
        for key, ref in (("from", e["from"]), ("to", to)):
            if ref is not None and str(ref) not in defects:
                raise _field_error(f"edges[{k}].{key}", f"unknown vertex {ref!r}")
        edges.append(Edge(str(e.get("id", f"e{k}")), str(e["from"]),
                          None if to is None else str(to), length))
    graph = MetricGraph(tuple(ids), tuple(edges), tuple(defects.items()), name or str(data.get("name", "")))
    check(graph)
    return graph


def loads_graph(text: str, name: str = "") -> MetricGraph:
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise GraphFormatError(f"line {exc.lineno}, column {exc.colno}: {exc.msg}",
                               line=exc.lineno, column=exc.colno) from exc
    return graph_from_dict(data, name)


def load_graph(path) -> MetricGraph:
    path = Path(path)
    return loads_graph(path.read_text(), name=path.stem)


def dumps_graph(graph: MetricGraph) -> str:
    return json.dumps(graph.to_dict(), indent=2)


# --- the standard test graphs ------------------------------------------------------

def star(k: int, name: str | None = None) -> MetricGraph:
    """One vertex ``v`` with ``k`` half-lines."""
    return MetricGraph.build(["v"], [("v", None, math.inf)] * k, name=name or f"{k}-star")


def tadpole(loop: float = 1.0) -> MetricGraph:
    return MetricGraph.build(["v"], [("v", "v", loop), ("v", None, math.inf)], name="tadpole")


def dumbbell(length: float = 1.0, left: int = 1, right: int = 0) -> MetricGraph:
    """Vertices A, B joined by one edge; ``left``/``right`` half-lines at A/B."""
    edges = [("A", "B", length)]
    edges += [("A", None, math.inf)] * left
    edges += [("B", None, math.inf)] * right
    return MetricGraph.build(["A", "B"], edges, name="dumbbell")


def two_hub(length: float = 1.0) -> MetricGraph:
    """Asymmetric two-hub graph: 3 half-lines at A, 1 at B, edge A-B."""
    return MetricGraph.build(
        ["A", "B"],
        [("A", "B", length)] + [("A", None, math.inf)] * 3 + [("B", None, math.inf)],
        name="two-hub",
    )


def pendant_star(length: float = 1.0, halflines: int = 2) -> MetricGraph:
    """Hub ``c`` with ``halflines`` half-lines and one bounded edge to leaf ``w``."""
    return MetricGraph.build(
        ["c", "w"], [("c", "w", length)] + [("c", None, math.inf)] * halflines,
        name="3-star-bounded",
    )
