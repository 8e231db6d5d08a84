"""JSON state files and report serialization."""

from __future__ import annotations

import dataclasses
import json
import math
from pathlib import Path

import numpy as np

from .errors import GraphFormatError
from .graph import graph_from_dict
from .system import CandidateSolution, ProblemParams


def jsonable(obj):
    """Plain-JSON version of reports; non-finite floats become strings."""
    if dataclasses.is_dataclass(obj) and not isinstance(obj, type):
        if hasattr(obj, "as_dict"):
            return jsonable(obj.as_dict())
        return jsonable(dataclasses.asdict(obj))
    if isinstance(obj, dict):
        return {str(k): jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [jsonable(v) for v in obj.tolist()]
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer, int)):
        return int(obj)
    if isinstance(obj, (np.floating, float)):
        x = float(obj)
        if math.isfinite(x):
            return x
        return "nan" if math.isnan(x) else ("inf" if x > 0 else "-inf")
    if obj is None or isinstance(obj, str):
        return obj
    return str(obj)


def dumps(obj) -> str:
    return json.dumps(jsonable(obj), indent=2, sort_keys=True) + "\n"


def state_to_dict(c: CandidateSolution) -> dict:
    return {
        "graph": c.graph.to_dict(),
        "params": c.params.as_dict(),
        "lambda": c.lam,
        "U": {v: float(u) for v, u in zip(c.graph.vertices, c.U)},
    }


def state_from_dict(d: dict) -> CandidateSolution:
    try:
        graph = graph_from_dict(d["graph"], d["graph"].get("name", ""))
        params = ProblemParams(**{k: float(v) for k, v in d["params"].items()})
        U = [float(d["U"][v]) for v in graph.vertices]
        lam = float(d["lambda"])
    except KeyError as exc:
        raise GraphFormatError(f"state file: missing field {exc}") from exc
    except (TypeError, ValueError) as exc:
        raise GraphFormatError(f"state file: {exc}") from exc
    return CandidateSolution(graph, params, U, lam)


def load_state(path) -> CandidateSolution:
    try:
        data = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise GraphFormatError(f"{path}: line {exc.lineno}, column {exc.colno}: {exc.msg}") from exc
    return state_from_dict(data)


def profile_csv(c: CandidateSolution, spacing: float = 0.01) -> str:
    """Closed-form profile sampled along every edge (half-lines to ``e^-40`` decay)."""
    from .system import sample_profile

    lines = ["edge,x,u"]
    for e, x, u in sample_profile(c, spacing=spacing):
        lines += [f"{e.id},{xi!r},{ui!r}" for xi, ui in zip(x.tolist(), u.tolist())]
    return "\n".join(lines) + "\n"
