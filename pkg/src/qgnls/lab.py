"""Analytic probes on discrete fields: Gagliardo-Nirenberg ratios, dilations,
mountain-pass geometry, the constrained second variation and an energy flow.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import (
    ConstructionFailed,
    DegenerateField,
    Diverging,
    MaxIterExceeded,
    PreconditionError,
    SupportOverflow,
)
from .field import DiscreteField, Mesh, discretize, energy, from_functions, make_mesh, refine_common
from .graph import MetricGraph
from .system import CandidateSolution, ProblemParams, verify

DENSE_LIMIT = 2500


# Gagliardo-Nirenberg

def gn_constant(graph: MetricGraph, p: float) -> float:
    return 2.0 ** (p / 2) * graph.n_vertices


def gn_check(f: DiscreteField, p: float) -> float:
    """``sum_v |u(v)|^p / (C ||u'||^{p/2} ||u||^{p/2})``; at most 1 for H1 fields."""
    lhs = float(np.sum(np.abs(f.vertex_values) ** p))
    kin, mass = f.kinetic(), f.mass()
    if kin <= 0 or mass <= 0:
        if lhs == 0 and mass == 0:
            raise DegenerateField("zero field")
        if lhs == 0:
            return 0.0
        raise DegenerateField("field with zero derivative but nonzero vertex values")
    return lhs / (gn_constant(f.graph, p) * kin ** (p / 4) * mass ** (p / 4))


def gn_ratios(mesh: Mesh, values: np.ndarray, p: float) -> np.ndarray:
    """Vectorized :func:`gn_check` for the rows of ``values``."""
    V = np.array(values, dtype=float)
    V[:, mesh.fixed] = 0.0
    kin = np.einsum("ij,ij->i", V, (mesh.K @ V.T).T)
    mass = np.einsum("ij,ij->i", V, (mesh.M @ V.T).T)
    lhs = np.sum(np.abs(V[:, : mesh.graph.n_vertices]) ** p, axis=1)
    if np.any(kin <= 0):
        raise DegenerateField("a field has zero Dirichlet energy")
    return lhs / (gn_constant(mesh.graph, p) * kin ** (p / 4) * mass ** (p / 4))


# dilations and test families

def _rescaled_halfline(f: DiscreteField, edge_id: str, t: float) -> DiscreteField:
    edge_x = {em.edge_id: em.x for em in f.mesh.edges}
    edge_x[edge_id] = f.mesh.edge_mesh(edge_id).x / t
    mesh = Mesh(f.graph, edge_x)
    u = np.zeros(mesh.n_nodes)
    for old, new in zip(f.mesh.edges, mesh.edges):
        u[new.nodes] = f.values[old.nodes]
    em = mesh.edge_mesh(edge_id)
    u[em.nodes] *= math.sqrt(t)
    return DiscreteField(mesh, u, dict(f.meta))


def support_halfline(f: DiscreteField) -> str:
    """The single half-line carrying the support of ``f``."""
    if np.any(f.vertex_values != 0):
        raise SupportOverflow("field does not vanish at the vertices")
    carriers = [em.edge_id for em in f.mesh.edges if np.any(f.values[em.nodes] != 0)]
    if len(carriers) != 1 or not f.graph.edge(carriers[0]).is_halfline:
        raise SupportOverflow(f"support is not within one half-line (carriers: {carriers})")
    return carriers[0]


def dilate(f: DiscreteField, t: float) -> DiscreteField:
    """``t^{1/2} u(t x)`` for a field supported on one half-line.

    The half-line mesh is rescaled with the field (spacing ``h/t``), so mass is
    preserved and the Dirichlet integral scales by ``t^2`` up to rounding.
    """
    if not t > 0:
        raise PreconditionError("dilation factor must be positive")
    eid = support_halfline(f)
    if t == 1:
        return DiscreteField(f.mesh, f.values.copy(), dict(f.meta))
    return _rescaled_halfline(f, eid, t)


def tent_cutoff(graph: MetricGraph, v: str) -> float:
    bounded = [e.length for e, _ in graph.incident(v) if not e.is_halfline]
    return min(bounded) if bounded else 1.0


def tent(graph: MetricGraph, v: str, M: float | None = None, mu: float | None = None,
         t: float = 1.0, h: float = 0.01, L: float | None = None) -> DiscreteField:
    """Tent ``t^{1/2} M (l/K - t x)`` on every edge end at ``v``, zero beyond.

    With ``mu`` given, ``M`` is chosen so that the discrete mass equals ``mu``
    (the mesh has a node at the support end, so the tent is represented exactly).
    """
    K = graph.degree(v)
    if K == 0:
        raise PreconditionError(f"vertex {v!r} has no incident edges")
    ell = tent_cutoff(graph, v)
    s = ell / (K * t)
    breaks = {}
    for e, at_start in graph.incident(v):
        breaks.setdefault(e.id, []).append(s if at_start else e.length - s)
    mesh = make_mesh(graph, min(h, s / 4), L=L, breaks=breaks)
    amp = 1.0 if M is None else M

    def profile(y):
        return math.sqrt(t) * amp * np.clip(ell / K - t * y, 0.0, None)

    u = np.zeros(mesh.n_nodes)
    for e, at_start in graph.incident(v):
        em = mesh.edge_mesh(e.id)
        y = em.x if at_start else em.x[-1] - em.x
        u[em.nodes] = np.maximum(u[em.nodes], profile(y))
    f = DiscreteField(mesh, u, {"kind": "tent", "vertex": v, "t": t, "cutoff": ell})
    if mu is not None:
        m = f.mass()
        scale = math.sqrt(mu / m)
        f = f.with_values(f.values * scale, **f.meta)
        f.meta["M"] = amp * scale
    else:
        f.meta["M"] = amp
    return f


def bump_profile(x, mass: float = 1.0):
    """``sqrt(2 mass) sin(pi x)`` on [0, 1]; L2 mass ``mass``, Dirichlet integral ``pi^2 mass``."""
    x = np.asarray(x, dtype=float)
    return np.where((x > 0) & (x < 1), math.sqrt(2 * mass) * np.sin(math.pi * x), 0.0)


def bump_family(graph: MetricGraph, d: int, tau: float, h: float = 0.01,
                edge_id: str | None = None, L: float | None = None, mass: float = 1.0):
    """``d`` translates of the dilated bump, supported on ``((i-1)/tau, i/tau)``
    along one half-line. The half-line must be at least ``d/tau`` long."""
    if d < 1 or not tau > 0:
        raise PreconditionError("need d >= 1 and tau > 0")
    hl = [e.id for e in graph.halflines]
    if not hl:
        raise PreconditionError("bump families need a half-line")
    eid = edge_id or hl[0]
    span = d / tau
    Le = span + 1.0 / tau if L is None else L
    if Le < span:
        raise SupportOverflow(f"{d} bumps need length {span:.4g}, half-line truncated at {Le:.4g}")
    width = 1.0 / tau
    mesh = make_mesh(graph, min(h, width / 16), L={eid: Le},
                     breaks={eid: [i * width for i in range(d + 1)]})
    out = []
    for i in range(d):
        def f(x, i=i):
            return math.sqrt(tau) * bump_profile(tau * x - i, mass)
        out.append(from_functions(mesh, {eid: f}))
    return out


# mountain-pass geometry

@dataclass
class GeometryReport:
    C: float
    k0: float
    alpha: float
    energy_w1: float
    kinetic_w1: float
    energy_w2: float
    kinetic_w2: float
    t1: float
    t2: float
    path_max: float
    path_samples: int
    checks: dict
    passed: bool

    def as_dict(self):
        return asdict(self)


def mp_constants(graph: MetricGraph, p: float, mu: float):
    C = gn_constant(graph, p)
    k0 = 0.5 * (p / (2 * C)) ** (4 / (p - 4)) * mu ** (-p / (p - 4))
    alpha = k0 * (0.5 - C / p * mu ** (p / 4) * k0 ** ((p - 4) / 4))
    return C, k0, alpha


def mp_geometry(graph: MetricGraph, p: float, mu: float, rho: float = 1.0, h: float = 0.005,
                samples: int = 200, t_max: float = 2.0 ** 30) -> GeometryReport:
    """Endpoints ``w1``, ``w2`` and the normalized segment between them."""
    if not p > 4:
        raise PreconditionError("mountain-pass geometry needs p > 4")
    if graph.is_compact:
        raise PreconditionError("mountain-pass geometry needs a half-line")
    C, k0, alpha = mp_constants(graph, p, mu)
    # w1: spread-out bump on a half-line; it vanishes at the vertex
    bump = bump_family(graph, 1, 1.0, h=h, mass=mu)[0]
    t1 = 0.5 * math.sqrt(min(k0, alpha) / (math.pi ** 2 * mu))
    w1 = dilate(bump, t1)
    # w2: tent dilated until the inequalities hold, then doubled once more
    v = next(e.start for e in graph.halflines)
    base = tent(graph, v, mu=mu, h=h)
    t = 1.0
    while True:
        w = tent(graph, v, M=base.meta["M"], t=t, h=h)
        if w.kinetic() > 2 * k0 and energy(w, p, rho) < 0:
            break
        t *= 2.0
        if t > t_max:
            raise ConstructionFailed(f"no dilation up to t={t_max:g} gives E(w2) < 0 and "
                                     f"||w2'||^2 > 2 k0", inequality="w2")
    t2 = t
    w2 = tent(graph, v, M=base.meta["M"], t=2 * t2, h=h)
    e1, e2 = energy(w1, p, rho), energy(w2, p, rho)
    a, b = refine_common(w1, w2)
    M = a.mesh.M
    path = []
    for s in np.linspace(0.0, 1.0, samples):
        u = (1 - s) * a.values + s * b.values
        u *= math.sqrt(mu / float(u @ (M @ u)))
        path.append(energy(a.with_values(u), p, rho))
    checks = {
        "kinetic_w1_below_k0": w1.kinetic() < k0,
        "energy_w1_below_alpha_half": e1 < alpha / 2,
        "kinetic_w2_above_2k0": w2.kinetic() > 2 * k0,
        "energy_w2_negative": e2 < 0,
        "path_max_at_least_alpha": max(path) >= alpha,
    }
    return GeometryReport(C, k0, alpha, e1, w1.kinetic(), e2, w2.kinetic(), t1, t2,
                          float(max(path)), samples, checks, all(checks.values()))


# second variation

@dataclass
class SpectrumReport:
    theta: float
    count: int
    smallest: list
    q_uu: float
    q_uu_expected: float
    h: float
    L: dict
    n_nodes: int

    def as_dict(self):
        return asdict(self)


def quadratic_form(f: DiscreteField, params: ProblemParams, lam: float, U=None):
    """Sparse matrix of ``||phi'||^2 + lam ||phi||^2 - (p-1) rho sum_v |u(v)|^{p-2} phi(v)^2``."""
    g = f.graph
    U = f.vertex_values if U is None else np.asarray(U)
    w = np.zeros(f.mesh.n_nodes)
    w[: g.n_vertices] = np.where(g.defect_mask, (params.p - 1) * params.rho
                                 * np.abs(U) ** (params.p - 2), 0.0)
    return (f.mesh.K + lam * f.mesh.M - sp.diags(w)).tocsr()


def _negative_count(A, c, theta_B):
    """Number of negative eigenvalues of ``A + theta_B`` on ``{c . phi = 0}``.

    Uses Sylvester's law on the bordered matrix, eliminating the edge-interior
    block by a sparse symmetric factorization.
    """
    At = (A + theta_B).tocsc()
    Ab = sp.bmat([[At, sp.csc_matrix(c.reshape(-1, 1))],
                  [sp.csc_matrix(c.reshape(1, -1)), None]]).tocsc()
    lu = spla.splu(Ab, permc_spec="MMD_AT_PLUS_A", diag_pivot_thresh=0.0,
                   options={"SymmetricMode": True})
    if not (np.all(lu.perm_r == lu.perm_c)):
        return None
    d = lu.U.diagonal()
    return int(np.sum(d < 0)) - 1


def _tangent_basis(c):
    # orthonormal basis of {x : c . x = 0} from a Householder reflector
    v = c / np.linalg.norm(c)
    e = np.zeros_like(v)
    e[0] = 1.0
    w = v - e if v[0] <= 0 else v + e
    H = np.eye(v.size) - 2.0 * np.outer(w, w) / (w @ w)
    return H[:, 1:]


def second_variation(c: CandidateSolution, h: float, theta: float = 0.0,
                     n_smallest: int = 5, max_nodes: int | None = None) -> SpectrumReport:
    """Count generalized eigenvalues below ``-theta`` of the second variation
    against the H1 form, on the mass tangent space ``{<u, phi> = 0}``."""
    if theta < 0:
        raise PreconditionError("theta must be >= 0")
    rep = verify(c)
    if not rep.is_solution:
        raise PreconditionError("second_variation needs a verified solution")
    f = discretize(c, h, max_nodes=max_nodes)
    A = quadratic_form(f, c.params, c.lam, c.U)
    B = (f.mesh.K + f.mesh.M).tocsr()
    u = f.values
    q_uu = float(u @ (A @ u))
    expected = (2 - c.params.p) * (rep.kinetic + c.lam * rep.mass)
    free = f.mesh.free
    Af = A[free][:, free]
    Bf = B[free][:, free]
    cvec = (f.mesh.M @ u)[free]
    smallest = []
    count = None
    if free.size <= DENSE_LIMIT:
        Q = _tangent_basis(cvec)
        ev = sla.eigh(Q.T @ Af.toarray() @ Q, Q.T @ Bf.toarray() @ Q, eigvals_only=True)
        count = int(np.sum(ev < -theta))
        smallest = [float(x) for x in ev[:n_smallest]]
    else:
        count = _negative_count(Af, cvec, theta * Bf)
        # Rayleigh-quotient lower bound: phi(v)^2 <= max(1, 2/l_min) ||phi||_H1^2
        g = c.graph
        trace = max(1.0, 2.0 / min((e.length for e in g.bounded), default=2.0))
        pot = (c.params.p - 1) * c.params.rho * np.sum(np.abs(c.U[g.defect_mask]) ** (c.params.p - 2))
        lower = min(c.lam, 1.0) - pot * trace - 1.0
        upper = max(c.lam, 1.0) + 1.0
        smallest = _smallest_tangent(Af, Bf, cvec, n_smallest, lower, upper)
        if count is None:
            count = int(np.sum(np.array(smallest) < -theta))
    return SpectrumReport(theta, count, smallest, q_uu, expected, f.h, f.L, f.mesh.n_nodes)


def _smallest_tangent(A, B, c, k, lower, upper, tol=1e-10):
    """Smallest ``k`` generalized eigenvalues on ``{c . x = 0}`` by bisection
    on inertia counts; ``[lower, upper]`` must bracket them.

    Shift-and-invert Lanczos stalls on the tight cluster that the discretized
    continuous spectrum forms, while counts below a shift are exact.
    """
    def below(x):
        m = _negative_count(A, c, -x * B)
        if m is None:
            raise MaxIterExceeded("symmetric factorization pivoted; inertia unavailable")
        return m

    out = []
    lo = lower
    for j in range(k):
        a, b = lo, upper
        if below(b) < j + 1:
            break
        while b - a > tol * max(1.0, abs(b)):
            mid = 0.5 * (a + b)
            if below(mid) >= j + 1:
                b = mid
            else:
                a = mid
        out.append(float(0.5 * (a + b)))
        lo = a
    return out


def index_counts(c: CandidateSolution, h: float, thetas) -> list:
    """Counts for several thresholds on one discretization."""
    return [second_variation(c, h, th).count for th in thetas]


def probe_tau(lam_test: float, phi_kinetic: float = math.pi ** 2, safety: float = 0.9) -> float:
    """Largest admissible bump scale, shrunk by ``safety``.

    Admissible means ``tau^2 ||phi'||^2 + lam <= (lam/2)(tau^2 ||phi'||^2 + 1)``,
    i.e. ``tau^2 ||phi'||^2 <= (-lam/2) / (1 - lam/2)``.
    """
    bound = (-lam_test / 2) / (1 - lam_test / 2)
    return safety * math.sqrt(bound / phi_kinetic)


def negative_subspace_probe(c: CandidateSolution, d: int, lam_test: float, h: float = 0.01,
                            trials: int = 100, seed: int = 0, details: bool = False):
    """Check ``Q(w) <= (lam/2) ||w||_{H1}^2`` on the span of ``d`` disjoint bumps."""
    if not lam_test < 0:
        raise PreconditionError("the probe needs lam_test < 0")
    if c.graph.is_compact:
        raise PreconditionError("the probe needs a half-line")
    tau = probe_tau(lam_test)
    bumps = bump_family(c.graph, d, tau, h=h)
    f0 = bumps[0]
    U = c.U
    A = quadratic_form(f0, c.params, lam_test, U)
    B = (f0.mesh.K + f0.mesh.M).tocsr()
    Phi = np.stack([b.values for b in bumps], axis=1)
    QA = Phi.T @ (A @ Phi)
    QB = Phi.T @ (B @ Phi)
    rng = np.random.default_rng(seed)
    coeffs = np.vstack([np.eye(d), rng.standard_normal((trials, d))])
    q = np.einsum("ij,jk,ik->i", coeffs, QA, coeffs)
    bound = 0.5 * lam_test * np.einsum("ij,jk,ik->i", coeffs, QB, coeffs)
    ok = bool(np.all(q <= bound))
    if details:
        return ok, {"tau": tau, "q": q, "bound": bound, "gram": QA}
    return ok


# energy flow on the mass sphere

def gradient_flow(graph: MetricGraph, params: ProblemParams, init: DiscreteField,
                  steps: int = 2000, tol: float = 1e-10, floor: float | None = None,
                  step0: float = 0.1) -> DiscreteField:
    """Projected Sobolev-gradient descent on the energy over ``{mass = mu}``.

    The metric is the H1 form plus the curvature ``(p-1) rho |u(v)|^{p-2}`` of
    the vertex term, which keeps steps usable while the field concentrates at
    a vertex. Each step descends along the gradient projected onto the tangent
    of the mass sphere, then rescales to mass ``mu``; the step length follows
    an Armijo rule. Raises :class:`Diverging` once the energy drops below
    ``floor`` (default ``E0 - 100 (1 + |E0|)``).
    """
    if init.graph != graph:
        raise PreconditionError("initial field lives on another graph")
    mesh = init.mesh
    mu, p, rho = params.mu, params.p, params.rho
    if abs(init.mass() - mu) > 1e-8 * max(1.0, mu):
        raise PreconditionError(f"initial mass {init.mass():.12g} differs from mu={mu}")
    free = mesh.free
    K, M = mesh.K, mesh.M
    B = (K + M).tocsc()[free][:, free]
    Bsolve = spla.factorized(B.tocsc())
    mask = np.zeros(mesh.n_nodes)
    mask[: graph.n_vertices] = graph.defect_mask
    # vertex nodes lead the free list, so their reduced indices are 0..#V-1
    dv = np.flatnonzero(graph.defect_mask)
    P = np.zeros((free.size, dv.size))
    P[dv, np.arange(dv.size)] = 1.0
    Z = np.column_stack([Bsolve(P[:, j]) for j in range(dv.size)]) if dv.size else P

    def metric_solve(r, u):
        # Woodbury update of (K + M) by the diagonal vertex curvature
        y = Bsolve(r)
        if not dv.size:
            return y
        w = (p - 1) * rho * np.abs(u[dv]) ** (p - 2)
        on = w > 0
        if not on.any():
            return y
        Zs = Z[:, on]
        S = np.diag(1.0 / w[on]) + Zs[dv[on]]
        return y - Zs @ np.linalg.solve(S, y[dv[on]])

    def E(u):
        return 0.5 * float(u @ (K @ u)) - rho / p * float(np.sum(mask * np.abs(u) ** p))

    def renorm(u):
        return u * math.sqrt(mu / float(u @ (M @ u)))

    u = init.values.copy()
    e = E(u)
    e0 = e
    lo = e0 - 100.0 * (1.0 + abs(e0)) if floor is None else floor
    history = [e]
    taus = [step0, step0]
    lam_est = float("nan")
    for it in range(steps):
        grad = K @ u - rho * mask * np.abs(u) ** (p - 2) * u
        grad[mesh.fixed] = 0.0
        Mu = M @ u
        lam_est = -float(u @ grad) / mu
        best = None
        for k in range(2):
            g = np.zeros_like(u)
            z = np.zeros_like(u)
            if k == 0:
                g[free] = metric_solve(grad[free], u)
                z[free] = metric_solve(Mu[free], u)
            else:
                # nodal gradient: follows concentration at a single vertex node
                g[free] = grad[free]
                z[free] = Mu[free]
            g -= (Mu @ g) / (Mu @ z) * z
            slope = float(grad @ g)
            if slope <= tol * tol * max(1.0, abs(e)):
                continue
            tau = taus[k]
            for _ in range(60):
                trial = renorm(u - tau * g)
                et = E(trial)
                if np.isfinite(et) and et <= e - 1e-4 * tau * slope:
                    if best is None or et < best[1]:
                        best = (trial, et)
                    taus[k] = min(tau * 1.5, 1e6)
                    break
                tau *= 0.5
            else:
                taus[k] = step0
        if best is None:
            break
        u, e = best
        history.append(e)
        if e < lo or not np.isfinite(e):
            raise Diverging(f"energy {e:.6g} fell below floor {lo:.6g} after {it + 1} steps",
                            field=init.with_values(u, energy=e), history=history)
    out = init.with_values(u, energy=e, lam=lam_est, iterations=len(history) - 1)
    out.meta["history"] = history
    return out
