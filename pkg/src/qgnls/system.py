"""The finite nonlinear system in the vertex values ``U`` and the multiplier ``lam``.

On every edge ``u'' = lam u`` is solved exactly from the vertex traces, so the
standing-wave problem with prescribed mass reduces to ``#V + 1`` equations:

    sum_{edge-ends at v} u'_e(v) + rho |U_v|^{p-2} U_v = 0     (delta vertices)
    sum_{edge-ends at v} u'_e(v)                       = 0     (Kirchhoff vertices)
    sum_e int_e u^2 - mu                               = 0
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace

import numpy as np

from . import edge as ek
from .errors import (
    ComputationFailed,
    CriticalExponent,
    LeftDomain,
    MaxIterExceeded,
    NoDefectAtSeed,
    NonDecaying,
    NonSmoothAtZero,
    PreconditionError,
    ResonantEdge,
    SingularJacobian,
)
from .graph import MetricGraph

log = logging.getLogger(__name__)

LAMBDA_FLOOR = 1e-14
COND_LIMIT = 1e14
DEDUP_DISTANCE = 1e-6
POSITIVITY_SPACING = 1e-3


@dataclass(frozen=True)
class ProblemParams:
    p: float
    rho: float = 1.0
    mu: float = 1.0

    def __post_init__(self):
        if not self.p > 2:
            raise PreconditionError(f"exponent p must exceed 2, got {self.p}")
        if not 0.5 <= self.rho <= 1.0:
            raise PreconditionError(f"defect strength rho must lie in [1/2, 1], got {self.rho}")
        if not self.mu > 0:
            raise PreconditionError(f"mass mu must be positive, got {self.mu}")

    def as_dict(self):
        return {"p": self.p, "rho": self.rho, "mu": self.mu}


@dataclass(frozen=True)
class CandidateSolution:
    graph: MetricGraph
    params: ProblemParams
    U: np.ndarray
    lam: float
    meta: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        U = np.array(self.U, dtype=float).reshape(-1)
        if U.shape != (self.graph.n_vertices,):
            raise ValueError(f"U has {U.size} entries for {self.graph.n_vertices} vertices")
        U.setflags(write=False)
        object.__setattr__(self, "U", U)
        object.__setattr__(self, "lam", float(self.lam))

    @property
    def x(self) -> np.ndarray:
        return np.append(self.U, self.lam)

    def value(self, v: str) -> float:
        return float(self.U[self.graph.index[v]])

    def with_state(self, U, lam, **meta) -> "CandidateSolution":
        return replace(self, U=np.asarray(U, dtype=float), lam=lam, meta=meta)

    def with_params(self, params: ProblemParams) -> "CandidateSolution":
        return replace(self, params=params, meta={})

    def edge_coefficients(self):
        """``(edge, EdgeCoefficients)`` for every edge, in graph order."""
        g = self.graph
        out = []
        for e in g.edges:
            u0 = self.U[g.index[e.start]]
            if e.is_halfline:
                out.append((e, ek.halfline(self.lam, u0)))
            else:
                out.append((e, ek.edge_interp(self.lam, e.length, u0, self.U[g.index[e.end]])))
        return out

    def normalized(self) -> "CandidateSolution":
        """Flip the sign so that the largest-magnitude vertex value is >= 0."""
        if self.U.size and self.U[np.argmax(np.abs(self.U))] < 0:
            return replace(self, U=-self.U)
        return self


def zero_state(graph: MetricGraph, params: ProblemParams, lam: float) -> CandidateSolution:
    return CandidateSolution(graph, params, np.zeros(graph.n_vertices), lam)


def assemble(graph: MetricGraph, lam: float, U=None):
    """Return ``(dtn, gram, dgram)``: the assembled DtN matrix, the mass Gram
    matrix (``mass = U @ gram @ U``) and its derivative in ``lam``.

    ``d(dtn)/d lam == -gram`` holds exactly, so it is not returned.
    """
    n = graph.n_vertices
    dtn = np.zeros((n, n))
    gram = np.zeros((n, n))
    dgram = np.zeros((n, n))
    i, j, ell = graph.bounded_arrays
    if ell.size:
        w = lam * ell * ell
        a, b, f1, f2, a2, b2 = ek.kernels(w)
        np.add.at(dtn, (i, i), -a / ell)
        np.add.at(dtn, (j, j), -a / ell)
        np.add.at(dtn, (i, j), b / ell)
        np.add.at(dtn, (j, i), b / ell)
        np.add.at(gram, (i, i), ell * f1)
        np.add.at(gram, (j, j), ell * f1)
        np.add.at(gram, (i, j), 0.5 * ell * f2)
        np.add.at(gram, (j, i), 0.5 * ell * f2)
        ell3 = ell ** 3
        np.add.at(dgram, (i, i), ell3 * a2)
        np.add.at(dgram, (j, j), ell3 * a2)
        np.add.at(dgram, (i, j), -ell3 * b2)
        np.add.at(dgram, (j, i), -ell3 * b2)
    h = graph.halfline_index
    if h.size:
        if lam > 0:
            s = math.sqrt(lam)
            np.add.at(dtn, (h, h), -s)
            np.add.at(gram, (h, h), 0.5 / s)
            np.add.at(dgram, (h, h), -0.25 / (s * lam))
        elif U is not None and np.any(np.asarray(U)[h] != 0):
            raise NonDecaying(f"lam = {lam} <= 0 with nonzero value at a half-line vertex", lam=lam)
    return dtn, gram, dgram


def _defect_term(c: CandidateSolution):
    mask = c.graph.defect_mask
    U = c.U
    p, rho = c.params.p, c.params.rho
    absU = np.abs(U)
    term = np.where(mask, rho * absU ** (p - 2) * U, 0.0)
    return term


def residual(c: CandidateSolution) -> np.ndarray:
    """Vertex conditions followed by the mass equation; length ``#V + 1``."""
    dtn, gram, _ = assemble(c.graph, c.lam, c.U)
    U = c.U
    out = np.empty(U.size + 1)
    out[:-1] = dtn @ U + _defect_term(c)
    out[-1] = U @ gram @ U - c.params.mu
    return out


def jacobian(c: CandidateSolution) -> np.ndarray:
    """Exact Jacobian of :func:`residual` with respect to ``(U, lam)``."""
    p, rho = c.params.p, c.params.rho
    mask = c.graph.defect_mask
    U = c.U
    if p < 3 and np.any(mask & (U == 0)):
        raise NonSmoothAtZero("defect term |U|^(p-2) U is not twice differentiable at U = 0 for p < 3")
    dtn, gram, dgram = assemble(c.graph, c.lam, U)
    n = U.size
    absU = np.abs(U)
    with np.errstate(divide="ignore", invalid="ignore"):
        # clamp |U|^(p-2) to 0 below 1e-300 so 0 * inf never appears
        pw = np.where(absU < 1e-300, 0.0, absU ** (p - 2))
    J = np.zeros((n + 1, n + 1))
    J[:n, :n] = dtn + np.diag(np.where(mask, (p - 1) * rho * pw, 0.0))
    gU = gram @ U
    J[:n, n] = -gU
    J[n, :n] = 2.0 * gU
    J[n, n] = U @ dgram @ U
    return J


def star_closed_form(K: int, p: float, mu: float, rho: float = 1.0) -> tuple[float, float]:
    """Amplitude and multiplier of the radial solution on a ``K``-half-line star.

    The vertex balance ``K sqrt(lam) A = rho A^(p-1)`` and the mass
    ``K A^2 / (2 sqrt(lam)) = mu`` give

        lam = (2 mu rho^(2/(p-2)) K^(-p/(p-2)))^(2(p-2)/(4-p)),
        A   = (K sqrt(lam) / rho)^(1/(p-2)).
    """
    if K < 1:
        raise PreconditionError("star needs at least one half-line")
    if p == 4:
        raise CriticalExponent("p = 4: the star mass map is degenerate (mass independent of lam)")
    if not p > 2 or not mu > 0:
        raise PreconditionError("need p > 2 and mu > 0")
    base = 2.0 * mu * rho ** (2.0 / (p - 2.0)) * K ** (-p / (p - 2.0))
    lam = base ** (2.0 * (p - 2.0) / (4.0 - p))
    A = (K * math.sqrt(lam) / rho) ** (1.0 / (p - 2.0))
    return A, lam


def star_seed(graph: MetricGraph, v: str, params: ProblemParams) -> CandidateSolution:
    """Star profile at ``v`` (bounded edges treated as half-lines), zero elsewhere."""
    if graph.defect(v) != "delta":
        raise NoDefectAtSeed(f"vertex {v!r} carries a Kirchhoff condition")
    K = graph.degree(v)
    if K < 1:
        raise PreconditionError(f"vertex {v!r} has no incident edges")
    A, lam = star_closed_form(K, params.p, params.mu, params.rho)
    U = np.zeros(graph.n_vertices)
    U[graph.index[v]] = A
    return CandidateSolution(graph, params, U, lam, meta={"seed": v, "K": K})


def _newton_step(c: CandidateSolution, F: np.ndarray) -> np.ndarray:
    J = jacobian(c)
    # equilibrate rows and columns so the conditioning test ignores the
    # natural scale of lam and U (both may be large for p near 4)
    r = np.max(np.abs(J), axis=1)
    r[r == 0] = 1.0
    Js = J / r[:, None]
    s = np.max(np.abs(Js), axis=0)
    s[s == 0] = 1.0
    Js = Js / s
    cond = np.linalg.cond(Js)
    if not np.isfinite(cond) or cond > COND_LIMIT:
        raise SingularJacobian(f"Jacobian condition estimate {cond:.3e}", cond=float(cond))
    return np.linalg.solve(Js, -F / r) / s


def newton_solve(graph: MetricGraph, params: ProblemParams, seed: CandidateSolution,
                 tol: float = 1e-10, max_iter: int = 50, max_halvings: int = 30) -> CandidateSolution:
    """Damped Newton on ``(U, lam)`` with step halving on the residual max-norm."""
    c = CandidateSolution(graph, params, seed.U, seed.lam)
    noncompact = not graph.is_compact
    n = graph.n_vertices
    F = residual(c)
    nrm = np.max(np.abs(F))
    if not np.isfinite(nrm):
        raise PreconditionError("seed residual is not finite")
    history = [float(nrm)]
    it = 0
    while nrm > tol:
        if it >= max_iter:
            raise MaxIterExceeded(f"no convergence in {max_iter} iterations (residual {nrm:.3e})",
                                  residual=float(nrm), lam=c.lam)
        dx = _newton_step(c, F)
        alpha = 1.0
        accepted = False
        domain_blocked = False
        for _ in range(max_halvings + 1):
            lam_t = c.lam + alpha * dx[n]
            if noncompact and lam_t <= LAMBDA_FLOOR:
                domain_blocked = True
                alpha *= 0.5
                continue
            trial = c.with_state(c.U + alpha * dx[:n], lam_t)
            try:
                Ft = residual(trial)
            except (ResonantEdge, NonDecaying):
                alpha *= 0.5
                continue
            nt = np.max(np.abs(Ft))
            if np.isfinite(nt) and nt < (1.0 - 1e-4 * alpha) * nrm:
                c, F, nrm = trial, Ft, nt
                accepted = True
                break
            alpha *= 0.5
        if not accepted:
            if domain_blocked:
                raise LeftDomain("every damped step crossed lam <= 0 on a noncompact graph", lam=c.lam)
            raise MaxIterExceeded(f"line search failed after {max_halvings} halvings "
                                  f"(residual {nrm:.3e})", residual=float(nrm), lam=c.lam)
        history.append(float(nrm))
        it += 1
    if nrm > 0:
        # one polishing step: resolves vertex values far below the tolerance
        # (e.g. exponentially small values at distant vertices)
        try:
            dx = _newton_step(c, F)
            trial = c.with_state(c.U + dx[:n], c.lam + dx[n])
            if not (noncompact and trial.lam <= LAMBDA_FLOOR):
                nt = np.max(np.abs(residual(trial)))
                if nt <= max(nrm, tol):
                    c, nrm = trial, nt
                    history.append(float(nrm))
        except ComputationFailed:
            pass
    out = c.normalized()
    return replace(out, meta={"iterations": it, "residual_history": history, **seed.meta})


@dataclass(frozen=True)
class SolutionReport:
    residual_norm: float
    mass: float
    mass_error: float
    kinetic: float
    defect_sum: float
    energy: float
    energy_identity: float
    nehari_gap: float
    nehari_tolerance: float
    positivity: float
    positive: bool
    lam: float
    lam_sign: int
    is_solution: bool
    notes: tuple = ()

    def as_dict(self):
        d = dict(self.__dict__)
        d["notes"] = list(self.notes)
        return d


def sample_profile(c: CandidateSolution, spacing: float = POSITIVITY_SPACING,
                   max_samples: int = 200_000):
    """Yield ``(edge, x, u(x))`` on every edge; half-lines cut where the
    profile has decayed by ``e^-40``."""
    for e, coef in c.edge_coefficients():
        if e.is_halfline:
            L = 40.0 / math.sqrt(c.lam) if c.lam > 0 else 1.0
        else:
            L = e.length
        m = int(min(max_samples, math.ceil(L / spacing))) + 1
        x = np.linspace(0.0, L, m)
        yield e, x, coef(x)


def verify(c: CandidateSolution, tol: float = 1e-10) -> SolutionReport:
    """Certify a candidate with independent integral identities."""
    notes = []
    p, rho, mu = c.params.p, c.params.rho, c.params.mu
    try:
        F = residual(c)
        res = float(np.max(np.abs(F)))
        coefs = c.edge_coefficients()
    except (ResonantEdge, NonDecaying) as exc:
        notes.append(f"{exc.code}: {exc}")
        nan = float("nan")
        return SolutionReport(nan, nan, nan, nan, nan, nan, nan, nan, nan, nan, False, c.lam,
                              int(np.sign(c.lam)), False, tuple(notes))
    mass = kinetic = 0.0
    for _, coef in coefs:
        m, k = ek.edge_integrals(coef)
        mass += m
        kinetic += k
    defect_sum = float(np.sum(np.abs(c.U[c.graph.defect_mask]) ** p))
    energy = 0.5 * kinetic - rho / p * defect_sum
    energy_identity = (p - 2) / (2 * p) * kinetic - c.lam * mu / p
    gap = abs(rho * defect_sum - kinetic - c.lam * mass)
    gap_tol = 1e-8 * (1.0 + kinetic)
    positivity = min((float(np.min(u)) for _, _, u in sample_profile(c)), default=float("nan"))
    positive = _strictly_positive(c, coefs)
    if mass == 0:
        notes.append("zero state: mass vanishes, not a solution")
    if c.lam <= 0 and not c.graph.is_compact:
        notes.append("lam <= 0 on a noncompact graph")
    is_solution = bool(res <= tol and gap <= gap_tol and mass > 0 and abs(mass - mu) <= 1e-8)
    if not is_solution and mass > 0:
        notes.append(f"not certified: residual {res:.3e}, Nehari gap {gap:.3e}")
    return SolutionReport(
        residual_norm=res, mass=mass, mass_error=abs(mass - mu), kinetic=kinetic,
        defect_sum=defect_sum, energy=energy, energy_identity=energy_identity,
        nehari_gap=gap, nehari_tolerance=gap_tol, positivity=positivity, positive=positive,
        lam=c.lam, lam_sign=int(np.sign(c.lam)), is_solution=is_solution, notes=tuple(notes),
    )


def _strictly_positive(c, coefs) -> bool:
    """Sign of the profile from the closed forms.

    On decaying, affine and hyperbolic pieces the profile is a nonnegative
    combination of the end values, so positive end values settle it even when
    interior samples underflow to zero. Oscillatory pieces are sampled.
    """
    for e, coef in coefs:
        if coef.u0 <= 0 or (coef.ul is not None and coef.ul <= 0):
            return False
        if coef.kind == ek.TRIGONOMETRIC:
            x = np.linspace(0.0, e.length, int(math.ceil(e.length / POSITIVITY_SPACING)) + 1)
            if np.min(coef(x)) <= 0:
                return False
    return True


def _signature(c: CandidateSolution) -> np.ndarray:
    return np.append(np.sort(np.abs(c.U)), c.lam)


def multi_seed(graph: MetricGraph, params: ProblemParams, tol: float = 1e-10,
               max_iter: int = 50, homotopy: bool = True):
    """Try a star seed at every delta vertex; return ``(solutions, failures)``.

    Solutions are verified and deduplicated by the distance between
    ``(sorted |U|, lam)`` signatures. A seed whose direct Newton run fails is
    retried through edge-length continuation from a stretched graph when
    ``homotopy`` is set, and then through :func:`lambda_sweep`.
    """
    found, failures = [], []
    for v in graph.vertices:
        if graph.defect(v) != "delta" or graph.degree(v) == 0:
            continue
        try:
            seed = star_seed(graph, v, params)
        except CriticalExponent:
            raise
        try:
            sol = newton_solve(graph, params, seed, tol=tol, max_iter=max_iter)
        except ComputationFailed as exc:
            if not homotopy or not graph.bounded:
                failures.append({"seed": v, "error": exc.code, "message": str(exc)})
                continue
            sol = None
            for fallback in (_stretch_fallback, lambda_sweep):
                try:
                    sol = fallback(graph, params, v, tol=tol)
                    break
                except ComputationFailed as exc2:
                    log.debug("fallback %s failed at seed %s: %s", fallback.__name__, v, exc2)
            if sol is None:
                failures.append({"seed": v, "error": exc.code, "message": str(exc)})
                continue
        rep = verify(sol, tol=tol)
        if not rep.is_solution:
            failures.append({"seed": v, "error": "NotCertified", "message": "; ".join(rep.notes)})
            continue
        sig = _signature(sol)
        if all(np.max(np.abs(sig - _signature(s))) > DEDUP_DISTANCE for s, _ in found):
            found.append((sol, rep))
    return found, failures


def _stretch_fallback(graph, params, v, tol):
    from .continuation import solve_by_stretching
    return solve_by_stretching(graph, params, v, tol=tol)


def _vertex_solve(graph, params, lam, U, tol=1e-12, max_iter=60):
    """Solve the vertex conditions alone at fixed ``lam`` (damped Newton)."""
    c = CandidateSolution(graph, params, U, lam)
    mask = graph.defect_mask
    p, rho = params.p, params.rho
    dtn, gram, _ = assemble(graph, lam)
    U = c.U.copy()

    def G(V):
        return dtn @ V + np.where(mask, rho * np.abs(V) ** (p - 2) * V, 0.0)

    g = G(U)
    scale = max(1.0, np.max(np.abs(dtn @ U)))
    for _ in range(max_iter):
        nrm = np.max(np.abs(g))
        if nrm <= tol * scale:
            return U, float(U @ gram @ U)
        J = dtn + np.diag(np.where(mask, (p - 1) * rho * np.abs(U) ** (p - 2), 0.0))
        try:
            dU = np.linalg.solve(J, -g)
        except np.linalg.LinAlgError as exc:
            raise SingularJacobian("singular vertex Jacobian in lambda sweep", lam=lam) from exc
        alpha = 1.0
        for _ in range(30):
            Ut = U + alpha * dU
            gt = G(Ut)
            if np.max(np.abs(gt)) < nrm:
                U, g = Ut, gt
                break
            alpha *= 0.5
        else:
            raise MaxIterExceeded("vertex line search failed", lam=lam)
    raise MaxIterExceeded("vertex solve did not converge", lam=lam)


def lambda_sweep(graph: MetricGraph, params: ProblemParams, v: str, tol: float = 1e-10,
                 ratio: float = 1.25, lam_min: float = 1e-10, lam_max: float = 1e12,
                 decay: float = 30.0) -> CandidateSolution:
    """Locate a solution by marching ``lam`` instead of ``mu``.

    At each fixed ``lam`` only the vertex conditions are solved, continuing
    the star profile at ``v`` from a value of ``lam`` where it is accurate.
    Since ``lam`` is the sweep variable, folds of the mass curve are passed
    without trouble. The first sign change of ``mass - mu`` is then polished
    by :func:`newton_solve`. Only ``lam > 0`` is searched.
    """
    seed = star_seed(graph, v, params)
    K, p, rho = seed.meta["K"], params.p, params.rho
    lam0 = seed.lam
    if graph.bounded:
        lam0 = max(lam0, (decay / min(e.length for e in graph.bounded)) ** 2)
    U0 = np.zeros(graph.n_vertices)
    U0[graph.index[v]] = (K * math.sqrt(lam0) / rho) ** (1.0 / (p - 2.0))
    U0, m0 = _vertex_solve(graph, params, lam0, U0)
    mu = params.mu
    for up in (False, True):
        lam, U, m, r = lam0, U0, m0, ratio
        while lam_min < lam < lam_max:
            lam_t = lam * r if up else lam / r
            try:
                U_t, m_t = _vertex_solve(graph, params, lam_t, U)
            except ComputationFailed:
                r = math.sqrt(r)
                if r < 1.0 + 1e-6:
                    break
                continue
            if (m - mu) * (m_t - mu) <= 0:
                # interpolate in log(lam), then polish on the full system
                t = (mu - m) / (m_t - m) if m_t != m else 0.5
                lam_s = math.exp((1 - t) * math.log(lam) + t * math.log(lam_t))
                U_s = np.sqrt(mu / (U @ assemble(graph, lam)[1] @ U)) * ((1 - t) * U + t * U_t)
                return newton_solve(graph, params, CandidateSolution(graph, params, U_s, lam_s), tol=tol)
            lam, U, m = lam_t, U_t, m_t
            r = min(ratio, r * 1.2)
    raise ComputationFailed(f"lambda sweep found no mass crossing for seed {v!r}")
