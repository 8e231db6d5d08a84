import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from qgnls.errors import (CriticalExponent, NoDefectAtSeed, NonSmoothAtZero, PreconditionError)
from qgnls.graph import dumbbell, pendant_star, star, tadpole, two_hub
from qgnls.system import (CandidateSolution, ProblemParams, assemble, jacobian, multi_seed,
                          newton_solve, residual, star_closed_form, star_seed, verify)


def _fd_jacobian(c, eps=1e-7):
    x = c.x
    n = c.U.size
    J = np.zeros((n + 1, n + 1))
    for k in range(n + 1):
        xp, xm = x.copy(), x.copy()
        xp[k] += eps
        xm[k] -= eps
        cp = CandidateSolution(c.graph, c.params, xp[:n], xp[n])
        cm = CandidateSolution(c.graph, c.params, xm[:n], xm[n])
        J[:, k] = (residual(cp) - residual(cm)) / (2 * eps)
    return J


@pytest.mark.parametrize("graph", [two_hub(), tadpole(0.7), pendant_star(2.0), dumbbell(0.3, 2, 1)])
@pytest.mark.parametrize("lam", [0.3, 5.0])
def test_jacobian_matches_finite_differences(graph, lam):
    rng = np.random.default_rng(1)
    c = CandidateSolution(graph, ProblemParams(6.0, 0.8, 1.0), rng.uniform(0.2, 1.5, graph.n_vertices), lam)
    assert np.allclose(jacobian(c), _fd_jacobian(c), rtol=1e-6, atol=1e-6)


def test_envelope_identity():
    g = two_hub(1.2)
    lam, eps = 2.0, 1e-6
    dp, _, _ = assemble(g, lam + eps)
    dm, _, _ = assemble(g, lam - eps)
    _, gram, _ = assemble(g, lam)
    assert np.allclose((dp - dm) / (2 * eps), -gram, atol=1e-8)


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 6), st.floats(4.2, 10.0), st.floats(0.1, 5.0), st.floats(0.5, 1.0))
def test_star_closed_form_solves_the_system(K, p, mu, rho):
    A, lam = star_closed_form(K, p, mu, rho)
    c = CandidateSolution(star(K), ProblemParams(p, rho, mu), [A], lam)
    F = residual(c)
    scale = K * math.sqrt(lam) * A
    assert abs(F[0]) <= 1e-10 * scale
    assert abs(F[1]) <= 1e-10 * mu


def test_star_closed_form_p4_is_critical():
    with pytest.raises(CriticalExponent):
        star_closed_form(2, 4.0, 1.0)


def test_params_validation():
    for bad in [dict(p=2.0), dict(p=6.0, rho=0.3), dict(p=6.0, mu=0.0)]:
        with pytest.raises(PreconditionError):
            ProblemParams(**bad)


def test_nonsmooth_jacobian_at_zero():
    c = CandidateSolution(star(2), ProblemParams(2.5), [0.0], 1.0)
    with pytest.raises(NonSmoothAtZero):
        jacobian(c)


def test_seed_at_kirchhoff_vertex():
    g = two_hub().with_defects({"B": "kirchhoff"})
    with pytest.raises(NoDefectAtSeed):
        star_seed(g, "B", ProblemParams(6.0))


def test_newton_two_star():
    g = star(2)
    pr = ProblemParams(6.0)
    s = newton_solve(g, pr, star_seed(g, "v", pr))
    rep = verify(s)
    assert rep.is_solution and rep.positive
    assert rep.energy == pytest.approx(2 / 3, abs=1e-10)
    assert rep.lam_sign == 1
    # energy from the Nehari relation agrees with the direct sum
    assert rep.energy_identity == pytest.approx(rep.energy, abs=1e-10)


def test_verify_flags_perturbed_state():
    g = star(2)
    pr = ProblemParams(6.0)
    s = newton_solve(g, pr, star_seed(g, "v", pr))
    bad = s.with_state(s.U * 1.01, s.lam)
    rep = verify(bad)
    assert not rep.is_solution
    assert rep.nehari_gap > rep.nehari_tolerance


def test_sign_normalization():
    g = star(2)
    pr = ProblemParams(6.0)
    seed = star_seed(g, "v", pr)
    s = newton_solve(g, pr, seed.with_state(-seed.U, seed.lam))
    assert s.U[0] > 0


def test_multi_seed_distinct_and_verified():
    sols, failures = multi_seed(two_hub(), ProblemParams(6.0))
    lams = [s.lam for s, _ in sols]
    assert len(lams) >= 2
    assert all(r.is_solution for _, r in sols)
    assert len(set(np.round(lams, 6))) == len(lams)


def test_tadpole_small_lambda_branch():
    # the star seed branch misses this mass; the lambda sweep finds it
    sols, _ = multi_seed(tadpole(), ProblemParams(6.0, 1.0, 2.0))
    assert any(r.is_solution and r.positive for _, r in sols)
