import numpy as np
import pytest

from qgnls.continuation import Branch, continue_branch, detect_fold, solve_by_stretching
from qgnls.errors import MinStepReached, PreconditionError
from qgnls.graph import pendant_star, star
from qgnls.system import ProblemParams, newton_solve, star_closed_form, star_seed, verify


def _star_solution(K=2, p=6.0, rho=1.0, mu=1.0):
    g = star(K)
    pr = ProblemParams(p, rho, mu)
    return g, pr, newton_solve(g, pr, star_seed(g, "v", pr))


def test_mu_branch_matches_closed_form():
    g, pr, s = _star_solution()
    br = continue_branch(g, pr, s, 2.0, parameter="mu")
    A, lam = star_closed_form(2, 6.0, 2.0)
    assert br.last.param == 2.0
    assert br.last.solution.lam == pytest.approx(lam, abs=1e-10)
    assert br.last.solution.value("v") == pytest.approx(A, abs=1e-10)
    assert br.folds == []


def test_rho_branch_every_point_on_closed_form():
    g, pr, s = _star_solution(rho=0.5)
    br = continue_branch(g, pr, s, 1.0, parameter="rho")
    for pt in br.points:
        _, lam = star_closed_form(2, 6.0, 1.0, rho=pt.param)
        assert pt.solution.lam == pytest.approx(lam, rel=1e-10)
        assert pt.report.is_solution


def test_length_parameter():
    g = pendant_star(1.0)
    pr = ProblemParams(6.0)
    s = solve_by_stretching(g, pr, "c")
    br = continue_branch(g, pr, s, 1.5, parameter="length:e0")
    end = br.last.solution
    assert end.graph.edge("e0").length == 1.5
    assert verify(end).is_solution


def test_stretching_reaches_true_geometry():
    g = pendant_star(0.5)
    s = solve_by_stretching(g, ProblemParams(8.0), "c")
    assert s.graph.edge("e0").length == 0.5
    assert verify(s).is_solution


def test_unverified_start_rejected():
    g, pr, s = _star_solution()
    with pytest.raises(PreconditionError):
        continue_branch(g, pr, s.with_state(s.U * 1.1, s.lam), 2.0, parameter="mu")


def test_step_budget_exhausted_returns_partial_branch():
    g, pr, s = _star_solution()
    with pytest.raises(MinStepReached) as exc:
        continue_branch(g, pr, s, 2.0, parameter="mu", max_steps=3)
    assert isinstance(exc.value.branch, Branch)
    assert len(exc.value.branch) == 4


def test_detect_fold():
    folds = detect_fold([0.0, 0.5, 0.9, 1.0, 0.8, 0.6])
    assert folds == [{"index": 3, "bracket": (0.9, 1.0, 0.8)}]
    assert detect_fold(np.linspace(0, 1, 5)) == []


def test_branch_csv():
    g, pr, s = _star_solution()
    br = continue_branch(g, pr, s, 1.2, parameter="mu")
    lines = br.to_csv().strip().splitlines()
    assert lines[0].split(",")[:5] == ["param", "lambda", "mass", "energy", "residual"]
    assert len(lines) == len(br) + 1
