import math

import numpy as np
import pytest

from qgnls import combinatorial as cb
from qgnls.errors import ExponentOutOfRange, NonzeroLambda, PreconditionError, SingularJacobian
from qgnls.graph import compact_core, dumbbell
from qgnls.system import CandidateSolution, ProblemParams


def _triangle():
    return cb.core_from_edges(["a", "b", "c"], [("a", "b", 1.0), ("b", "c", 1.0), ("c", "a", 1.0)])


def test_triangle_laplacian():
    core = _triangle()
    f = cb.CombinatorialField(core, [1.0, 0.0, 0.0])
    assert np.allclose(cb.laplacian(core, f).values, [-2.0, 1.0, 1.0])
    assert cb.seminorm(core, f) == pytest.approx(math.sqrt(2))
    L = cb.laplacian_matrix(core).toarray()
    assert np.allclose(L, L.T) and np.allclose(L.sum(axis=1), 0)


def test_loops_do_not_contribute():
    core = cb.core_from_edges(["a", "b"], [("a", "b", 2.0), ("a", "a", 1.0)])
    assert np.allclose(cb.laplacian_matrix(core).toarray(), [[-0.5, 0.5], [0.5, -0.5]])


def test_pinned_value_must_vanish():
    with pytest.raises(PreconditionError):
        cb.CombinatorialField(cb.single_edge_core(), [1.0, 1.0])


@pytest.mark.parametrize("ell", [0.5, 1.0, 3.0])
def test_single_edge_closed_form(ell):
    # f/ell = rho f^(p-1)  =>  f = (1/(rho ell))^(1/(p-2))
    core = cb.single_edge_core(ell)
    f = cb.solve_discrete(core, 6.0, 0.5, cb.CombinatorialField(core, [0.0, 1.0]), ledger=None)
    assert f.value("v2") == pytest.approx((1 / (0.5 * ell)) ** 0.25, rel=1e-12)
    lifted = cb.lift(core, f)
    assert lifted.kinetic() == pytest.approx(cb.seminorm(core, f) ** 2, rel=1e-12)
    assert abs(lifted.vertex_residual(6.0, 0.5)[1]) <= 1e-10


def test_zero_seed_is_singular():
    core = cb.single_edge_core()
    with pytest.raises(SingularJacobian):
        cb.solve_discrete(core, 6.0, 1.0, cb.CombinatorialField(core, [0.0, 0.0]), ledger=None)


def test_restrict_lift_roundtrip_on_graph():
    g = dumbbell(1.0, 1, 0)
    core = compact_core(g)
    f = cb.solve_discrete(core, 6.0, 1.0, cb.CombinatorialField(core, [0.0, 1.0]), ledger=None)
    m = cb.lift(core, f, g)
    back = cb.restrict(m)
    assert np.array_equal(back.values, f.values)
    assert back.pinned == f.pinned


def test_restrict_needs_zero_lambda():
    c = CandidateSolution(dumbbell(), ProblemParams(6.0), [0.0, 1.0], 0.5)
    with pytest.raises(NonzeroLambda):
        cb.restrict(c)


def test_ledger_running_sup():
    led = cb.SLedger()
    core = cb.single_edge_core()
    assert led.record(6.0, core, 0.3) == 0.3
    assert led.record(6.0, core, 0.1) == 0.3
    assert led.sup(6.0, core) == 0.3


def test_lattice_preconditions():
    with pytest.raises(ExponentOutOfRange):
        cb.lattice_demo(2, 8.0, 5)
    with pytest.raises(ExponentOutOfRange):
        cb.lattice_demo(3, 5.0, 5)


def test_small_lattice_symmetric_positive():
    f = cb.lattice_demo(3, 8.0, 4, ledger=None)
    assert f.meta["positive"]
    assert f.meta["symmetry_error"] <= 1e-12
    # boundary of the ball is pinned at zero
    assert np.all(f.values[~f.free_mask] == 0)


def test_norm_equivalence_single_edge():
    # one free vertex: [f] = |f(v2)| / sqrt(l) and ||f||_p = |f(v2)|
    core = cb.single_edge_core(4.0)
    assert cb.norm_equivalence_constant(core, 6.0, "v1", starts=3) == pytest.approx(0.5, rel=1e-10)
