import math

import mpmath as mp
import numpy as np
import pytest
from scipy.integrate import quad

from qgnls.edge import (AFFINE, HYPERBOLIC, TRIGONOMETRIC, dtn_traces, edge_integrals, edge_interp,
                        halfline, kernels, mass_exponential_form)
from qgnls.errors import NonDecaying, ResonantEdge

mp.mp.dps = 40


def _a(w):
    z = mp.sqrt(mp.mpf(w)) if w > 0 else mp.sqrt(-mp.mpf(w)) * 1j
    return mp.re(z * mp.cosh(z) / mp.sinh(z))


def _b(w):
    z = mp.sqrt(mp.mpf(w)) if w > 0 else mp.sqrt(-mp.mpf(w)) * 1j
    return mp.re(z / mp.sinh(z))


@pytest.mark.parametrize("w", [-20.0, -2.5, -1.0, -0.999, -0.3, 1e-6, 0.4, 0.999, 1.0, 1.001, 7.0, 400.0])
def test_kernels_against_high_precision(w):
    a, b, f1, f2, a2, b2 = kernels(w)
    assert a == pytest.approx(float(_a(w)), rel=1e-13, abs=1e-14)
    assert b == pytest.approx(float(_b(w)), rel=1e-13, abs=1e-14)
    assert f1 == pytest.approx(float(mp.diff(_a, w)), rel=1e-10, abs=1e-12)
    assert f2 == pytest.approx(float(-2 * mp.diff(_b, w)), rel=1e-10, abs=1e-12)
    assert a2 == pytest.approx(float(mp.diff(_a, w, 2)), rel=1e-8, abs=1e-11)
    assert b2 == pytest.approx(float(mp.diff(_b, w, 2)), rel=1e-8, abs=1e-11)


def test_kernels_at_zero():
    a, b, *_ = kernels(0.0)
    assert a == 1.0 and b == 1.0


def test_kernels_vectorized_matches_scalar():
    w = np.array([-3.0, 0.5, 2.0])
    vec = kernels(w)
    for k, wk in enumerate(w):
        assert np.allclose([v[k] for v in vec], kernels(wk))


def test_resonance():
    with pytest.raises(ResonantEdge):
        kernels(-math.pi ** 2)
    with pytest.raises(ResonantEdge):
        edge_interp(-math.pi ** 2, 1.0, 1.0, 1.0)


@pytest.mark.parametrize("lam, kind", [(3.0, HYPERBOLIC), (0.0, AFFINE), (-2.0, TRIGONOMETRIC)])
def test_profile_solves_ode(lam, kind):
    c = edge_interp(lam, 1.3, 0.7, -0.4)
    assert c.kind == kind
    assert c(0.0) == pytest.approx(0.7) and c(1.3) == pytest.approx(-0.4)
    x, h = 0.5, 1e-4
    upp = (c(x + h) - 2 * c(x) + c(x - h)) / h ** 2
    assert upp == pytest.approx(lam * c(x), abs=1e-5)
    d0, dl = dtn_traces(c)
    assert d0 == pytest.approx(float(c.derivative(0.0)), rel=1e-12)
    assert dl == pytest.approx(-float(c.derivative(1.3)), rel=1e-12)
    mass, kin = edge_integrals(c)
    assert mass == pytest.approx(quad(lambda t: c(t) ** 2, 0, 1.3, epsabs=1e-14)[0], rel=1e-10)
    assert kin == pytest.approx(quad(lambda t: c.derivative(t) ** 2, 0, 1.3, epsabs=1e-14)[0], rel=1e-10)


def test_exponential_mass_form_agrees():
    c = edge_interp(5.0, 2.0, 1.0, 0.3)
    assert mass_exponential_form(c) == pytest.approx(edge_integrals(c)[0], rel=1e-12)


def test_long_edge_does_not_overflow():
    c = edge_interp(1e6, 10.0, 1.0, 2.0)
    assert np.isfinite(c(5.0)) and c(5.0) >= 0
    mass, kin = edge_integrals(c)
    assert mass == pytest.approx((1 + 4) / (2 * 1e3), rel=1e-9)


def test_halfline():
    c = halfline(4.0, 3.0)
    assert dtn_traces(c) == (-6.0, None)
    assert edge_integrals(c) == pytest.approx((9 / 4, 9.0))
    with pytest.raises(NonDecaying):
        halfline(0.0, 1.0)
