"""Closed-form solutions of ``u'' = lam * u`` on one edge.

For a bounded edge of length ``l`` everything is expressed through the
dimensionless ``w = lam * l**2`` and the two kernels

    a(w) = z coth z,    b(w) = z / sinh z,      z = sqrt(w)

(analytically continued to ``z cot z`` and ``z / sin z`` for ``w < 0``).
With vertex traces ``u0 = u(0)`` and ``ul = u(l)``:

    d0 = u'(0)  = (b*ul - a*u0) / l
    dl = -u'(l) = (b*u0 - a*ul) / l
    mass    = l * (f1*(u0**2 + ul**2) + f2*u0*ul),   f1 = a',  f2 = -2 b'
    kinetic = (g1*(u0**2 + ul**2) - g2*u0*ul) / l,  g1 = (a + b**2)/2,  g2 = b*(a + 1)

(primes are d/dw). The identity ``d(DtN)/d lam = -(mass Gram matrix)`` is what
makes the lam-column of the vertex-system Jacobian exact.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction
from math import comb, factorial

import numpy as np

from .errors import NonDecaying, ResonantEdge

HYPERBOLIC = "hyperbolic"
AFFINE = "affine"
TRIGONOMETRIC = "trigonometric"
HALFLINE = "halfline-decay"

RESONANCE_TOL = 1e-12
UNRELIABLE_EXPONENT = 350.0
_SERIES_RADIUS = 1.0
_NTERMS = 30


def _bernoulli(m):
    # exact B_0..B_m (B_1 = -1/2 convention; only even indices are used)
    B = [Fraction(1)]
    for k in range(1, m + 1):
        B.append(-sum(comb(k + 1, j) * B[j] for j in range(k)) / (k + 1))
    return B


_BN = _bernoulli(2 * _NTERMS)
_A_COEF = np.array([float(4 ** n * _BN[2 * n] / factorial(2 * n)) for n in range(_NTERMS)])
_B_COEF = np.array([float((2 - 4 ** n) * _BN[2 * n] / factorial(2 * n)) for n in range(_NTERMS)])


def _poly(coef, w, deriv=0):
    c = np.asarray(coef, dtype=float)
    for _ in range(deriv):
        c = c[1:] * np.arange(1, len(c))
    return np.polynomial.polynomial.polyval(w, c)


def kernels(w):
    """Return ``a, b, f1, f2, a2, b2`` at ``w`` (arrays or scalars).

    ``a2``/``b2`` are the second w-derivatives of ``a``/``b``.
    Raises :class:`ResonantEdge` when ``sin z`` vanishes for ``w < 0``.
    """
    w = np.asarray(w, dtype=float)
    scalar = w.ndim == 0
    w = np.atleast_1d(w)
    a = np.empty_like(w)
    b = np.empty_like(w)
    f1 = np.empty_like(w)
    f2 = np.empty_like(w)
    a2 = np.empty_like(w)
    b2 = np.empty_like(w)

    small = np.abs(w) < _SERIES_RADIUS
    if small.any():
        ws = w[small]
        a[small] = _poly(_A_COEF, ws)
        b[small] = _poly(_B_COEF, ws)
        f1[small] = _poly(_A_COEF, ws, 1)
        f2[small] = -2.0 * _poly(_B_COEF, ws, 1)
        a2[small] = _poly(_A_COEF, ws, 2)
        b2[small] = _poly(_B_COEF, ws, 2)

    hyp = w >= _SERIES_RADIUS
    if hyp.any():
        z = np.sqrt(w[hyp])
        e2 = -np.expm1(-2.0 * z)
        coth = (2.0 - e2) / e2
        csch = 2.0 * np.exp(-z) / e2
        a[hyp] = z * coth
        b[hyp] = z * csch
    trig = w <= -_SERIES_RADIUS
    if trig.any():
        z = np.sqrt(-w[trig])
        s = np.sin(z)
        if np.any(np.abs(s) < RESONANCE_TOL):
            raise ResonantEdge("sin(sqrt(-lam) l) vanishes: Dirichlet problem on the edge is not uniquely solvable",
                               w=float(w[trig][np.abs(s) < RESONANCE_TOL][0]))
        a[trig] = z * np.cos(z) / s
        b[trig] = z / s
    big = ~small
    if big.any():
        wa, aa, bb = w[big], a[big], b[big]
        f1b = (aa - bb * bb) / (2.0 * wa)
        f2b = bb * (aa - 1.0) / wa
        f1[big] = f1b
        f2[big] = f2b
        a2[big] = (bb * f2b - f1b) / (2.0 * wa)
        b2[big] = -0.5 * (bb * f1b - 0.5 * f2b * (aa + 1.0)) / wa
    if scalar:
        return tuple(float(x[0]) for x in (a, b, f1, f2, a2, b2))
    return a, b, f1, f2, a2, b2


@dataclass(frozen=True)
class EdgeCoefficients:
    """Solution of ``u'' = lam u`` on one edge, stored by its traces.

    For half-lines ``u0`` is the amplitude and ``ul`` is ``None``.
    """

    kind: str
    lam: float
    length: float
    u0: float
    ul: float | None

    @property
    def amplitude(self) -> float:
        return self.u0

    @property
    def reliable(self) -> bool:
        """False when the raw exponential pair (a, b) would overflow."""
        if self.kind != HYPERBOLIC:
            return True
        return math.sqrt(self.lam) * self.length <= UNRELIABLE_EXPONENT

    @property
    def ab(self) -> tuple[float, float]:
        """Coefficients of the textbook representation of the profile.

        hyperbolic: a e^{sx} + b e^{-sx}; affine: a x + b;
        trigonometric: a cos(wx) + b sin(wx); half-line: (0, u0).
        """
        u0, ul, ell = self.u0, self.ul, self.length
        if self.kind == HALFLINE:
            return 0.0, u0
        if self.kind == AFFINE:
            return (ul - u0) / ell, u0
        if self.kind == TRIGONOMETRIC:
            om = math.sqrt(-self.lam)
            return u0, (ul - u0 * math.cos(om * ell)) / math.sin(om * ell)
        s = math.sqrt(self.lam)
        with np.errstate(over="ignore"):
            E = math.exp(min(s * ell, 700.0))
            a = (ul * E - u0) / (E * E - 1.0) if s * ell < 700 else ul / E
            b = (u0 - ul / E) / (1.0 - 1.0 / (E * E))
        return a, b

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        u0, ul, ell, lam = self.u0, self.ul, self.length, self.lam
        if self.kind == HALFLINE:
            return u0 * np.exp(-math.sqrt(lam) * x)
        if self.kind == AFFINE:
            return u0 + (ul - u0) * x / ell
        if self.kind == TRIGONOMETRIC:
            om = math.sqrt(-lam)
            return (u0 * np.sin(om * (ell - x)) + ul * np.sin(om * x)) / math.sin(om * ell)
        s = math.sqrt(lam)
        den = -math.expm1(-2.0 * s * ell)

        def ratio(y):
            # sinh(s y) / sinh(s l) without overflow
            return np.exp(-s * (ell - y)) * (-np.expm1(-2.0 * s * y)) / den

        return u0 * ratio(ell - x) + ul * ratio(x)

    def derivative(self, x):
        x = np.asarray(x, dtype=float)
        u0, ul, ell, lam = self.u0, self.ul, self.length, self.lam
        if self.kind == HALFLINE:
            s = math.sqrt(lam)
            return -s * u0 * np.exp(-s * x)
        if self.kind == AFFINE:
            return np.full_like(x, (ul - u0) / ell)
        if self.kind == TRIGONOMETRIC:
            om = math.sqrt(-lam)
            return om * (-u0 * np.cos(om * (ell - x)) + ul * np.cos(om * x)) / math.sin(om * ell)
        s = math.sqrt(lam)
        den = -math.expm1(-2.0 * s * ell)

        def ratio(y):
            # cosh(s y) / sinh(s l)
            return np.exp(-s * (ell - y)) * (1.0 + np.exp(-2.0 * s * y)) / den

        return s * (-u0 * ratio(ell - x) + ul * ratio(x))


def edge_interp(lam: float, length: float, u0: float, ul: float) -> EdgeCoefficients:
    """Unique solution of ``u'' = lam u`` on ``[0, length]`` with given end values."""
    if not length > 0 or math.isinf(length):
        raise ValueError(f"edge length must be finite and positive, got {length}")
    if lam > 0:
        kind = HYPERBOLIC
    elif lam == 0:
        kind = AFFINE
    else:
        kind = TRIGONOMETRIC
        if abs(math.sin(math.sqrt(-lam) * length)) < RESONANCE_TOL:
            raise ResonantEdge(f"resonant edge: sin(sqrt({-lam}) * {length}) = 0", lam=lam, length=length)
    return EdgeCoefficients(kind, float(lam), float(length), float(u0), float(ul))


def halfline(lam: float, amplitude: float) -> EdgeCoefficients:
    """Decaying solution ``amplitude * exp(-sqrt(lam) x)`` on a half-line."""
    if lam <= 0 and amplitude != 0:
        raise NonDecaying(f"lam = {lam} <= 0 with nonzero half-line amplitude is not in L^2",
                          lam=lam, amplitude=amplitude)
    return EdgeCoefficients(HALFLINE, float(lam), math.inf, float(amplitude), None)


def dtn_traces(c: EdgeCoefficients) -> tuple[float, float | None]:
    """Outgoing derivative traces ``(u'(0), -u'(l))``; ``(u'(0), None)`` on a half-line."""
    if c.kind == HALFLINE:
        if c.u0 == 0:
            return 0.0, None
        return -math.sqrt(c.lam) * c.u0, None
    a, b, *_ = kernels(c.lam * c.length ** 2)
    ell = c.length
    return (b * c.ul - a * c.u0) / ell, (b * c.u0 - a * c.ul) / ell


def edge_integrals(c: EdgeCoefficients) -> tuple[float, float]:
    """Exact ``(int u^2, int u'^2)`` over the edge."""
    if c.kind == HALFLINE:
        if c.u0 == 0:
            return 0.0, 0.0
        if c.lam <= 0:
            raise NonDecaying("half-line profile does not decay", lam=c.lam)
        s = math.sqrt(c.lam)
        return c.u0 ** 2 / (2.0 * s), s * c.u0 ** 2 / 2.0
    a, b, f1, f2, _, _ = kernels(c.lam * c.length ** 2)
    u0, ul, ell = c.u0, c.ul, c.length
    sq = u0 * u0 + ul * ul
    mass = ell * (f1 * sq + f2 * u0 * ul)
    kinetic = (0.5 * (a + b * b) * sq - b * (a + 1.0) * u0 * ul) / ell
    return mass, kinetic


def mass_exponential_form(c: EdgeCoefficients) -> float:
    """Mass from the raw pair ``a e^{sx} + b e^{-sx}`` (hyperbolic edges only).

    ``2 a b l + a^2 (e^{2sl} - 1)/(2s) - b^2 (e^{-2sl} - 1)/(2s)``; kept as an
    independent cross-check of :func:`edge_integrals` for moderate ``s l``.
    """
    if c.kind != HYPERBOLIC:
        raise ValueError("exponential form applies to lam > 0 bounded edges")
    a, b = c.ab
    s, ell = math.sqrt(c.lam), c.length
    return (2 * a * b * ell + a * a * math.expm1(2 * s * ell) / (2 * s)
            - b * b * math.expm1(-2 * s * ell) / (2 * s))
