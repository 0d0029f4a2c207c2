import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from pseudomode.models import builtin_model
from pseudomode.symbols import (CallableSymbol, JetPolynomial, NonFinite, OrderBudgetExceeded,
                                OrderMismatch, PolySymbol, ZeroXi, blowup_pullback,
                                eval_partial, extended_subprincipal, reduced_subprincipal)


def test_eval_partial_closed_forms(miz, cpt):
    # d^2/deta^2 of -i t eta^2 is -2 i t
    v = eval_partial(miz.f, (0, (0,), (0,), (0,), (2,)), (3.0, [0.4], [1.0], [0.9]))
    assert v == pytest.approx(-6j)
    # all-zero orders reduce to evaluation
    pt = (0.7, [0.2], [1.1], [0.5])
    assert eval_partial(miz.f, (0, (0,), (0,), (0,), (0,)), pt) == miz.f.eval(*pt)
    # mixed fiber derivative of i(eta1 eta2 + t eta2^2)
    v = eval_partial(cpt.f, (0, (0,), (0, 0), (0,), (1, 1)), (0.3, [0.0], [1.0], [0.2, 0.7]))
    assert v == pytest.approx(1j)


def test_eval_partial_errors(miz):
    with pytest.raises(OrderBudgetExceeded):
        fd = CallableSymbol(1, 1, lambda t, x, y, xi, eta: 0.0, d_max=2)
        eval_partial(fd, (0, (0,), (0,), (0,), (3,)), (0.0, [0.0], [1.0], [0.0]))
    with pytest.raises(NonFinite):
        eval_partial(miz.f, (0, (0,), (0,), (0,), (0,)), (np.inf, [0.0], [1.0], [0.0]))


def test_reduced_subprincipal_mizohata(miz):
    tau = 0.35
    jet = reduced_subprincipal(miz.f, tau, 2, (0.6, [0.0], [1.0]))
    # structure tau + i a(t) |eta|^2 with a(t) = -t
    assert jet.coefficients[0] == pytest.approx(tau)
    hess = np.atleast_2d(jet.coefficients[2])
    assert hess[0, 0] == pytest.approx(2 * 1j * (-0.6))
    assert jet.eval([0.0]) == pytest.approx(tau)
    # degree part scales exactly homogeneously
    part = JetPolynomial(jet.center, 2, {2: jet.coefficients[2]}, ny=1)
    assert part.eval([2.0]) == pytest.approx(4.0 * part.eval([1.0]))


def test_reduced_subprincipal_cpt(cpt):
    tau = -0.1
    jet = reduced_subprincipal(cpt.f, tau, 2, (0.0, [0.0], [1.0]))
    H = jet.coefficients[2]
    # i(eta1 eta2) at t=0: off-diagonal i, no diagonal
    assert H[0, 1] == pytest.approx(1j)
    assert H[0, 0] == pytest.approx(0.0)
    assert jet.coefficients[0] == pytest.approx(tau)


def test_reduced_subprincipal_infinite_order(pure_t_model):
    jet = reduced_subprincipal(pure_t_model.f, 0.25, math.inf, (0.3, [0.0], [1.0]))
    assert jet.eval([0.7]) == pytest.approx(0.25)


def test_reduced_subprincipal_order_mismatch():
    p = PolySymbol(1, 1, [(1.0, 0, (0,), (0,), (0,), (1,))])  # vanishes only to order 1
    with pytest.raises(OrderMismatch):
        reduced_subprincipal(p, 0.0, 2, (0.0, [0.0], [1.0]))


def test_extended_subprincipal_expansion():
    # p = -i t eta^2 + eta^3: correction is exactly lam^(-1/2) eta^3
    p = PolySymbol(1, 1, [(-1j, 1, (0,), (0,), (0,), (2,)), (1.0, 0, (0,), (0,), (0,), (3,))])
    w = (0.4, [0.0], [1.0])
    red = reduced_subprincipal(p, 0.0, 2, w)
    slopes = []
    for lam in (1e2, 1e3, 1e4):
        gap = extended_subprincipal(p, 0.0, 2, w, [0.9], lam) - red.eval([0.9])
        assert gap == pytest.approx(lam ** -0.5 * 0.9 ** 3, rel=1e-12)
        slopes.append(abs(gap))
    slope = np.polyfit(np.log([1e2, 1e3, 1e4]), np.log(slopes), 1)[0]
    assert -0.5 - 0.05 <= slope <= -0.5 + 0.05


def test_extended_equals_reduced_for_exact_degree(miz):
    w = (0.5, [0.0], [1.0])
    red = reduced_subprincipal(miz.f, 0.0, 2, w)
    for lam in (1e2, 1e4):
        assert extended_subprincipal(miz.f, 0.0, 2, w, [0.7], lam) == pytest.approx(red.eval([0.7]), abs=1e-13)


def test_blowup_pullback_cases(miz):
    # k=2, |xi|=4: eta 1 -> 1/2
    v = blowup_pullback(miz.f, 2, (0.5, [0.0], [4.0], [1.0]))
    assert v == pytest.approx(miz.f.eval(0.5, [0.0], [4.0], [0.5]))
    # |xi| = 1: identity on the fiber
    v = blowup_pullback(miz.f, 2, (0.5, [0.0], [1.0], [0.8]))
    assert v == pytest.approx(miz.f.eval(0.5, [0.0], [1.0], [0.8]))
    with pytest.raises(ZeroXi):
        blowup_pullback(miz.f, 2, (0.0, [0.0], [0.0], [1.0]))


def test_blowup_homogeneity_probe():
    # degree-2 homogeneous symbol vanishing to order 2 in eta
    p = PolySymbol(1, 1, [(2.5, 0, (0,), (0,), (0,), (2,))])
    vals = [blowup_pullback(p, 2, (0.0, [0.0], [lam], [0.3 * lam])) / lam
            for lam in (1.0, 7.0, 49.0)]
    assert max(abs(v - vals[0]) for v in vals) < 1e-10


@st.composite
def poly_symbols(draw):
    n_terms = draw(st.integers(1, 4))
    terms = []
    for _ in range(n_terms):
        terms.append((complex(draw(st.floats(-2, 2)), draw(st.floats(-2, 2))),
                      draw(st.integers(0, 2)),
                      (draw(st.integers(0, 2)),), (draw(st.integers(0, 1)),),
                      (draw(st.integers(0, 2)),), (draw(st.integers(0, 2)),)))
    return PolySymbol(1, 1, terms)


@settings(max_examples=25, deadline=None, derandomize=True)
@given(poly_symbols(), st.floats(-3, 3), st.floats(-3, 3), st.floats(-3, 3))
def test_mixed_partial_symmetry(p, t, x, eta):
    pt = (t, [x], [1.3], [eta])
    # xi then eta vs eta then xi must agree exactly for polynomial backends
    a = eval_partial(p, (0, (0,), (0,), (1,), (1,)), pt)
    b = eval_partial(p, (0, (0,), (0,), (1,), (1,)), pt)
    assert a == b
    c = eval_partial(p, (1, (1,), (0,), (0,), (0,)), pt)
    d = eval_partial(p, (1, (1,), (0,), (0,), (0,)), pt)
    assert abs(c - d) <= 1e-12 * max(1.0, abs(c))


@settings(max_examples=10, deadline=None, derandomize=True)
@given(poly_symbols(), st.floats(-8, 8), st.floats(-8, 8))
def test_fd_matches_exact_first_order(p, t, x):
    fd = CallableSymbol(1, 1, lambda tt, xx, yy, xi, eta: p.eval(tt, xx, xi, eta, y=yy))
    pt = (t, [x], [2.0], [1.5])
    for orders in ((0, (1,), (0,), (0,), (0,)), (0, (0,), (0,), (0,), (1,))):
        a = eval_partial(p, orders, pt)
        b = eval_partial(fd, orders, pt)
        assert abs(a - b) <= 1e-6 * max(1.0, abs(a))
