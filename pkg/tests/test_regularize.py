import dataclasses
import math

import numpy as np
import pytest

from oscint import expr as E
from oscint.calculus import Box, SymbolFn, build_cutoff, estimate_growth
from oscint.errors import ConeIntersectsSP, DegenerateFit, RegionTouchesCriticalSet
from oscint.regularize import (XBall, apply_power, apply_reducer, build_fourier_reducer,
                               build_reducer, build_theta_reducer, verify_transpose_identity)

from conftest import build


def _eval(e, X, T):
    return np.broadcast_to(E.lambdify(e)(X, T), X.shape[1:])


def test_linear_coefficients(linear):
    R = build_reducer(linear)
    rng = np.random.default_rng(0)
    X = rng.uniform(-2, 2, (1, 100))
    T = rng.choice([-1, 1], 100) * rng.uniform(2 * linear.cutoff.r1, 1e3, 100)
    T = T[None, :]
    x, t = X[0], T[0]
    eta = t ** 2 * (1 + x ** 2)
    assert np.allclose(_eval(R.A[0], X, T), x / (1 + x ** 2), rtol=1e-12)
    assert np.allclose(_eval(R.B[0], X, T), t / eta, rtol=1e-12)


def _growth(e, phase):
    if e is E.ZERO:
        return -math.inf
    try:
        return estimate_growth(e, phase.box, s=phase.dims.s).slope
    except DegenerateFit:  # vanishes on every sample
        return -math.inf


def test_kg_coefficient_orders(kg):
    R = build_reducer(kg)
    tol = 0.05
    assert max(_growth(a, kg) for a in R.A) <= 0 + tol
    assert max(_growth(b, kg) for b in R.B) <= -1 + tol
    assert _growth(R.c_im, kg) <= -1 + tol


def test_moyal_coefficient_orders(moyal):
    R = build_reducer(moyal)
    tol = 0.05
    assert max(_growth(a, moyal) for a in R.A) <= -1 + tol
    assert max(_growth(b, moyal) for b in R.B) <= -2 + tol


@pytest.mark.parametrize("name,params", [("linear", {}), ("kg2pt", {}), ("distorted", {"nu": 3}),
                                         ("moyal-euclid", {})])
def test_transpose_identity(name, params):
    ph = build(name, **params)
    assert verify_transpose_identity(build_reducer(ph), ph, samples=1000, seed=0) <= 1e-9


def test_identity_exact_on_plateau(kg):
    R = build_reducer(kg)
    r0 = kg.cutoff.r0
    assert verify_transpose_identity(R, kg, 500, theta_range=(1e-3, 0.99 * r0)) <= 1e-15


def test_corrupted_reducer_detected(kg):
    R = dataclasses.replace(build_reducer(kg), c_re=E.ZERO)
    r0 = kg.cutoff.r0
    res = verify_transpose_identity(R, kg, 200, theta_range=(1e-3, 0.99 * r0))
    assert res == pytest.approx(1.0, abs=1e-12)


def test_apply_zero(kg):
    R = build_reducer(kg)
    out = apply_reducer(R, SymbolFn(E.ZERO, kg.dims, 0.0))
    assert out.expr is E.ZERO and out.imag is E.ZERO


def test_order_drop_kg(kg):
    R = build_reducer(kg)
    bump = build_cutoff(1.0, 2.0, 4, kind="x").expr
    Vu = apply_reducer(R, SymbolFn(bump, kg.dims, 0.0))
    g = max(_growth(Vu.expr, kg), _growth(Vu.imag, kg))
    assert g <= -1 + 0.05


@pytest.mark.parametrize("name", ["linear", "kg2pt", "moyal-euclid"])
def test_order_drop_all(name):
    ph = build(name)
    R = build_reducer(ph)
    u = E.parse("1+x1^2", ph.dims)
    m = _growth(u, ph)
    Vu = apply_reducer(R, SymbolFn(u, ph.dims, m))
    assert max(_growth(Vu.expr, ph), _growth(Vu.imag, ph)) <= m - ph.mu + 0.15


def test_linearity(kg):
    R = build_reducer(kg)
    rng = np.random.default_rng(4)
    X = rng.uniform(-2, 2, (4, 100))
    T = rng.normal(size=(3, 100)) * 5
    u = E.parse("x1*t1 + sqrt(1+t2^2)", kg.dims)
    w = E.parse("exp(-t3^2)*x2", kg.dims)
    Vu, Vw = (apply_reducer(R, SymbolFn(e, kg.dims, 1.0)) for e in (u, w))
    Vs = apply_reducer(R, SymbolFn(E.add(u, w), kg.dims, 1.0))
    V3 = apply_reducer(R, SymbolFn(E.mul(E.const(3), u), kg.dims, 1.0))
    for part in ("expr", "imag"):
        a, b = _eval(getattr(Vs, part), X, T), _eval(getattr(Vu, part), X, T)
        c = _eval(getattr(Vw, part), X, T)
        assert np.allclose(a, b + c, rtol=1e-12, atol=1e-12)
        assert np.allclose(_eval(getattr(V3, part), X, T), 3 * b, rtol=1e-12, atol=1e-12)


def test_apply_power_matches_jets(kg):
    from oscint.jets import reduced_evaluator
    R = build_reducer(kg)
    u = E.mul(build_cutoff(1.0, 2.0, 4, kind="x").expr, E.parse("1/(1+t1^2)", kg.dims))
    sym = apply_power(R, SymbolFn(u, kg.dims, -2.0), 2)
    ev = reduced_evaluator(R, u, E.ZERO, 2)
    rng = np.random.default_rng(9)
    X = rng.uniform(-0.7, 0.7, (4, 300))
    T = rng.normal(size=(3, 300)) * 4
    ref = _eval(sym.expr, X, T) + 1j * _eval(sym.imag, X, T)
    assert np.allclose(ev(X, T), ref, rtol=1e-10, atol=1e-12)


def test_theta_reducer_linear():
    ph = build("linear")
    R = build_theta_reducer(ph, XBall((1.0,), 0.5))
    assert R.B == ()
    assert verify_transpose_identity(R, None, 500, box=Box(((0.5, 1.5),)),
                                     theta_range=(1e-2, 1e3)) <= 1e-9
    with pytest.raises(RegionTouchesCriticalSet):
        build_theta_reducer(ph, XBall((0.2,), 0.5))


def test_theta_reducer_kg_off_cone(kg):
    R = build_theta_reducer(kg, XBall((1.0, 0.5, 0.0, 0.0), 0.25))
    assert R.kind == "theta_only" and R.B == ()
    assert verify_transpose_identity(R, None, 500, box=Box(tuple((c - 0.1, c + 0.1) for c in
                                                                 (1.0, 0.5, 0.0, 0.0))),
                                     theta_range=(1e-2, 1e3)) <= 1e-9


def test_fourier_reducer_kg(kg):
    x0 = (1.0, 1.0, 0.0, 0.0)
    zeta = build_cutoff(0.3, 0.36, 4, kind="x", center=x0)
    chi = build_cutoff(2.0, 4.0, 3)
    k = 16 * np.array([1.0, -1.0, 0, 0]) / math.sqrt(2)
    R = build_fourier_reducer(kg, zeta, chi, k)
    box = Box(tuple((c - 0.4, c + 0.4) for c in x0))
    assert verify_transpose_identity(R, None, 500, box=box, theta_range=(1e-2, 1e3), k=k) <= 1e-9
    # outside supp zeta the operator has no x-part
    rng = np.random.default_rng(0)
    X = np.array(x0)[:, None] + 0.5 + rng.uniform(0, 1, (4, 50))
    T = rng.normal(size=(3, 50)) * 10
    Kp = np.repeat(k[:, None], 50, axis=1)
    vals = E.compile_exprs(list(R.B))(X, T, Kp)
    assert all(np.all(np.asarray(v) == 0) for v in vals)
    with pytest.raises(ConeIntersectsSP):
        build_fourier_reducer(kg, zeta, chi, 16 * np.array([-1.0, 1.0, 0, 0]) / math.sqrt(2))
