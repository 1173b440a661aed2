import math

import numpy as np
import pytest
from scipy import integrate

from oscint import expr as E
from oscint.calculus import SymbolFn, validate_phase
from oscint.errors import NotConvergent
from oscint.quadrature import (RadialTransform, TestFn, choose_p, eval_pointwise, pair_direct,
                               pair_regularized, windowed_fourier)

from conftest import build, bump_1d, gaussian_symbol

SQPI = math.sqrt(math.pi)


def _oracle(fun, a, b):
    re = integrate.quad(lambda x: fun(x).real, a, b, epsabs=1e-13, epsrel=1e-13, limit=200)[0]
    im = integrate.quad(lambda x: fun(x).imag, a, b, epsabs=1e-13, epsrel=1e-13, limit=200)[0]
    return re + 1j * im


def _gauss_ft(x):
    return SQPI * np.exp(-np.asarray(x) ** 2 / 4)


def _shifted_gaussian(dims, c=1.0):
    # exp(-(t - c)^2) has transform sqrt(pi) exp(-x^2/4 + i c x)
    return SymbolFn(E.exp(E.neg(E.power(E.sub(E.Theta(1), E.const(c)), 2))), dims, -math.inf)


# ------------------------------------------------------------------ choose_p

def test_choose_p_pairing_examples():
    assert choose_p(0, 1, 3) == 4
    assert choose_p(-10, 1, 3) == 0
    assert choose_p(-math.inf, 1, 3) == 0
    assert choose_p(1, 1, 3) == 5
    assert choose_p(0, 2, 4) == 3


def test_choose_p_pointwise():
    assert choose_p(0, 2, 2, "pointwise") is None
    assert choose_p(-math.inf, 1, 1, "pointwise") == math.inf
    assert choose_p(-5, 1, 3, "pointwise") == 1
    assert choose_p(-4.5, 1, 3, "pointwise") == 1
    with pytest.raises(ValueError):
        choose_p(0, 0, 3)


# --------------------------------------------------------------- pointwise

def test_gaussian_pointwise(linear):
    xs = np.linspace(-2, 2, 9)
    res = eval_pointwise(gaussian_symbol(linear.dims), linear, xs[None, :])
    np.testing.assert_allclose(res.values, _gauss_ft(xs), rtol=1e-6)
    assert res.smoothness == math.inf


def test_kg_gaussian_at_origin(kg):
    res = eval_pointwise(gaussian_symbol(kg.dims), kg, np.zeros((4, 1)))
    assert abs(res.values[0] - math.pi ** 1.5) <= 1e-6 * math.pi ** 1.5


def test_pointwise_refused_when_not_integrable(moyal):
    with pytest.raises(NotConvergent):
        eval_pointwise(SymbolFn(E.ONE, moyal.dims, 0.0), moyal, np.zeros((2, 1)))


def test_pointwise_continuity(linear):
    a = _shifted_gaussian(linear.dims)
    jumps = []
    for n in (9, 17, 33):
        xs = np.linspace(-2, 2, n)
        v = eval_pointwise(a, linear, xs[None, :]).values
        jumps.append(np.max(np.abs(np.diff(v))))
    assert jumps[1] <= jumps[0] / 1.9 and jumps[2] <= jumps[1] / 1.9


# ----------------------------------------------------------------- pairing

def test_gaussian_pairing(linear):
    f = TestFn((0.0,), 1.0)
    ref = _oracle(lambda x: bump_1d(x) * _gauss_ft(x), -1, 1)
    res = pair_direct(gaussian_symbol(linear.dims), linear, f)
    assert abs(res.value - ref) <= max(res.abs_err, 1e-6)
    assert abs(res.value - ref) <= 1e-6


def test_shifted_gaussian_pairing_complex(linear):
    f = TestFn((0.3,), 0.8)
    ref = _oracle(lambda x: bump_1d(x - 0.3, 0.8) * _gauss_ft(x) * np.exp(1j * x), -0.5, 1.1)
    res = pair_direct(_shifted_gaussian(linear.dims), linear, f, engine="tensor")
    assert abs(ref.imag) > 0.1
    assert abs(res.value - ref) <= 1e-6


def test_zero_amplitude(linear):
    res = pair_direct(SymbolFn(E.ZERO, linear.dims, -math.inf), linear, TestFn.unit(1))
    assert res.value == 0


def test_direct_refuses_non_integrable(kg):
    with pytest.raises(NotConvergent):
        pair_direct(SymbolFn(E.ONE, kg.dims, 0.0), kg, TestFn.unit(4))


def test_conjugation_law(linear):
    neg = validate_phase(E.neg(linear.expr), linear.mu, linear.box, linear.dims)
    a, f = _shifted_gaussian(linear.dims), TestFn((0.2,), 1.0)
    v1 = pair_direct(a, linear, f, engine="tensor", strict=True).value
    v2 = pair_direct(a, neg, f, engine="tensor", strict=True).value
    assert abs(v1 - v2.conjugate()) <= 1e-10 * abs(v1)


def test_linearity_in_a_and_f(linear):
    a1, a2 = gaussian_symbol(linear.dims), _shifted_gaussian(linear.dims)
    a12 = SymbolFn(E.add(a1.expr, a2.expr), linear.dims, -math.inf)
    f = TestFn.unit(1)
    r1, r2, r12 = (pair_direct(a, linear, f, engine="tensor") for a in (a1, a2, a12))
    assert abs(r12.value - r1.value - r2.value) <= r1.abs_err + r2.abs_err + r12.abs_err + 1e-9
    f2 = TestFn((0.0,), 1.0, amplitude=2.5)
    assert abs(pair_direct(a1, linear, f2, engine="tensor").value - 2.5 * r1.value) <= 1e-8


def test_regularized_matches_direct_1d(linear):
    a, f = _shifted_gaussian(linear.dims), TestFn((0.1,), 0.9)
    d = pair_direct(a, linear, f)
    r = pair_regularized(a, linear, f, p=1, engine="tensor")
    assert r.p == 1
    assert abs(r.value - d.value) <= r.abs_err + d.abs_err + 1e-8


def test_regularized_p_stability_linear(linear):
    # a = 1 pairs to 2 pi f(0) for the linear phase
    a, f = SymbolFn(E.ONE, linear.dims, 0.0), TestFn.unit(1)
    r3 = pair_regularized(a, linear, f, p=3, engine="qmc", R_max=256.0, split=None)
    r4 = pair_regularized(a, linear, f, p=4, engine="qmc", R_max=256.0, split=None)
    assert abs(r3.value - r4.value) <= r3.abs_err + r4.abs_err
    assert abs(r3.value - 2 * math.pi) <= r3.abs_err + r3.tail_bound


def test_regularized_refuses_too_small_p(kg):
    with pytest.raises(NotConvergent):
        pair_regularized(SymbolFn(E.ONE, kg.dims, 0.0), kg, TestFn.unit(4), p=3)


# -------------------------------------------------------------- transforms

@pytest.mark.parametrize("q", [0.0, 1.5, 7.0, 30.0])
def test_radial_transform_1d(q):
    f = TestFn((0.0,), 0.7, beta=2.0)
    ref = integrate.quad(lambda x: bump_1d(x, 0.7, 2.0) * math.cos(q * x), -0.7, 0.7,
                         epsabs=1e-14, limit=400)[0]
    assert abs(float(np.real(RadialTransform(f)(q))) - ref) <= 1e-10


# ---------------------------------------------------------- windowed Fourier

@pytest.mark.parametrize("policy", ["direct", "x-analytic"])
def test_windowed_gaussian(linear, policy):
    psi, k = TestFn((0.3,), 0.5), 3.0
    ref = _oracle(lambda x: bump_1d(x - 0.3, 0.5) * _gauss_ft(x) * np.exp(-1j * k * x), -0.2, 0.8)
    res = windowed_fourier(gaussian_symbol(linear.dims), linear, psi, [k], policy=policy)
    assert abs(res.value - ref) <= 1e-6


def test_windowed_k0_is_pairing(linear):
    a, psi = _shifted_gaussian(linear.dims), TestFn((0.3,), 0.5)
    w = windowed_fourier(a, linear, psi, [0.0], policy="direct")
    d = pair_direct(a, linear, psi, engine="tensor")
    assert abs(w.value - d.value) <= w.abs_err + d.abs_err + 1e-9


def test_windowed_conjugate_symmetry(linear):
    a, psi = gaussian_symbol(linear.dims), TestFn((0.3,), 0.5)
    vp = windowed_fourier(a, linear, psi, [4.0], policy="direct")
    vm = windowed_fourier(a, linear, psi, [-4.0], policy="direct")
    assert abs(vp.value - vm.value.conjugate()) <= vp.abs_err + vm.abs_err + 1e-9
