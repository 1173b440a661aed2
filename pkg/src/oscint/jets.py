"""Univariate Taylor-mode evaluation of expression DAGs.

A jet of degree ``d`` is an array of shape ``(d+1, N)`` holding the Taylor
coefficients of ``t -> e(z(t))`` at ``t = 0`` for ``N`` base points.

The reducers have the form ``V = iX + c`` with ``X`` a *real* vector field,
so along an integral curve ``gamma`` of ``X``

    (V^p u)(gamma(0)) = ((i d/dt + c(gamma(t)))^p u(gamma(t)))|_{t=0}.

:class:`ReducedEvaluator` uses this to evaluate ``V^p[u]`` numerically from
the symbolic coefficients without ever expanding the ``p``-fold derivative
expression, whose size grows roughly tenfold per application.
"""

from __future__ import annotations

import numpy as np

from . import expr as E
from .expr import Expr


def conv(a, b, d: int) -> np.ndarray:
    """Truncated Cauchy product of two jets."""
    if np.isscalar(a) or np.isscalar(b):
        return a * b
    out = np.empty((d + 1,) + np.broadcast_shapes(a.shape[1:], b.shape[1:]))
    for k in range(d + 1):
        out[k] = np.einsum("j...,j...->...", a[:k + 1], b[k::-1])
    return out


def recip(a, d: int) -> np.ndarray:
    if np.isscalar(a):
        return 1.0 / a
    w = np.empty_like(a, dtype=float)
    w[0] = 1.0 / a[0]
    for k in range(1, d + 1):
        w[k] = -np.einsum("j...,j...->...", a[1:k + 1], w[k - 1::-1]) * w[0]
    return w


def jsqrt(a, d: int) -> np.ndarray:
    if np.isscalar(a):
        return np.sqrt(a)
    w = np.empty_like(a, dtype=float)
    w[0] = np.sqrt(a[0])
    inv = 1.0 / (2 * w[0])
    for k in range(1, d + 1):
        acc = a[k] - (np.einsum("j...,j...->...", w[1:k], w[k - 1:0:-1]) if k > 1 else 0)
        w[k] = acc * inv
    return w


def jexp(a, d: int) -> np.ndarray:
    if np.isscalar(a):
        return np.exp(a)
    w = np.empty_like(a, dtype=float)
    w[0] = np.exp(a[0])
    j = np.arange(1, d + 1).reshape((-1,) + (1,) * (a.ndim - 1))
    for k in range(1, d + 1):
        w[k] = np.einsum("j...,j...->...", j[:k] * a[1:k + 1], w[k - 1::-1]) / k
    return w


def jlog(a, d: int) -> np.ndarray:
    w = np.empty_like(a, dtype=float)
    w[0] = np.log(a[0])
    inv = 1.0 / a[0]
    j = np.arange(1, d + 1).reshape((-1,) + (1,) * (a.ndim - 1))
    for k in range(1, d + 1):
        acc = a[k]
        if k > 1:
            acc = acc - np.einsum("j...,j...->...", j[:k - 1] * w[1:k], a[k - 1:0:-1]) / k
        w[k] = acc * inv
    return w


def jsincos(a, d: int):
    if np.isscalar(a):
        return np.sin(a), np.cos(a)
    s = np.empty_like(a, dtype=float)
    c = np.empty_like(a, dtype=float)
    s[0], c[0] = np.sin(a[0]), np.cos(a[0])
    j = np.arange(1, d + 1).reshape((-1,) + (1,) * (a.ndim - 1))
    for k in range(1, d + 1):
        ja = j[:k] * a[1:k + 1]
        s[k] = np.einsum("j...,j...->...", ja, c[k - 1::-1]) / k
        c[k] = -np.einsum("j...,j...->...", ja, s[k - 1::-1]) / k
    return s, c


def jpow(a, e: int, d: int):
    if np.isscalar(a):
        return a ** e
    if e < 0:
        return jpow(recip(a, d), -e, d)
    result = None
    base = a
    while e:
        if e & 1:
            result = base if result is None else conv(result, base, d)
        e >>= 1
        if e:
            base = conv(base, base, d)
    return result


def jg(a, k: int, d: int):
    """Jet of ``exp(-1/u) u^-k`` (zero where ``u <= 0``)."""
    if np.isscalar(a):
        return float(E._g_np(np.array([a]), k)[0])
    pos = a[0] > 0
    safe = np.array(a, dtype=float)
    safe[0] = np.where(pos, a[0], 1.0)
    safe[1:] = np.where(pos, a[1:], 0.0)
    v = -recip(safe, d)
    if k:
        v = v - k * jlog(safe, d)
    with np.errstate(under="ignore", over="ignore"):
        w = jexp(v, d)
    return np.where(pos, w, 0.0)


class JetProgram:
    """Topologically ordered DAG that can be run on jets."""

    def __init__(self, roots):
        self.roots = list(roots)
        self.order = E.postorder(self.roots)

    def run(self, values: dict, d: int, roots=None) -> list:
        """``values`` maps variable keys ``('x', i)`` etc. to jets or scalars."""
        memo: dict[int, object] = {}
        order = self.order if roots is None else E.postorder(roots)
        with np.errstate(all="ignore"):
            for node in order:
                op = node.op
                if op == "const":
                    v = float(node.value)
                elif op == "var":
                    v = values[node.value]
                else:
                    args = [memo[id(c)] for c in node.args]
                    if op == "add":
                        scal = 0.0
                        v = None
                        for b in args:
                            if np.isscalar(b):
                                scal += b
                            else:
                                v = b if v is None else v + b
                        if v is None:
                            v = scal
                        elif scal:
                            v = v.copy()
                            v[0] = v[0] + scal
                    elif op == "mul":
                        scal = 1.0
                        arrs = []
                        for b in args:
                            if np.isscalar(b):
                                scal *= b
                            else:
                                arrs.append(b)
                        v = scal
                        if arrs:
                            v = arrs[0]
                            for b in arrs[1:]:
                                v = conv(v, b, d)
                            if scal != 1.0:
                                v = scal * v
                    elif op == "pow":
                        v = jpow(args[0], node.value, d)
                    elif op == "sqrt":
                        v = jsqrt(args[0], d)
                    elif op == "exp":
                        v = jexp(args[0], d)
                    elif op == "sin":
                        v = jsincos(args[0], d)[0]
                    elif op == "cos":
                        v = jsincos(args[0], d)[1]
                    elif op == "g":
                        v = jg(args[0], node.value, d)
                    else:  # pragma: no cover
                        raise ValueError(op)
                memo[id(node)] = v
        wanted = self.roots if roots is None else roots
        return [memo[id(r)] for r in wanted]


def _as_jet(v, d: int, N: int) -> np.ndarray:
    if np.isscalar(v):
        out = np.zeros((d + 1, N))
        out[0] = v
        return out
    v = np.asarray(v)
    if v.shape[1:] != (N,):
        v = np.broadcast_to(v, (d + 1, N)).copy()
    return v


class ReducedEvaluator:
    """Evaluate ``V^p[u]`` for a reducer ``V = iX + c`` and complex ``u``.

    ``A`` (fiber) and ``B`` (position) are the real components of ``X``;
    ``c_re``, ``c_im`` the zeroth-order coefficient; ``u = (ur, ui)``.
    With ``p = 0`` this is plain evaluation of ``u``.
    """

    def __init__(self, A, B, c_re: Expr, c_im: Expr, ur: Expr, ui: Expr, p: int,
                 n: int, s: int, chunk: int = 8192):
        self.A, self.B = list(A), list(B)
        self.n, self.s, self.p = n, s, p
        self.field = self.B + self.A
        self.fvars = [("x", j) for j in range(len(self.B))] + [("t", i) for i in range(len(self.A))]
        self.c_re, self.c_im, self.ur, self.ui = c_re, c_im, ur, ui
        self.prog_field = JetProgram(self.field)
        self.prog_all = JetProgram(self.field + [c_re, c_im, ur, ui])
        self.chunk = chunk

    def __call__(self, X: np.ndarray, T: np.ndarray, Kp: np.ndarray | None = None) -> np.ndarray:
        N = X.shape[1]
        out = np.empty(N, dtype=complex)
        for lo in range(0, N, self.chunk):
            hi = min(N, lo + self.chunk)
            kp = None if Kp is None else Kp[:, lo:hi] if np.ndim(Kp) == 2 else Kp
            out[lo:hi] = self._eval(X[:, lo:hi], T[:, lo:hi], kp)
        return out

    def _eval(self, X, T, Kp):
        d = self.p
        N = X.shape[1]
        vals = {}
        for i in range(self.n):
            j = np.zeros((d + 1, N))
            j[0] = X[i]
            vals[("x", i)] = j
        for i in range(self.s):
            j = np.zeros((d + 1, N))
            j[0] = T[i]
            vals[("t", i)] = j
        if Kp is not None:
            Kp = np.asarray(Kp, dtype=float)
            for i in range(Kp.shape[0]):
                vals[("k", i)] = Kp[i] if Kp.ndim == 2 else float(Kp[i])
        # Picard iteration on Taylor coefficients of the integral curve:
        # after m passes the first m+1 coefficients are exact
        for _ in range(d):
            comps = self.prog_field.run(vals, d)
            for key, f in zip(self.fvars, comps):
                f = _as_jet(f, d, N)
                g = vals[key]
                g[1:] = f[:-1] / np.arange(1, d + 1)[:, None]
        res = self.prog_all.run(vals, d)
        k = len(self.field)
        cr, ci, wr, wi = (_as_jet(v, d, N) for v in res[k:k + 4])
        for step in range(d):
            deg = d - step - 1
            dwr = wr[1:deg + 2] * np.arange(1, deg + 2)[:, None]
            dwi = wi[1:deg + 2] * np.arange(1, deg + 2)[:, None]
            pr = conv(cr[:deg + 1], wr[:deg + 1], deg) - conv(ci[:deg + 1], wi[:deg + 1], deg)
            pi = conv(cr[:deg + 1], wi[:deg + 1], deg) + conv(ci[:deg + 1], wr[:deg + 1], deg)
            wr, wi = pr - dwi, pi + dwr
        return wr[0] + 1j * wi[0]


def reduced_evaluator(R, ur: Expr, ui: Expr, p: int, chunk: int = 8192) -> ReducedEvaluator:
    if R is None or p == 0:
        return ReducedEvaluator([], [], E.ONE, E.ZERO, ur, ui, 0,
                                R.dims.n if R else 0, R.dims.s if R else 0, chunk)
    return ReducedEvaluator(R.A, R.B, R.c_re, R.c_im, ur, ui, p, R.dims.n, R.dims.s, chunk)
