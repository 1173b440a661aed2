"""Integration-by-parts operators that make oscillatory integrals converge.

Three first-order operators are built symbolically:

* the global operator ``V = a . grad_theta + b . grad_x + c`` with
  ``V^t e^{i phi} = e^{i phi}``;
* a fiber-only variant that differentiates in ``theta`` alone and is valid
  on an x-region that stays away from the critical set;
* a covector-localized operator ``V_k = b . grad_x + c`` for the phase
  ``phi - k.x``, with ``k`` entering as symbolic parameters ``k1..kn``.

All coefficients are purely imaginary apart from a real zeroth-order part,
so they are stored as real expressions ``A, B, c_im`` with ``a = iA``,
``b = iB`` and ``c = c_re + i c_im``. Division by ``eta`` is regularized as
``(1-chi) / (eta + eps)`` where ``eps`` is positive only where ``1 - chi``
vanishes; the result is the same function but is finite everywhere.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np
from scipy.optimize import minimize

from . import expr as E
from .calculus import (Box, CutoffFn, PhaseFn, ScanConfig, SymbolFn, build_cutoff,
                       direction_set, step_down)
from .errors import ConeIntersectsSP, EvaluationFailed, ExpressionSwell, RegionTouchesCriticalSet
from .expr import Dims, Expr

SWELL_CAP = 200_000


@dataclass(frozen=True)
class XBall:
    """Closed ball in x-space; the amplitude region for fiber-only reduction."""

    center: tuple[float, ...]
    radius: float

    def sample(self, rng: np.random.Generator, count: int) -> np.ndarray:
        n = len(self.center)
        v = rng.standard_normal((n, count))
        v /= np.linalg.norm(v, axis=0, keepdims=True)
        r = self.radius * rng.random(count) ** (1 / n)
        pts = np.asarray(self.center)[:, None] + v * r
        axes = [np.asarray(self.center)[:, None]]
        for i in range(n):
            for sgn in (-1, 1):
                p = np.array(self.center, dtype=float)
                p[i] += sgn * self.radius
                axes.append(p[:, None])
        return np.concatenate(axes + [pts], axis=1)

    def project(self, x: np.ndarray) -> np.ndarray:
        c = np.asarray(self.center)
        d = x - c
        nd = np.linalg.norm(d)
        return x if nd <= self.radius else c + d * (self.radius / nd)

    def to_dict(self) -> dict:
        return {"center": list(self.center), "radius": self.radius}


@dataclass(frozen=True)
class Reducer:
    kind: str
    dims: Dims
    A: tuple[Expr, ...]
    B: tuple[Expr, ...]
    c_re: Expr
    c_im: Expr
    mu: float
    phase: Expr
    target: Expr
    meta: dict = field(default_factory=dict, compare=False)

    @property
    def a(self) -> tuple[Expr, ...]:
        """Imaginary parts of the fiber coefficients (``a_i = i * A_i``)."""
        return self.A

    @property
    def b(self) -> tuple[Expr, ...]:
        return self.B

    def size(self) -> int:
        return E.node_count(*self.A, *self.B, self.c_re, self.c_im)


def _quotient(numer: Expr, eta: Expr, eps: Expr) -> Expr:
    return E.mul(numer, E.power(E.add(eta, eps), -1))


def _finish(kind, dims, A, B, c_re, phase, target, mu, meta) -> Reducer:
    div = [E.diff(Ai, E.var("t", i)) for i, Ai in enumerate(A)]
    div += [E.diff(Bj, E.var("x", j)) for j, Bj in enumerate(B)]
    c_im = E.add(*div)
    return Reducer(kind, dims, tuple(A), tuple(B), c_re, c_im, mu, phase, target, meta)


def build_reducer(phase: PhaseFn) -> Reducer:
    """Global operator with ``a_i = i(1-chi)|t|^2 d_ti phi / eta``,
    ``b_j = i(1-chi) d_xj phi / eta`` and ``c = div a + div b + chi``."""
    dims = phase.dims
    phi = phase.expr
    chi = phase.cutoff
    from .calculus import eta_expr
    eta = eta_expr(phi, dims)
    q = _quotient(chi.complement, eta, chi.core())
    tsq = E.sum_squares(E.ts(dims.s))
    A = [E.mul(q, tsq, g) for g in E.gradient(phi, E.ts(dims.s))]
    B = [E.mul(q, g) for g in E.gradient(phi, E.xs(dims.n))]
    return _finish("global_V", dims, A, B, chi.expr, phi, E.ONE, phase.mu,
                   {"cutoff": chi.to_dict()})


def transpose_residual_exprs(R: Reducer) -> tuple[Expr, Expr]:
    """``(V^t e^{i Phi}) e^{-i Phi} - target`` split into real and imaginary parts."""
    n, s = R.dims.n, R.dims.s
    gt = E.gradient(R.phase, E.ts(s))
    gx = E.gradient(R.phase, E.xs(n))
    re = E.add(E.dot(R.A, gt), E.dot(R.B, gx[:len(R.B)]), R.c_re, E.neg(R.target))
    div = [E.diff(Ai, E.var("t", i)) for i, Ai in enumerate(R.A)]
    div += [E.diff(Bj, E.var("x", j)) for j, Bj in enumerate(R.B)]
    im = E.sub(R.c_im, E.add(*div))
    return re, im


def _theta_shell(rng, s: int, count: int, lo: float, hi: float) -> np.ndarray:
    v = rng.standard_normal((s, count))
    v /= np.linalg.norm(v, axis=0, keepdims=True)
    r = np.exp(rng.uniform(math.log(lo), math.log(hi), count))
    return v * r


def verify_transpose_identity(R: Reducer, phase: PhaseFn | None = None, samples: int = 1000,
                              seed: int = 0, box: Box | None = None,
                              theta_range: tuple[float, float] | None = None,
                              k: Sequence[float] | None = None) -> float:
    """Max ``|V^t e^{i phi} / e^{i phi} - target|`` over seeded sample points.

    Points are drawn from ``box`` times a log-uniform shell
    ``D <= |theta| <= 2**10`` unless ``theta_range`` is given.
    """
    rng = np.random.default_rng(seed)
    if box is None:
        box = phase.box if phase is not None else R.meta["box"]
    if theta_range is None:
        D = phase.certificate.D if phase is not None else R.meta.get("D", 1.0)
        theta_range = (D, 2.0 ** 10)
    X = box.sample(rng, samples) if isinstance(box, Box) else box.sample(rng, samples)[:, :samples]
    lo, hi = theta_range
    T = _theta_shell(rng, R.dims.s, X.shape[1], max(lo, 1e-12), max(hi, lo * (1 + 1e-12)))
    Kp = None
    if R.kind == "fourier_Vk":
        kv = np.asarray(k if k is not None else R.meta["k"], dtype=float)
        Kp = np.repeat(kv[:, None], X.shape[1], axis=1)
    re, im = transpose_residual_exprs(R)
    c = E.compile_exprs([re, im])
    vr, vi = c(X, T, Kp)
    res = np.hypot(vr, vi)
    if not np.all(np.isfinite(res)):
        j = int(np.argmax(~np.isfinite(res)))
        raise EvaluationFailed("transpose residual not finite",
                               {"x": X[:, j].tolist(), "theta": T[:, j].tolist()})
    return float(res.max())


def _check_size(u: tuple[Expr, Expr], cap: int):
    size = E.node_count(*u)
    if size > cap:
        raise ExpressionSwell(
            f"reduced amplitude has {size} nodes (cap {cap}); lower p or raise the cap",
            {"nodes": size, "cap": cap})


def apply_reducer(R: Reducer, u: SymbolFn, cap: int = SWELL_CAP) -> SymbolFn:
    """``V[u] = a . grad_theta u + b . grad_x u + c u`` on a complex amplitude."""
    ur, ui = u.parts
    ts, xs = E.ts(R.dims.s), E.xs(R.dims.n)

    def L(w: Expr) -> Expr:
        terms = [E.mul(Ai, E.diff(w, t)) for Ai, t in zip(R.A, ts)]
        terms += [E.mul(Bj, E.diff(w, x)) for Bj, x in zip(R.B, xs)]
        return E.add(*terms)

    re = E.add(E.mul(R.c_re, ur), E.neg(E.mul(R.c_im, ui)), E.neg(L(ui)))
    im = E.add(E.mul(R.c_re, ui), E.mul(R.c_im, ur), L(ur))
    _check_size((re, im), cap)
    return SymbolFn(re, u.dims, u.order - R.mu, "derived", im)


def apply_power(R: Reducer, u: SymbolFn, p: int, cap: int = SWELL_CAP) -> SymbolFn:
    for _ in range(p):
        u = apply_reducer(R, u, cap)
    return u


# ------------------------------------------------------------- fiber-only form

def _grad_theta_ratio(phase: PhaseFn):
    gt = E.gradient(phase.expr, E.ts(phase.dims.s))
    c = E.compile_exprs(gt)
    s = phase.dims.s

    def ratio(x: np.ndarray, dirs: np.ndarray, lam: float) -> np.ndarray:
        X = np.repeat(x[:, None], dirs.shape[0], axis=1) if x.ndim == 1 else x
        g = np.array(c(X, (dirs * lam).T))
        return np.linalg.norm(g, axis=0) / lam ** (phase.mu - 1)

    return ratio


def _min_ratio_over_region(phase: PhaseFn, region: XBall, lam: float, rng,
                           samples: int = 64) -> tuple[float, np.ndarray, np.ndarray]:
    ratio = _grad_theta_ratio(phase)
    s = phase.dims.s
    dirs = direction_set(s, None, 0)
    pts = region.sample(rng, samples)
    best = (math.inf, None, None)
    vals = np.array([ratio(pts[:, i], dirs, lam) for i in range(pts.shape[1])])
    order = np.argsort(vals, axis=None)[:4]
    for flat in order:
        i, j = np.unravel_index(flat, vals.shape)
        z0 = np.concatenate([pts[:, i], dirs[j]])
        n = phase.dims.n

        def obj(z):
            x = region.project(z[:n])
            v = z[n:]
            nv = np.linalg.norm(v)
            if nv == 0:
                return 1e300
            return float(ratio(x, (v / nv)[None, :], lam)[0] ** 2)

        res = minimize(obj, z0, method="Nelder-Mead",
                       options={"xatol": 1e-10, "fatol": 1e-16, "maxiter": 4000})
        val = math.sqrt(max(res.fun, 0.0))
        if val < best[0]:
            x = region.project(res.x[:n])
            v = res.x[n:] / np.linalg.norm(res.x[n:])
            best = (val, x, v)
    return best


def build_theta_reducer(phase: PhaseFn, avoid: XBall, psi: CutoffFn | None = None,
                        eps_crit: float = 1e-3, seed: int = 0) -> Reducer:
    """Fiber-only operator valid for amplitudes supported in ``avoid``.

    ``a_i = i(1-psi) d_ti phi / |grad_theta phi|^2``, ``c = div a + psi``;
    on the region its transpose reproduces ``e^{i phi}`` exactly (the conic
    cutoff near the critical set vanishes there).
    """
    dims = phase.dims
    rng = np.random.default_rng(seed)
    lam_top = float(phase.certificate.ladder.values[-1])
    val, x, v = _min_ratio_over_region(phase, avoid, lam_top, rng)
    if val < eps_crit:
        raise RegionTouchesCriticalSet(
            "the amplitude region meets the critical set",
            {"x": x.tolist(), "direction": v.tolist(), "ratio": val, "lambda": lam_top})
    if psi is None:
        psi = _zero_set_cutoff(phase, avoid, val, rng)
    gt = E.gradient(phase.expr, E.ts(dims.s))
    eta = E.sum_squares(gt)
    q = _quotient(psi.complement, eta, psi.core())
    A = [E.mul(q, g) for g in gt]
    meta = {"region": avoid.to_dict(), "psi": psi.to_dict(), "box": _ball_box(avoid),
            "D": psi.r1, "min_ratio": val}
    return _finish("theta_only", dims, A, [], psi.expr, phase.expr, E.ONE, phase.mu, meta)


def _ball_box(b: XBall) -> Box:
    # cube inscribed in the ball, used only to draw identity-check samples
    h = b.radius / math.sqrt(len(b.center))
    return Box(tuple((c - h, c + h) for c in b.center))


def _zero_set_cutoff(phase: PhaseFn, region: XBall, asym: float, rng) -> CutoffFn:
    """Radial bump that is 1 on twice the observed extent of the zero set of
    ``grad_theta phi`` over the region."""
    ratio = _grad_theta_ratio(phase)
    s = phase.dims.s
    dirs = direction_set(s, None, 0)
    lams = 2.0 ** np.arange(-6, 15, 0.25)
    pts = region.sample(rng, 32)
    extent = 0.0
    for i in range(pts.shape[1]):
        for lam in lams:
            r = ratio(pts[:, i], dirs, lam) * lam ** (phase.mu - 1) / max(1.0, lam) ** (phase.mu - 1)
            if np.any(r < 0.5 * asym):
                extent = max(extent, lam)
    r0 = max(1.0, 2.0 * extent)
    return build_cutoff(r0, 2 * r0, s)


# ---------------------------------------------------------- covector-localized

@dataclass(frozen=True)
class CovectorBound:
    min_ratio: float
    witness: dict


def covector_bound(phase: PhaseFn, zeta: CutoffFn, D: float, k: Sequence[float],
                 directions: np.ndarray | None = None, lams: np.ndarray | None = None,
                 points: int = 5) -> CovectorBound:
    """Min of ``|grad_x phi - k| / (lam^mu + |k|)`` over the support of ``zeta``
    times the fiber cone and ``lam >= D``."""
    n, s = phase.dims.n, phase.dims.s
    dirs = directions if directions is not None else direction_set(s, None, 0)
    k = np.asarray(k, dtype=float)
    if lams is None:
        # coarse ladder plus a fine one around the scale of k, where a near hit lives
        kn = max(float(np.linalg.norm(k)), D)
        lams = np.union1d(D * 2.0 ** np.arange(0, 15, 0.5), kn * 2.0 ** np.arange(-2, 2.01, 1 / 16))
        lams = lams[lams >= D]
    gx = E.compile_exprs(E.gradient(phase.expr, E.xs(n)))
    c = np.asarray(zeta.center or (0.0,) * n)
    h = zeta.r1 / math.sqrt(n)
    X = Box(tuple((ci - h, ci + h) for ci in c)).grid(points)
    P, Dn, L = X.shape[1], dirs.shape[0], lams.size
    Xr = np.repeat(X, Dn * L, axis=1)
    T = np.broadcast_to(dirs[None, :, None, :] * lams[None, None, :, None],
                        (P, Dn, L, s)).reshape(-1, s).T
    g = np.array(gx(Xr, T)) - k[:, None]
    lamr = np.broadcast_to(lams[None, None, :], (P, Dn, L)).ravel()
    r = np.linalg.norm(g, axis=0) / (lamr ** phase.mu + np.linalg.norm(k))
    box = Box(tuple((ci - h, ci + h) for ci in c))

    def obj(z):
        xv, tv = z[:n, None], z[n:, None]
        lam = max(float(np.linalg.norm(tv)), D)
        gv = np.array(gx(xv, tv)).ravel() - k
        return float(np.linalg.norm(gv) / (lam ** phase.mu + np.linalg.norm(k)))

    # the grid only brackets the minimum; polish the best few candidates
    best_r, best_z = float(np.min(r)), None
    bounds = list(box.bounds) + [(None, None)] * s
    for j in np.argsort(r)[:4]:
        z0 = np.concatenate([Xr[:, j], T[:, j]])
        sol = minimize(obj, z0, method="L-BFGS-B", bounds=bounds)
        if sol.fun < best_r and np.linalg.norm(sol.x[n:]) >= D:
            best_r, best_z = float(sol.fun), sol.x
    if best_z is None:
        j = int(np.argmin(r))
        best_z = np.concatenate([Xr[:, j], T[:, j]])
    return CovectorBound(best_r, {"x": best_z[:n].tolist(), "theta": best_z[n:].tolist(),
                                  "k": k.tolist(), "ratio": best_r})


def build_fourier_reducer(phase: PhaseFn, zeta: CutoffFn, chi: CutoffFn, k: Sequence[float],
                          directions: np.ndarray | None = None, tol: float = 1e-2) -> Reducer:
    """``V_k = b . grad_x + c`` with ``b_j = i zeta (1-chi)(d_xj phi - k_j) / |grad_x phi - k|^2``.

    ``k`` is checked against the angle-separation bound on ``supp zeta``
    (raising :class:`ConeIntersectsSP` when it degenerates) and then enters
    the coefficients as parameters ``k1..kn``.
    """
    n, s = phase.dims.n, phase.dims.s
    chk = covector_bound(phase, zeta, chi.r0, k, directions)
    if chk.min_ratio < tol:
        raise ConeIntersectsSP("covector direction meets the stationary-phase set on the cone",
                               chk.witness)
    dims = Dims(n, s, n)
    kv = [E.var("k", j) for j in range(n)]
    G = [E.sub(g, kj) for g, kj in zip(E.gradient(phase.expr, E.xs(n)), kv)]
    eta = E.sum_squares(G)
    q = _quotient(E.mul(zeta.expr, chi.complement), eta, chi.core())
    B = [E.mul(q, g) for g in G]
    Phi = E.sub(phase.expr, E.dot(kv, E.xs(n)))
    target = E.mul(zeta.expr, chi.complement)
    meta = {"zeta": zeta.to_dict(), "chi": chi.to_dict(), "k": list(map(float, k)),
            "covector_bound": chk.min_ratio, "D": chi.r1,
            "box": Box(tuple((c - zeta.r0 / math.sqrt(n), c + zeta.r0 / math.sqrt(n))
                             for c in (zeta.center or (0.0,) * n)))}
    return _finish("fourier_Vk", dims, [], B, E.ZERO, Phi, target, phase.mu, meta)
