"""Numerical microlocal scans: critical set, stationary-phase set, wave fronts.

* The critical set ``M(phi)`` collects rays ``(x, theta)`` along which
  ``|grad_theta phi(x, lam theta)| / lam^(mu-1)`` does not stay bounded
  below. Sampled directions are complemented by a Gauss-Newton search on
  the unit sphere, so that isolated critical directions are found exactly
  rather than only to the resolution of the direction grid.
* The stationary-phase set ``SP(phi)`` keeps covector directions that the
  asymptotic direction of ``grad_x phi`` along critical rays approaches.
* Wave-front probes fit the decay exponent of windowed Fourier transforms
  along a geometric ladder of frequencies.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field

import numpy as np

from . import expr as E
from .calculus import Box, Ladder, PhaseFn, SymbolFn, direction_set
from .errors import EvaluationFailed, OscintError, RegionTouchesCriticalSet
from .quadrature import WINDOW_BETA, TestFn, windowed_fourier
from .regularize import XBall, build_theta_reducer

EPS_CRIT = 1e-3
SLOPE_TOL = 0.1
ALPHA_TOL = 0.05
N_THRESHOLD = 6.0
N_SINGULAR = 1.5
RHO_LADDER = tuple(4.0 * 2.0 ** j for j in range(9))


def _unit(v: np.ndarray, axis: int = -1) -> np.ndarray:
    return v / np.linalg.norm(v, axis=axis, keepdims=True)


def _angle(u: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Angle between unit vectors along the last axis (broadcasting)."""
    # via the chord: arccos of the dot product loses precision near 0
    return 2 * np.arcsin(np.clip(np.linalg.norm(u - v, axis=-1) / 2, 0.0, 1.0))


# ---------------------------------------------------------- critical set

@dataclass
class RayVerdict:
    x: tuple[float, ...]
    direction: tuple[float, ...]
    slope: float
    min_ratio: float
    verdict: str
    ratios: tuple[float, ...] = ()

    def to_dict(self) -> dict:
        return {"x": list(self.x), "direction": list(self.direction), "slope": self.slope,
                "min_ratio": self.min_ratio, "verdict": self.verdict,
                "ratios": list(self.ratios)}


@dataclass
class CriticalScan:
    """Struct-of-arrays result of :func:`critical_set_scan`.

    ``points`` is ``(n, P)``; per point the sampled directions share one
    array ``directions`` of shape ``(D, s)``. Refined directions are stored
    per point in ``refined`` as ``(theta_hat, min_ratio, slope, ratios)``.
    """

    points: np.ndarray
    directions: np.ndarray
    lams: np.ndarray
    min_ratio: np.ndarray       # (P, D) over the tail rungs
    slope: np.ndarray           # (P, D)
    critical: np.ndarray        # (P, D) bool
    refined: list
    eps_crit: float
    slope_tol: float
    mu: float
    tail: slice = slice(None)

    def rays(self, include_regular: bool = False) -> list[RayVerdict]:
        out = []
        for p in range(self.points.shape[1]):
            x = tuple(map(float, self.points[:, p]))
            for d in range(self.directions.shape[0]):
                if self.critical[p, d] or include_regular:
                    out.append(RayVerdict(x, tuple(map(float, self.directions[d])),
                                          float(self.slope[p, d]), float(self.min_ratio[p, d]),
                                          "critical" if self.critical[p, d] else "regular"))
            for th, mr, sl, rs, crit in self.refined[p]:
                if crit or include_regular:
                    out.append(RayVerdict(x, tuple(map(float, th)), float(sl), float(mr),
                                          "critical" if crit else "regular",
                                          tuple(map(float, rs))))
        return out

    def critical_directions(self, p: int) -> np.ndarray:
        dirs = [self.directions[self.critical[p]]]
        ref = [th for th, _, _, _, crit in self.refined[p] if crit]
        if ref:
            dirs.append(np.array(ref))
        return np.concatenate(dirs, axis=0) if dirs else np.zeros((0, self.directions.shape[1]))

    def has_critical(self) -> np.ndarray:
        return np.array([self.critical[p].any() or any(r[4] for r in self.refined[p])
                         for p in range(self.points.shape[1])])

    def to_dict(self, include_regular: bool = False) -> dict:
        return {"thresholds": {"eps_crit": self.eps_crit, "slope_tol": self.slope_tol},
                "ladder": self.lams.tolist(), "points": self.points.shape[1],
                "directions": self.directions.shape[0],
                "critical_rays": int(self.critical.sum()
                                     + sum(r[4] for rr in self.refined for r in rr)),
                "rays": [r.to_dict() for r in self.rays(include_regular)]}


def _grad_theta(phase: PhaseFn):
    s = phase.dims.s
    g = E.gradient(phase.expr, E.ts(s))
    return E.compile_exprs(g), E.compile_exprs([E.diff(gi, E.Theta(j + 1))
                                                for gi in g for j in range(s)])


def _ratios(gfun, X: np.ndarray, dirs: np.ndarray, lams: np.ndarray, mu: float) -> np.ndarray:
    """``|grad_theta phi(x, lam d)| / lam^(mu-1)``, shape ``(P, D, L)``."""
    P, D, L = X.shape[1], dirs.shape[0], lams.size
    s = dirs.shape[1]
    out = np.empty((P, D, L))
    block = max(1, 2_000_000 // max(1, D * L))
    T = (dirs[:, :, None] * lams[None, None, :]).transpose(1, 0, 2).reshape(s, -1)
    for a in range(0, P, block):
        b = min(P, a + block)
        Xr = np.repeat(X[:, a:b], D * L, axis=1)
        Tr = np.tile(T, (1, b - a))
        with np.errstate(all="ignore"):
            g = np.array(gfun(Xr, Tr))
        out[a:b] = (np.sqrt((g ** 2).sum(axis=0)).reshape(b - a, D, L)
                    / lams[None, None, :] ** (mu - 1))
    if not np.all(np.isfinite(out)):
        raise EvaluationFailed("grad_theta phi is not finite on the scan",
                               {"nonfinite": int((~np.isfinite(out)).sum())})
    return out


def _classify(ratios: np.ndarray, lams: np.ndarray, tail: slice, eps: float, slope_tol: float):
    rt = ratios[..., tail]
    lt = np.log(lams[tail])
    lc = lt - lt.mean()
    with np.errstate(divide="ignore"):
        lr = np.log(np.maximum(rt, 1e-300))
    slope = (lr - lr.mean(axis=-1, keepdims=True)) @ lc / (lc @ lc)
    mn = rt.min(axis=-1)
    # a ratio that is already zero is critical regardless of trend
    crit = (mn < eps) | (slope < -slope_tol)
    return mn, slope, crit


def _refine(phase: PhaseFn, gfun, hfun, X: np.ndarray, starts: np.ndarray, lam: float,
            iters: int = 12) -> np.ndarray:
    """Gauss-Newton on the sphere for ``min |grad_theta phi(x, lam u)|``.

    ``X`` is ``(n, N)``, ``starts`` is ``(N, s)``; returns refined unit vectors.
    """
    u = starts.copy()
    s = u.shape[1]
    eye = np.eye(s)
    for _ in range(iters):
        T = (u * lam).T
        g = np.array(gfun(X, T)).T                         # (N, s)
        H = np.array(hfun(X, T)).T.reshape(-1, s, s) * lam  # d g / d u
        Pt = eye[None] - u[:, :, None] * u[:, None, :]      # tangent projector
        J = H @ Pt
        step = -np.einsum("nij,nj->ni", np.linalg.pinv(J, rcond=1e-10), g)
        step = np.einsum("nij,nj->ni", Pt, step)
        # damp long steps; the sphere is compact
        nrm = np.linalg.norm(step, axis=1, keepdims=True)
        step = np.where(nrm > 0.5, step * (0.5 / np.maximum(nrm, 1e-300)), step)
        u_new = _unit(u + step)
        g_new = np.array(gfun(X, (u_new * lam).T)).T
        better = (g_new ** 2).sum(axis=1) <= (g ** 2).sum(axis=1)
        u = np.where(better[:, None], u_new, u)
    return u


def critical_set_scan(phase: PhaseFn, points: np.ndarray | Box | None = None,
                      directions: np.ndarray | int | None = 256, ladder: Ladder | None = None,
                      eps_crit: float = EPS_CRIT, slope_tol: float = SLOPE_TOL,
                      refine: int = 3, grid: int | None = None, seed: int = 0) -> CriticalScan:
    """Classify rays ``(x, theta_hat)`` as critical or regular.

    Every point also gets ``refine`` additional directions, found by a
    Gauss-Newton search started from its best sampled directions; they are
    classified with the same rule.
    """
    n, s, mu = phase.dims.n, phase.dims.s, phase.mu
    if points is None:
        points = phase.box
    if isinstance(points, Box):
        X = points.grid(grid or 9)
    else:
        X = np.asarray(points, dtype=float).reshape(n, -1)
    if directions is None or isinstance(directions, (int, np.integer)):
        dirs = direction_set(s, directions, seed)
    else:
        dirs = _unit(np.asarray(directions, dtype=float).reshape(-1, s))
    ladder = ladder or phase.certificate.ladder
    lams = ladder.values
    tail = ladder.tail()
    gfun, hfun = _grad_theta(phase)
    R = _ratios(gfun, X, dirs, lams, mu)
    mn, slope, crit = _classify(R, lams, tail, eps_crit, slope_tol)
    refined: list = [[] for _ in range(X.shape[1])]
    if refine and s > 1:
        k = min(refine, dirs.shape[0])
        best = np.argsort(R[:, :, -1], axis=1)[:, :k]           # (P, k)
        starts = dirs[best].reshape(-1, s)
        Xs = np.repeat(X, k, axis=1)
        u = _refine(phase, gfun, hfun, Xs, starts, float(lams[-1]))
        Ru = np.empty((u.shape[0], lams.size))
        for a in range(0, u.shape[0], 20000):
            b = min(u.shape[0], a + 20000)
            Ru[a:b] = _ratios_paired(gfun, Xs[:, a:b], u[a:b], lams, mu)
        m2, s2, c2 = _classify(Ru, lams, tail, eps_crit, slope_tol)
        for j in range(u.shape[0]):
            p = j // k
            # keep distinct refined directions only
            if any(np.linalg.norm(u[j] - r[0]) < 1e-6 for r in refined[p]):
                continue
            refined[p].append((u[j], float(m2[j]), float(s2[j]), Ru[j], bool(c2[j])))
    return CriticalScan(X, dirs, lams, mn, slope, crit, refined, eps_crit, slope_tol, mu, tail)


def _ratios_paired(gfun, X: np.ndarray, U: np.ndarray, lams: np.ndarray, mu: float) -> np.ndarray:
    """Ratios for paired columns ``X[:, j]`` and directions ``U[j]``, shape ``(N, L)``."""
    N, L = U.shape[0], lams.size
    T = (U[:, :, None] * lams[None, None, :]).transpose(1, 0, 2).reshape(U.shape[1], -1)
    Xr = np.repeat(X, L, axis=1)
    g = np.array(gfun(Xr, T))
    return np.sqrt((g ** 2).sum(axis=0)).reshape(N, L) / lams[None, :] ** (mu - 1)


def singular_support(scan: CriticalScan) -> np.ndarray:
    """Grid points carrying at least one critical direction, shape ``(n, K)``."""
    return scan.points[:, scan.has_critical()]


# ---------------------------------------------------------- stationary phase

@dataclass
class CovectorVerdict:
    x: tuple[float, ...]
    k_hat: tuple[float, ...]
    min_angle: float
    verdict: str
    trace: tuple[float, ...] = ()

    def to_dict(self) -> dict:
        return {"x": list(self.x), "k_hat": list(self.k_hat), "min_angle": self.min_angle,
                "verdict": self.verdict, "angle_trace": list(self.trace)}


@dataclass
class SPScan:
    verdicts: list
    alpha_tol: float
    probes: int

    def in_sp(self) -> list[CovectorVerdict]:
        return [v for v in self.verdicts if v.verdict == "in_SP"]

    def to_dict(self, include_outside: bool = False) -> dict:
        return {"alpha_tol": self.alpha_tol, "probes_per_point": self.probes,
                "in_SP": len(self.in_sp()),
                "covectors": [v.to_dict() for v in self.verdicts
                              if include_outside or v.verdict == "in_SP"]}


def stationary_phase_scan(phase: PhaseFn, scan: CriticalScan,
                          k_directions: np.ndarray | int | None = None,
                          alpha_tol: float = ALPHA_TOL, augment: bool = True,
                          include_outside: bool = False, seed: int = 0) -> SPScan:
    """For every point with critical directions, test each probe covector.

    The probe set is ``direction_set(n)`` plus, when ``augment`` is set, the
    top-rung directions of ``grad_x phi`` along the critical rays (so that
    the asymptotic covectors themselves are probed). ``k_hat`` is in SP iff
    the smallest angle to ``grad_x phi(x, lam theta_hat)`` over critical
    ``theta_hat`` and tail rungs is below ``alpha_tol``.
    """
    n = phase.dims.n
    if k_directions is None or isinstance(k_directions, (int, np.integer)):
        base = direction_set(n, k_directions, seed)
    else:
        base = _unit(np.asarray(k_directions, dtype=float).reshape(-1, n))
    gx = E.compile_exprs(E.gradient(phase.expr, E.xs(n)))
    lams = scan.lams
    tail = np.arange(lams.size)[scan.tail]
    tl = lams[tail]
    out = []
    has = scan.has_critical()
    for p in np.nonzero(has)[0]:
        x = scan.points[:, p]
        th = scan.critical_directions(p)                          # (C, s)
        C = th.shape[0]
        T = (th[:, :, None] * tl[None, None, :]).transpose(1, 0, 2).reshape(th.shape[1], -1)
        Xr = np.repeat(x[:, None], T.shape[1], axis=1)
        g = np.array(gx(Xr, T)).T.reshape(C, tl.size, n)
        gn = np.linalg.norm(g, axis=2, keepdims=True)
        ok = gn[..., 0] > 0
        gu = np.where(ok[..., None], g / np.maximum(gn, 1e-300), 0.0)
        probes = base
        if augment:
            extra = gu[:, -1][ok[:, -1]]
            if extra.size:
                probes = np.concatenate([base, _dedupe(extra)], axis=0)
        # angle between each probe and each (critical ray, rung)
        ang = np.full((probes.shape[0], C, tl.size), np.pi)
        for a in range(0, probes.shape[0], 256):
            b = min(probes.shape[0], a + 256)
            ang[a:b] = np.where(ok[None], _angle(probes[a:b, None, None, :], gu[None]), np.pi)
        best_ray = ang.min(axis=2).argmin(axis=1)
        mins = ang.min(axis=(1, 2))
        xt = tuple(map(float, x))
        for i in range(probes.shape[0]):
            v = "in_SP" if mins[i] < alpha_tol else "outside_SP"
            if v == "in_SP" or include_outside:
                out.append(CovectorVerdict(xt, tuple(map(float, probes[i])), float(mins[i]), v,
                                           tuple(map(float, ang[i, best_ray[i]]))))
    return SPScan(out, alpha_tol, base.shape[0])


def _dedupe(U: np.ndarray, tol: float = 1e-3) -> np.ndarray:
    keep = []
    for u in U:
        if all(np.linalg.norm(u - v) > tol for v in keep):
            keep.append(u)
    return np.array(keep)


# ---------------------------------------------------------- wave front

@dataclass
class WavefrontEntry:
    x0: tuple[float, ...]
    k_hat: tuple[float, ...]
    N: float | None
    residual: float
    verdict: str
    rhos: tuple[float, ...] = ()
    values: tuple[float, ...] = ()
    errors: tuple[float, ...] = ()
    resolved: tuple[bool, ...] = ()
    policy: str = ""
    note: str = ""

    def to_dict(self) -> dict:
        N = self.N if self.N is None or math.isfinite(self.N) else "inf"
        return {"x0": list(self.x0), "k_hat": list(self.k_hat), "N": N,
                "residual": self.residual, "verdict": self.verdict, "rho": list(self.rhos),
                "abs_values": list(self.values), "abs_err": list(self.errors),
                "resolved": list(self.resolved), "policy": self.policy, "note": self.note}


@dataclass
class WavefrontReport:
    entries: list
    thresholds: dict

    def to_dict(self) -> dict:
        return {"thresholds": self.thresholds, "entries": [e.to_dict() for e in self.entries]}

    def to_csv(self) -> str:
        if not self.entries:
            return ""
        n = len(self.entries[0].x0)
        buf = io.StringIO()
        w = csv.writer(buf)
        w.writerow([f"x{i + 1}" for i in range(n)] + [f"khat{i + 1}" for i in range(n)]
                   + ["N_fit", "residual", "verdict"])
        for e in self.entries:
            w.writerow(list(e.x0) + list(e.k_hat)
                       + ["" if e.N is None else e.N, e.residual, e.verdict])
        return buf.getvalue()


def fit_decay(rhos, values, errors, floor_rel: float = 1e-10, fit_window: int = 3):
    """Decay exponent ``N`` of ``|value(rho)| ~ rho^-N``.

    A rung is resolved when ``|v| > max(10 err, floor_rel * S)`` with ``S``
    the largest magnitude on the ladder. ``N`` is the larger of the
    least-squares slope over the last ``fit_window`` resolved rungs and the
    decay implied by the first unresolved rung after them (its bound
    ``max(10 err, floor)`` caps the value there). Returns
    ``(N, residual, resolved mask)``; ``N`` is ``None`` when the ladder
    does not determine a slope.
    """
    r = np.asarray(rhos, dtype=float)
    v = np.abs(np.asarray(values, dtype=complex))
    e = np.asarray(errors, dtype=float)
    S = float(np.nanmax(v)) if v.size else 0.0
    floor = floor_rel * S
    bound = np.maximum(10 * e, floor)
    res = v > bound
    idx = np.nonzero(res)[0]
    if idx.size == 0:
        return None, 0.0, res
    last = idx[-1]
    # contiguous block of resolved rungs ending at the last one
    start = last
    while start > 0 and res[start - 1]:
        start -= 1
    win = np.arange(max(start, last - fit_window + 1), last + 1)
    N, resid = None, 0.0
    if win.size >= 2:
        lr, lv = np.log(r[win]), np.log(v[win])
        A = np.vstack([lr, np.ones_like(lr)]).T
        coef, *_ = np.linalg.lstsq(A, lv, rcond=None)
        N = -float(coef[0])
        resid = float(np.max(np.abs(lv - A @ coef)))
    if last + 1 < r.size:
        j = last + 1
        if 0 < bound[j] < np.inf:
            crossing = math.log(v[last] / bound[j]) / math.log(r[j] / r[last])
            N = crossing if N is None else max(N, crossing)
    return N, resid, res


def wavefront_scan(a: SymbolFn, phase: PhaseFn, points, k_directions,
                   rhos=RHO_LADDER, radius: float = 0.25, beta: float = WINDOW_BETA,
                   policy: str = "auto", n_threshold: float = N_THRESHOLD,
                   n_singular: float = N_SINGULAR, floor_rel: float = 1e-10,
                   rtol: float = 1e-3, residual_cap: float = 2.0, fit_window: int = 3,
                   max_nodes: int = 60_000_000, shortcut: bool = True,
                   progress=None) -> WavefrontReport:
    """Fit the decay of ``|FT(psi_x0 D_phi(a))(rho k_hat)|`` along ``rhos``.

    Rungs are evaluated in increasing order; once two consecutive rungs are
    unresolved the rest of the ladder cannot change the fit and is skipped.
    Entries whose quadrature fails are marked ``failed``.

    With ``shortcut`` set, a window whose whole support admits a fiber-only
    reducer (so ``D_phi(a)`` is smooth there) is reported smooth in every
    direction with ``N = inf`` and no quadrature. Such windows are exactly
    the ones where the transform is a near-total cancellation, which the
    ladder fit could only resolve at prohibitive cost.
    """
    n = phase.dims.n
    X = np.asarray(points, dtype=float).reshape(-1, n)
    K = _unit(np.asarray(k_directions, dtype=float).reshape(-1, n))
    rhos = np.asarray(rhos, dtype=float)
    entries = []
    for x0 in X:
        psi = TestFn(tuple(x0), radius, 1.0, beta)
        if shortcut:
            try:
                R = build_theta_reducer(phase, XBall(tuple(map(float, x0)), radius))
            except RegionTouchesCriticalSet:
                R = None
            if R is not None:
                note = f"fiber-only reducer on the window (min ratio {R.meta['min_ratio']:.3g})"
                entries.extend(WavefrontEntry(tuple(map(float, x0)), tuple(map(float, kh)),
                                              math.inf, 0.0, "smooth_direction",
                                              policy="theta-reduced-shortcut", note=note)
                               for kh in K)
                continue
        for kh in K:
            vals, errs, used = [], [], ""
            note = ""
            try:
                S = 0.0
                misses = 0
                for rho in rhos:
                    atol = 0.1 * floor_rel * S if S > 0 else 0.0
                    w = windowed_fourier(a, phase, psi, rho * kh, policy=policy, atol=atol,
                                         rtol=rtol, max_nodes=max_nodes)
                    used = w.policy
                    vals.append(w.value)
                    errs.append(w.abs_err)
                    S = max(S, abs(w.value))
                    if abs(w.value) <= max(10 * w.abs_err, floor_rel * S):
                        misses += 1
                        if misses >= 2:
                            break
                    else:
                        misses = 0
                    if progress:
                        progress(x0, kh, rho, w)
            except OscintError as exc:
                entries.append(WavefrontEntry(tuple(map(float, x0)), tuple(map(float, kh)),
                                              None, math.nan, "failed", policy=used,
                                              note=f"{type(exc).__name__}: {exc}"))
                continue
            rr = rhos[:len(vals)]
            N, resid, res = fit_decay(rr, vals, errs, floor_rel, fit_window)
            if N is None:
                verdict, note = "inconclusive", "fewer than two usable rungs"
                N_out = None
            else:
                N_out = N
                if N >= n_threshold and resid <= residual_cap:
                    verdict = "smooth_direction"
                elif N <= n_singular:
                    verdict = "singular_direction"
                else:
                    verdict = "inconclusive"
            entries.append(WavefrontEntry(
                tuple(map(float, x0)), tuple(map(float, kh)), N_out, resid, verdict,
                tuple(map(float, rr)), tuple(float(abs(v)) for v in vals),
                tuple(map(float, errs)), tuple(map(bool, res)), used, note))
    return WavefrontReport(entries, {"N_threshold": n_threshold, "N_singular": n_singular,
                                     "floor_rel": floor_rel, "rho": rhos.tolist(),
                                     "window_radius": radius, "window_beta": beta,
                                     "fit_window": fit_window, "residual_cap": residual_cap,
                                     "shortcut": shortcut})
