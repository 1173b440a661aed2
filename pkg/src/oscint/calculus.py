"""Symbol-order estimates, phase validation and smooth cutoffs.

Growth orders are estimated numerically: an expression is sampled on a grid
of base points times a set of unit fiber directions, along a geometric
ladder of radii, and the log-log slope of the sampled maximum is fitted.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import expr as E
from .errors import BadRadii, DegenerateFit, DegeneratePhase, EvaluationFailed, NotASymbol
from .expr import Dims, Expr, MultiIndex


# ----------------------------------------------------------------- containers

@dataclass(frozen=True)
class Box:
    """Closed axis-aligned box ``K`` in x-space."""

    bounds: tuple[tuple[float, float], ...]

    def __post_init__(self):
        b = tuple((float(lo), float(hi)) for lo, hi in self.bounds)
        if not b:
            raise ValueError("box needs at least one axis")
        for lo, hi in b:
            if not (math.isfinite(lo) and math.isfinite(hi)) or lo > hi:
                raise ValueError(f"invalid box interval [{lo}, {hi}]")
        object.__setattr__(self, "bounds", b)

    @classmethod
    def cube(cls, n: int, lo: float = -1.0, hi: float = 1.0) -> "Box":
        return cls(tuple((lo, hi) for _ in range(n)))

    @property
    def dim(self) -> int:
        return len(self.bounds)

    @property
    def lo(self) -> np.ndarray:
        return np.array([b[0] for b in self.bounds])

    @property
    def hi(self) -> np.ndarray:
        return np.array([b[1] for b in self.bounds])

    def grid(self, per_axis: int) -> np.ndarray:
        """Tensor grid with ``per_axis`` points per axis, shape ``(n, N)``."""
        axes = [np.linspace(lo, hi, per_axis) if per_axis > 1 else np.array([(lo + hi) / 2])
                for lo, hi in self.bounds]
        mesh = np.meshgrid(*axes, indexing="ij")
        return np.stack([m.ravel() for m in mesh])

    def sample(self, rng: np.random.Generator, count: int) -> np.ndarray:
        u = rng.random((self.dim, count))
        return self.lo[:, None] + (self.hi - self.lo)[:, None] * u

    def to_list(self) -> list[list[float]]:
        return [list(b) for b in self.bounds]


@dataclass(frozen=True)
class Ladder:
    """Geometric radii ``start * base**j`` for ``j < rungs``."""

    base: float = 2.0
    rungs: int = 15
    start: float = 1.0

    def __post_init__(self):
        if self.base <= 1 or self.rungs < 2 or self.start <= 0:
            raise ValueError("ladder needs base > 1, rungs >= 2, start > 0")

    @property
    def values(self) -> np.ndarray:
        return self.start * self.base ** np.arange(self.rungs)

    def tail(self) -> slice:
        """Upper half of the ladder (the asymptotic fit window)."""
        return slice(self.rungs // 2, self.rungs)


DEFAULT_LADDER = Ladder()


def fibonacci_sphere(count: int) -> np.ndarray:
    i = np.arange(count) + 0.5
    z = 1 - 2 * i / count
    r = np.sqrt(1 - z * z)
    phi = math.pi * (1 + math.sqrt(5)) * i
    return np.stack([r * np.cos(phi), r * np.sin(phi), z], axis=1)


def direction_set(s: int, count: int | None = None, seed: int = 0) -> np.ndarray:
    """Unit fiber directions, shape ``(D, s)``.

    s=1 gives ``{+1, -1}``; s=2 uniform angles (64); s=3 a Fibonacci sphere
    (256); s>=4 seeded uniform random unit vectors (512).
    """
    if s == 1:
        return np.array([[1.0], [-1.0]])
    if s == 2:
        count = count or 64
        ang = 2 * math.pi * (np.arange(count) + 0.5) / count
        return np.stack([np.cos(ang), np.sin(ang)], axis=1)
    if s == 3:
        return fibonacci_sphere(count or 256)
    count = count or 512
    v = np.random.default_rng(seed).standard_normal((count, s))
    return v / np.linalg.norm(v, axis=1, keepdims=True)


def default_grid_size(n: int) -> int:
    return {1: 9, 2: 5, 3: 4}.get(n, 3)


@dataclass(frozen=True)
class ScanConfig:
    """Sampling parameters shared by order fits, validation and ray scans."""

    directions: int | None = None
    ladder: Ladder = DEFAULT_LADDER
    seed: int = 0
    order_tol: float = 0.1
    plateau_drift: float = 0.1
    grid: int | None = None
    slope_tol: float = 0.1

    def dirs(self, s: int) -> np.ndarray:
        return direction_set(s, self.directions, self.seed)

    def points(self, box: Box) -> np.ndarray:
        return box.grid(self.grid or default_grid_size(box.dim))


@dataclass
class OrderEstimate:
    slope: float
    intercept: float
    residual: float
    lam_window: tuple[float, float]
    directions: int
    maxima: list[float] = field(default_factory=list)

    def __post_init__(self):
        if not self.lam_window[0] < self.lam_window[1]:
            raise ValueError("empty fit window")


def _ray_values(f, X: np.ndarray, dirs: np.ndarray, lams: np.ndarray) -> np.ndarray:
    """Evaluate ``f(X, T)`` on every (x, direction, rung); returns ``(P, D, L)``."""
    P, D, L = X.shape[1], dirs.shape[0], lams.size
    Xr = np.repeat(X, D * L, axis=1)
    T = (dirs[None, :, None, :] * lams[None, None, :, None])
    T = np.broadcast_to(T, (P, D, L, dirs.shape[1])).reshape(-1, dirs.shape[1]).T
    return np.asarray(f(Xr, T)).reshape(P, D, L)


def _fit(logl: np.ndarray, logv: np.ndarray) -> tuple[float, float, float]:
    A = np.stack([logl, np.ones_like(logl)], axis=1)
    (slope, icpt), *_ = np.linalg.lstsq(A, logv, rcond=None)
    resid = float(np.max(np.abs(logv - (slope * logl + icpt)))) if logv.size else 0.0
    return float(slope), float(icpt), resid


def estimate_growth(e: Expr, box: Box, directions: int | np.ndarray | None = None,
                    ladder: Ladder = DEFAULT_LADDER, s: int | None = None,
                    points: np.ndarray | None = None, seed: int = 0) -> OrderEstimate:
    """Fit the growth exponent of ``max_x,dir |e(x, lam*dir)|`` against ``lam``.

    The fit uses the upper half of the ladder; earlier rungs are reported in
    ``maxima`` but only the asymptotic window enters the slope.
    """
    if s is None:
        s = max([i + 1 for k, i in e.free_vars if k == "t"], default=1)
    dirs = directions if isinstance(directions, np.ndarray) else direction_set(s, directions, seed)
    X = points if points is not None else box.grid(default_grid_size(box.dim))
    lams = ladder.values
    f = E.lambdify(e)
    vals = np.abs(_ray_values(f, X, dirs, lams))
    if not np.all(np.isfinite(vals)):
        idx = np.argwhere(~np.isfinite(vals))[0]
        raise EvaluationFailed("non-finite value during growth scan", {
            "x": X[:, idx[0]].tolist(), "direction": dirs[idx[1]].tolist(),
            "lambda": float(lams[idx[2]])})
    maxima = vals.max(axis=(0, 1))
    tail = ladder.tail()
    lt, mt = np.log(lams[tail]), maxima[tail]
    window = (float(lams[tail][0]), float(lams[tail][-1]))
    if np.all(maxima == 0):
        raise DegenerateFit("all samples vanish; slope is -inf",
                            {"slope": "-inf", "lambda_window": list(window)})
    pos = mt > 0
    if pos.sum() < 2:
        # decays below the float range inside the fit window
        return OrderEstimate(-math.inf, -math.inf, 0.0, window, dirs.shape[0], maxima.tolist())
    slope, icpt, resid = _fit(lt[pos], np.log(mt[pos]))
    if pos.sum() < mt.size:
        slope = -math.inf
    return OrderEstimate(slope, icpt, resid, window, dirs.shape[0], maxima.tolist())


def multiindices(n: int, s: int, depth: int):
    """All ``(alpha, beta)`` with ``|alpha| + |beta| <= depth``, lowest order first."""
    out = []
    for total in range(depth + 1):
        for combo in itertools.product(range(total + 1), repeat=n + s):
            if sum(combo) == total:
                out.append(MultiIndex(tuple(combo[:n]), tuple(combo[n:])))
    return out


@dataclass
class SymbolReport:
    ok: bool
    worst_drift: float
    witness: dict | None
    checked: int


def verify_symbol_order(a: Expr, m: float, depth: int, box: Box, dims: Dims,
                        config: ScanConfig = ScanConfig()) -> SymbolReport:
    """Check that every weighted seminorm up to ``depth`` plateaus.

    For each ``(alpha, beta)`` the sup of ``|D^alpha_x D^beta_t a| (1+lam)^(|beta|-m)``
    over the sample grid must not grow by more than ``plateau_drift`` per
    octave anywhere in the upper half of the ladder.
    """
    if depth > 4 or depth < 0:
        raise ValueError("depth must be in 0..4")
    dirs = config.dirs(dims.s)
    X = config.points(box)
    lams = config.ladder.values
    tail = config.ladder.tail()
    lt = lams[tail]
    octaves = np.diff(np.log2(lt))
    worst, witness, first_fail = -math.inf, None, None
    checked = 0
    for mi in multiindices(dims.n, dims.s, depth):
        d = E.diff(a, index=mi)
        if d is E.ZERO:
            continue
        checked += 1
        vals = np.abs(_ray_values(E.lambdify(d), X, dirs, lams))
        if not np.all(np.isfinite(vals)):
            raise EvaluationFailed("non-finite derivative value", {
                "alpha": list(mi.alpha), "beta": list(mi.beta)})
        weight = (1 + lams) ** (sum(mi.beta) - m)
        sup = (vals * weight).max(axis=(0, 1))[tail]
        with np.errstate(divide="ignore", invalid="ignore"):
            ratio = np.where(sup[:-1] > 0, sup[1:] / np.where(sup[:-1] > 0, sup[:-1], 1),
                             np.where(sup[1:] > 0, np.inf, 1.0))
            drift = ratio ** (1 / octaves) - 1
        j = int(np.argmax(drift))
        if drift[j] > worst:
            worst = float(drift[j])
        if drift[j] > config.plateau_drift and first_fail is None:
            flat = (vals * weight)[:, :, tail][..., j + 1]
            p, q = np.unravel_index(int(np.argmax(flat)), flat.shape)
            first_fail = {
                "alpha": list(mi.alpha), "beta": list(mi.beta),
                "x": X[:, p].tolist(), "theta": (dirs[q] * lt[j + 1]).tolist(),
                "drift_per_octave": float(drift[j]),
            }
        if witness is None or drift[j] >= worst:
            witness = {"alpha": list(mi.alpha), "beta": list(mi.beta),
                       "drift_per_octave": float(drift[j])}
    ok = first_fail is None
    return SymbolReport(ok, worst if checked else 0.0, first_fail if not ok else witness, checked)


# --------------------------------------------------------------------- cutoffs

@dataclass(frozen=True)
class CutoffFn:
    """Smooth radial step: 1 for ``|v - center| <= r0``, 0 for ``>= r1``.

    ``kind`` selects the variables (``'t'`` for fiber cutoffs, ``'x'`` for
    position bumps). ``radial='norm'`` steps linearly in ``|v|``; ``'square'``
    steps in ``|v|^2`` (slightly cheaper, used for internal helpers).
    """

    r0: float
    r1: float
    dim: int
    kind: str = "t"
    center: tuple[float, ...] | None = None
    radial: str = "norm"

    def __post_init__(self):
        if not (0 < self.r0 < self.r1) or not math.isfinite(self.r1):
            raise BadRadii(f"need 0 < r0 < r1, got r0={self.r0}, r1={self.r1}",
                           {"r0": self.r0, "r1": self.r1})
        if self.radial not in ("norm", "square"):
            raise ValueError("radial must be 'norm' or 'square'")

    def _sq(self) -> Expr:
        vs = [E.var(self.kind, i) for i in range(self.dim)]
        c = self.center or (0.0,) * self.dim
        return E.sum_squares([E.sub(v, E.const(ci)) for v, ci in zip(vs, c)])

    def _arg(self) -> Expr:
        q = self._sq()
        if self.radial == "square":
            return E.div(E.sub(q, E.const(self.r0 ** 2)), E.const(self.r1 ** 2 - self.r0 ** 2))
        # |v| smoothed inside the plateau so that it stays differentiable at 0;
        # rho == |v| wherever |v| >= r0/2, and rho < r0 elsewhere
        inner = step_down(E.div(E.sub(q, E.const((self.r0 / 4) ** 2)),
                                E.const((self.r0 / 2) ** 2 - (self.r0 / 4) ** 2)))
        rho = E.sqrt(E.add(q, E.mul(E.const((self.r0 / 2) ** 2), inner)))
        return E.div(E.sub(rho, E.const(self.r0)), E.const(self.r1 - self.r0))

    @property
    def expr(self) -> Expr:
        return step_down(self._arg())

    @property
    def complement(self) -> Expr:
        """``1 - chi`` built without cancellation."""
        return step_up(self._arg())

    def core(self) -> Expr:
        """Helper that is positive exactly where ``|v| < r0`` and zero elsewhere."""
        q = self._sq()
        lo = (self.r0 / 2) ** 2
        return step_down(E.div(E.sub(q, E.const(lo)), E.const(self.r0 ** 2 - lo)))

    def __call__(self, v) -> np.ndarray | float:
        v = np.asarray(v, dtype=float)
        q = v.reshape(self.dim, -1) if v.ndim > 1 or self.dim > 1 else v.reshape(1, -1)
        c = np.asarray(self.center or (0.0,) * self.dim).reshape(-1, 1)
        r = np.sqrt(((q - c) ** 2).sum(axis=0))
        if self.radial == "square":
            u = (r ** 2 - self.r0 ** 2) / (self.r1 ** 2 - self.r0 ** 2)
        else:
            u = (r - self.r0) / (self.r1 - self.r0)
        out = 1.0 - h_np(u)
        return float(out[0]) if out.size == 1 and v.ndim <= 1 else out

    def to_dict(self) -> dict:
        return {"r0": self.r0, "r1": self.r1, "kind": self.kind, "dim": self.dim,
                "center": list(self.center) if self.center else None, "radial": self.radial}


def step_down(u: Expr) -> Expr:
    """``1 - h(u)`` written as ``g(1-u) / (g(u) + g(1-u))`` (no cancellation)."""
    gu = E.gfun(u)
    gv = E.gfun(E.sub(E.ONE, u))
    return E.div(gv, E.add(gu, gv))


def step_up(u: Expr) -> Expr:
    """``h(u) = g(u) / (g(u) + g(1-u))``: exactly 0 below 0, exactly 1 above 1."""
    gu = E.gfun(u)
    gv = E.gfun(E.sub(E.ONE, u))
    return E.div(gu, E.add(gu, gv))


def h_np(u) -> np.ndarray:
    u = np.asarray(u, dtype=float)
    a = E._g_np(u, 0)
    b = E._g_np(1 - u, 0)
    return a / (a + b)


def build_cutoff(r0: float, r1: float, dim: int = 1, kind: str = "t",
                 center: Sequence[float] | None = None, radial: str = "norm") -> CutoffFn:
    return CutoffFn(float(r0), float(r1), dim, kind,
                    tuple(float(c) for c in center) if center is not None else None, radial)


# ---------------------------------------------------------------------- phases

def eta_expr(phi: Expr, dims: Dims) -> Expr:
    """``|grad_x phi|^2 + |theta|^2 |grad_theta phi|^2``."""
    gx = E.gradient(phi, E.xs(dims.n))
    gt = E.gradient(phi, E.ts(dims.s))
    return E.add(E.sum_squares(gx), E.mul(E.sum_squares(E.ts(dims.s)), E.sum_squares(gt)))


@dataclass(frozen=True)
class Certificate:
    C: float
    D: float
    min_ratio: float
    box: Box
    directions: int
    points: int
    ladder: Ladder

    def to_dict(self) -> dict:
        return {"C": self.C, "D": self.D, "min_ratio": self.min_ratio,
                "box": self.box.to_list(), "directions": self.directions,
                "points": self.points,
                "ladder": {"base": self.ladder.base, "rungs": self.ladder.rungs,
                           "start": self.ladder.start}}


@dataclass(frozen=True)
class PhaseFn:
    expr: Expr
    dims: Dims
    mu: float
    certificate: Certificate
    cutoff: CutoffFn

    def __post_init__(self):
        if not self.mu > 0 or not self.certificate.C > 0:
            raise ValueError("phase order and certificate constant must be positive")

    @property
    def box(self) -> Box:
        return self.certificate.box

    def negated(self) -> "PhaseFn":
        """``-phi``; the certificate is unchanged because eta is."""
        return PhaseFn(E.neg(self.expr), self.dims, self.mu, self.certificate, self.cutoff)


@dataclass(frozen=True)
class SymbolFn:
    expr: Expr
    dims: Dims
    order: float
    provenance: str = "declared"
    imag: Expr | None = None

    @property
    def parts(self) -> tuple[Expr, Expr]:
        return self.expr, self.imag if self.imag is not None else E.ZERO


def estimate_symbol(e: Expr, dims: Dims, box: Box, config: ScanConfig = ScanConfig()) -> SymbolFn:
    try:
        est = estimate_growth(e, box, config.dirs(dims.s), config.ladder, dims.s,
                              config.points(box))
        order = est.slope
    except DegenerateFit:
        order = -math.inf
    return SymbolFn(e, dims, order, "estimated")


def validate_phase(phi: Expr, mu: float, box: Box, dims: Dims,
                   config: ScanConfig = ScanConfig()) -> PhaseFn:
    """Certify the nondegeneracy bound ``eta >= C |theta|^(2 mu)`` on ``box``.

    Raises :class:`NotASymbol` if the sampled growth of ``phi`` exceeds ``mu``
    and :class:`DegeneratePhase` if ``eta / lam^(2 mu)`` decays along some ray.
    """
    if not mu > 0:
        raise ValueError("phase order must be positive")
    E.check_dims(phi, dims)
    dirs = config.dirs(dims.s)
    X = config.points(box)
    lams = config.ladder.values
    tail = config.ladder.tail()
    try:
        growth = estimate_growth(phi, box, dirs, config.ladder, dims.s, X)
    except DegenerateFit:
        raise DegeneratePhase("phase vanishes identically on the sample grid", {})
    if growth.slope > mu + config.order_tol:
        raise NotASymbol(f"phase grows like lambda^{growth.slope:.3f} > lambda^{mu}",
                         {"slope": growth.slope, "mu": mu})
    eta = eta_expr(phi, dims)
    ratio = _ray_values(E.lambdify(eta), X, dirs, lams) / lams ** (2 * mu)
    if not np.all(np.isfinite(ratio)):
        raise EvaluationFailed("eta not finite on the sample grid", {})
    lt = np.log(lams[tail])
    rt = ratio[:, :, tail]
    with np.errstate(divide="ignore"):
        logr = np.log(np.maximum(rt, 1e-300))
    # per-ray slope of log(ratio) over the asymptotic window
    lc = lt - lt.mean()
    slopes = (logr - logr.mean(axis=2, keepdims=True)) @ lc / (lc @ lc)
    bad = (slopes < -config.slope_tol) | (rt[:, :, -1] <= 0)
    if bad.any():
        flat = np.where(bad, slopes, np.inf)
        p, q = np.unravel_index(int(np.argmin(flat)), flat.shape)
        raise DegeneratePhase(
            "eta / |theta|^(2 mu) decays along a ray; the nondegeneracy bound fails",
            {"x": X[:, p].tolist(), "direction": dirs[q].tolist(),
             "lambdas": lams.tolist(), "ratios": ratio[p, q].tolist(),
             "slope": float(slopes[p, q])})
    per_rung = ratio.min(axis=(0, 1))
    C0 = 0.5 * per_rung[tail].min()
    above = per_rung >= C0
    j = len(per_rung) - 1
    while j > 0 and above[j - 1]:
        j -= 1
    D = float(lams[j])
    min_ratio = float(per_rung[j:].min())
    C = 0.5 * min_ratio
    cert = Certificate(C, D, min_ratio, box, dirs.shape[0], X.shape[1], config.ladder)
    return PhaseFn(phi, dims, float(mu), cert, build_cutoff(D, 2 * D, dims.s))


def recheck_certificate(phase: PhaseFn, config: ScanConfig) -> float:
    """Minimum of ``eta / lam^(2 mu)`` for ``lam >= D`` on a (finer) sampling."""
    dirs = config.dirs(phase.dims.s)
    X = config.points(phase.box)
    lams = config.ladder.values
    lams = lams[lams >= phase.certificate.D]
    eta = eta_expr(phase.expr, phase.dims)
    ratio = _ray_values(E.lambdify(eta), X, dirs, lams) / lams ** (2 * phase.mu)
    return float(ratio.min())
