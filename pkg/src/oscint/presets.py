"""Built-in phase functions and their known microlocal data."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

from . import expr as E
from .calculus import Box
from .errors import ConfigInvalid


def _omega(ts, m2) -> E.Expr:
    return E.sqrt(E.add(E.sum_squares(ts), E.const(m2)))


def _kg(params: dict) -> E.Expr:
    m2 = params.get("m2", 1)
    if not m2 > 0:
        raise ConfigInvalid("kg2pt needs m2 > 0; omega is not smooth at theta = 0 when m = 0",
                            {"field": "params.m2", "value": m2})
    ts = E.ts(3)
    return E.add(E.neg(E.mul(E.X(1), _omega(ts, m2))), E.dot(E.xs(4)[1:], ts))


def _distorted(params: dict) -> E.Expr:
    nu = params.get("nu", 3)
    if not nu > 0:
        raise ConfigInvalid("distorted needs nu > 0", {"field": "params.nu", "value": nu})
    ts = E.ts(3)
    base = E.add(E.ONE, E.sum_squares(ts))
    # f = (1 + |theta|^2)^(nu/2); odd nu goes through one square root
    half = int(nu) // 2
    if float(nu) == int(nu):
        f = E.power(base, half) if int(nu) % 2 == 0 else E.mul(E.power(base, half), E.sqrt(base))
    else:
        raise ConfigInvalid("distorted supports integer nu only", {"field": "params.nu",
                                                                    "value": nu})
    w = E.sqrt(E.add(E.sum_squares(ts), f))
    return E.add(E.neg(E.mul(E.X(1), w)), E.dot(E.xs(4)[1:], ts))


def _distorted_mu(params: dict) -> float:
    nu = params.get("nu", 3)
    return max(1.0, nu / 2)


def _moyal_euclid(params: dict) -> E.Expr:
    # d = 2, sigma = [[0, 1], [-1, 0]]
    t1, t2, t3, t4 = E.ts(4)
    x1, x2 = E.xs(2)
    lin = E.add(E.mul(x1, E.add(t1, t3)), E.mul(x2, E.add(t2, t4)))
    return E.add(lin, E.sub(E.mul(t1, t4), E.mul(t2, t3)))


def _moyal_hyper(params: dict) -> E.Expr:
    # d = 2: theta_i in R, lifted to (omega(theta_i), theta_i)
    m2 = params.get("m2", 1)
    if not m2 > 0:
        raise ConfigInvalid("moyal-hyper needs m2 > 0", {"field": "params.m2", "value": m2})
    t1, t2 = E.ts(2)
    x0, x1 = E.xs(2)
    w1, w2 = _omega([t1], m2), _omega([t2], m2)
    lin = E.add(E.mul(x0, E.add(w1, w2)), E.mul(x1, E.add(t1, t2)))
    return E.add(lin, E.sub(E.mul(w1, t2), E.mul(t1, w2)))


def _linear(params: dict) -> E.Expr:
    n = int(params.get("n", 1))
    return E.dot(E.xs(n), E.ts(n))


@dataclass(frozen=True)
class Preset:
    name: str
    dims_fn: Callable[[dict], E.Dims]
    phase_fn: Callable[[dict], E.Expr]
    mu_fn: Callable[[dict], float]
    box_fn: Callable[[dict], Box]
    symbol: str
    symbol_order: float
    expected: dict
    defaults: dict = field(default_factory=dict)
    expected_invalid: bool = False

    def params(self, overrides: dict | None = None) -> dict:
        p = dict(self.defaults)
        unknown = set(overrides or {}) - set(self.defaults)
        if unknown:
            raise ConfigInvalid(f"unknown parameter(s) for preset {self.name}: {sorted(unknown)}",
                                {"field": "params", "unknown": sorted(unknown)})
        p.update(overrides or {})
        return p

    def build(self, overrides: dict | None = None):
        """``(dims, phase expr, mu, box)`` for the given parameters."""
        p = self.params(overrides)
        return self.dims_fn(p), self.phase_fn(p), float(self.mu_fn(p)), self.box_fn(p)

    def catalog_entry(self) -> dict:
        dims, phi, mu, box = self.build()
        return {"name": self.name, "dims": {"n": dims.n, "s": dims.s}, "mu": mu,
                "phase": E.format_expr(phi), "params": dict(self.defaults),
                "symbol": self.symbol, "box": box.to_list(),
                "expected_invalid": self.expected_invalid, "expected": self.expected}


PRESETS: dict[str, Preset] = {}


def _register(p: Preset) -> None:
    PRESETS[p.name] = p


_register(Preset(
    "kg2pt", lambda p: E.Dims(4, 3), _kg, lambda p: 1.0, lambda p: Box.cube(4, -2, 2),
    "1", 0.0,
    {"validity": "valid, mu = 1",
     "critical_set": "x = 0 (every direction), or |x1| = |(x2,x3,x4)| != 0 with "
                     "theta_hat = (x2,x3,x4)/x1",
     "stationary_phase": "at x = 0: covectors (-|k|, k); on the light cone: "
                         "(-lambda |x|, +-lambda x)",
     "wavefront": "contained in the stationary-phase set"},
    {"m2": 1}))

_register(Preset(
    "distorted", lambda p: E.Dims(4, 3), _distorted, _distorted_mu,
    lambda p: Box.cube(4, -2, 2), "1", 0.0,
    {"validity": "valid, mu = nu/2 for nu > 2",
     "critical_set": "x1 = 0 (every direction)",
     "stationary_phase": "x1 = 0 with covector along +-(1, 0, 0, 0)",
     "wavefront": "contained in the stationary-phase set"},
    {"nu": 3}))

_register(Preset(
    "moyal-euclid", lambda p: E.Dims(2, 4), _moyal_euclid, lambda p: 2.0,
    lambda p: Box.cube(2, -2, 2), "1", 0.0,
    {"validity": "valid, mu = 2 (sigma has full rank)",
     "critical_set": "empty", "stationary_phase": "empty",
     "wavefront": "empty: the distribution is smooth"},
    {}))

_register(Preset(
    "moyal-hyper", lambda p: E.Dims(2, 2), _moyal_hyper, lambda p: 2.0,
    lambda p: Box.cube(2, -2, 2), "1", 0.0,
    {"validity": "invalid: for theta_1, theta_2 of equal sign grad_theta phi tends "
                 "to a constant",
     "critical_set": "not defined", "stationary_phase": "not defined",
     "wavefront": "not defined"},
    {"m2": 1}, expected_invalid=True))

_register(Preset(
    "linear", lambda p: E.Dims(int(p["n"]), int(p["n"])), _linear, lambda p: 1.0,
    lambda p: Box.cube(int(p["n"]), -2, 2), "1", 0.0,
    {"validity": "valid, mu = 1",
     "critical_set": "x = 0 (every direction)",
     "stationary_phase": "x = 0, every covector",
     "wavefront": "for a = 1 the output is a multiple of the delta distribution"},
    {"n": 1}))

_register(Preset(
    "gaussian", lambda p: E.Dims(1, 1), _linear, lambda p: 1.0,
    lambda p: Box.cube(1, -2, 2), "exp(-t1^2)", -math.inf,
    {"validity": "valid, mu = 1",
     "pointwise": "sqrt(pi) exp(-x^2/4)",
     "wavefront": "empty: the output is a Gaussian"},
    {"n": 1}))


def get_preset(name: str) -> Preset:
    try:
        return PRESETS[name]
    except KeyError:
        raise ConfigInvalid(f"unknown preset {name!r}", {"field": "preset", "value": name,
                                                         "known": sorted(PRESETS)}) from None


def list_presets() -> list[dict]:
    return [PRESETS[k].catalog_entry() for k in sorted(PRESETS)]
