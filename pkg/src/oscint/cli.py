"""Command-line front end.

``oscint <command> [--config PATH] [--preset NAME] [--seed N] [--threads N] [--out DIR]``

Commands: validate, eval, pair, critical-set, stationary-phase, wavefront,
presets. Every run writes ``report.json`` (config echo, seed, version and
the result or the error with its witness) into the output directory; the
critical-set and wavefront commands also write CSV tables.

Exit codes: 0 success, 2 the phase is mathematically invalid, 1 any other
error.
"""

from __future__ import annotations

import argparse
import copy
import json
import math
import os
import re
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from . import expr as E
from .calculus import Box, Ladder, PhaseFn, ScanConfig, SymbolFn, direction_set, \
    estimate_symbol, validate_phase
from .errors import ConfigInvalid, ConfigParse, DegeneratePhase, NotASymbol, OscintError
from .presets import get_preset, list_presets

COMMANDS = ("validate", "eval", "pair", "critical-set", "stationary-phase", "wavefront",
            "presets")

# schema: key -> allowed subkeys (None = leaf value)
_SCHEMA = {
    "command": None, "dims": {"n": None, "s": None}, "preset": None, "params": None,
    "phase": {"expr": None, "preset": None, "params": None},
    "symbol": {"expr": None, "imag": None, "order": None},
    "mu": None, "box": None, "seed": None, "threads": None, "strict": None,
    "scan": {"directions": None, "k_directions": None, "grid": None, "points": None,
             "ladder": {"base": None, "rungs": None, "start": None},
             "eps_crit": None, "slope_tol": None, "alpha_tol": None, "refine": None,
             "order_tol": None},
    "eval": {"points": None, "tol": None},
    "pair": {"f": {"center": None, "radius": None, "amplitude": None, "beta": None},
             "method": None, "p": None, "tol": None},
    "wavefront": {"points": None, "k_directions": None, "rho": None, "radius": None,
                  "shortcut": None, "floor_rel": None, "n_threshold": None,
                  "n_singular": None},
    "output": {"dir": None},
}

DEFAULTS = {
    "seed": 0, "threads": 1, "strict": False,
    "scan": {"directions": None, "k_directions": None, "grid": None, "points": None,
             "ladder": {"base": 2.0, "rungs": 15, "start": 1.0}, "eps_crit": 1e-3,
             "slope_tol": 0.1, "alpha_tol": 0.05, "refine": 3, "order_tol": 0.1},
    "eval": {"points": None, "tol": 1e-6},
    "pair": {"f": None, "method": "regularized", "p": None, "tol": 1e-6},
    "wavefront": {"points": None, "k_directions": 16, "rho": [4.0 * 2 ** j for j in range(9)],
                  "radius": 0.25, "shortcut": True, "floor_rel": 1e-10,
                  "n_threshold": 6.0, "n_singular": 1.5},
    "output": {"dir": "oscint-out"},
}


@dataclass
class RunConfig:
    """Validated configuration with defaults filled in."""

    raw: dict
    dims: E.Dims
    phase_expr: E.Expr
    mu: float
    box: Box
    symbol_expr: E.Expr
    symbol_imag: E.Expr | None
    symbol_order: float | None
    preset: str | None = None
    expected_invalid: bool = False
    settings: dict = field(default_factory=dict)

    @property
    def seed(self) -> int:
        return int(self.settings["seed"])

    def scan_config(self) -> ScanConfig:
        sc = self.settings["scan"]
        lad = sc["ladder"]
        return ScanConfig(directions=sc["directions"], seed=self.seed,
                          ladder=Ladder(lad["base"], int(lad["rungs"]), lad["start"]),
                          order_tol=sc["order_tol"], slope_tol=sc["slope_tol"],
                          grid=sc["grid"])

    def echo(self) -> dict:
        return {"input": self.raw, "resolved": {
            "dims": {"n": self.dims.n, "s": self.dims.s},
            "phase": E.format_expr(self.phase_expr), "mu": self.mu,
            "box": self.box.to_list(), "symbol": E.format_expr(self.symbol_expr),
            "symbol_imag": None if self.symbol_imag is None else E.format_expr(self.symbol_imag),
            "symbol_order": _num(self.symbol_order), "preset": self.preset,
            "settings": self.settings}}


def _check_keys(d: dict, schema: dict, path: str = "") -> None:
    for k, v in d.items():
        where = f"{path}{k}"
        if k not in schema:
            raise ConfigInvalid(f"unknown key {where!r}", {"field": where, "reason": "unknown"})
        sub = schema[k]
        if sub is not None and k != "params":
            if v is None:
                continue
            if not isinstance(v, dict):
                raise ConfigInvalid(f"{where!r} must be an object",
                                    {"field": where, "reason": "type"})
            _check_keys(v, sub, where + ".")


def _merge(defaults: dict, given: dict) -> dict:
    out = copy.deepcopy(defaults)
    for k, v in given.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = v
    return out


def load_config(path: str | os.PathLike) -> RunConfig:
    """Read, check and resolve a JSON config file."""
    p = Path(path)
    try:
        text = p.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigParse(f"cannot read config: {exc}", {"path": str(p), "line": None}) from None
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigParse(f"invalid JSON: {exc.msg}",
                          {"path": str(p), "line": exc.lineno}) from None
    if not isinstance(raw, dict):
        raise ConfigParse("config must be a JSON object", {"path": str(p), "line": 1})
    return build_config(raw)


def build_config(raw: dict) -> RunConfig:
    """Resolve an already parsed config mapping (see :func:`load_config`)."""
    raw = copy.deepcopy(raw)
    _check_keys(raw, _SCHEMA)
    resolved = copy.deepcopy(raw)
    # shorthand: top-level "preset" (and "params") name the phase source
    if "preset" in resolved or "params" in resolved:
        if "phase" in resolved or "preset" not in resolved:
            raise ConfigInvalid("top-level preset conflicts with the phase block",
                                {"field": "preset", "reason": "both"})
        resolved["phase"] = {"preset": resolved.pop("preset")}
        if "params" in resolved:
            resolved["phase"]["params"] = resolved.pop("params")
    raw, echo = resolved, raw
    if "command" in raw and raw["command"] not in COMMANDS:
        raise ConfigInvalid(f"unknown command {raw['command']!r}",
                            {"field": "command", "reason": "unknown"})
    ph = raw.get("phase")
    if not isinstance(ph, dict):
        raise ConfigInvalid("a phase source is required", {"field": "phase", "reason": "missing"})
    has_expr, has_preset = "expr" in ph, "preset" in ph
    if has_expr == has_preset:
        raise ConfigInvalid("exactly one of phase.expr and phase.preset must be given",
                            {"field": "phase", "reason": "both" if has_expr else "missing"})
    settings = _merge(DEFAULTS, {k: v for k, v in raw.items()
                                 if k in DEFAULTS and v is not None})
    preset_name, expected_invalid = None, False
    if has_preset:
        if "params" in ph and not isinstance(ph["params"], dict):
            raise ConfigInvalid("phase.params must be an object",
                                {"field": "phase.params", "reason": "type"})
        pre = get_preset(ph["preset"])
        dims, phi, mu, box = pre.build(ph.get("params"))
        preset_name, expected_invalid = pre.name, pre.expected_invalid
        if "dims" in raw:
            d = raw["dims"]
            if (d.get("n"), d.get("s")) != (dims.n, dims.s):
                raise ConfigInvalid(f"dims {d} do not match preset {pre.name} "
                                    f"(n={dims.n}, s={dims.s})",
                                    {"field": "dims", "reason": "mismatch"})
        if "mu" in raw:
            mu = _pos_float(raw["mu"], "mu")
        sym_default, order_default = pre.symbol, pre.symbol_order
    else:
        if "dims" not in raw or "mu" not in raw:
            raise ConfigInvalid("phase.expr needs dims and mu",
                                {"field": "dims" if "dims" not in raw else "mu",
                                 "reason": "missing"})
        dims = _dims(raw["dims"])
        phi = _parse(ph["expr"], dims, "phase.expr")
        mu = _pos_float(raw["mu"], "mu")
        box = Box.cube(dims.n, -1.0, 1.0)
        sym_default, order_default = "1", None
        if "params" in ph:
            raise ConfigInvalid("phase.params only applies to presets",
                                {"field": "phase.params", "reason": "unused"})
    if "box" in raw:
        box = _box(raw["box"], dims.n)
    sym = raw.get("symbol") or {}
    s_expr = _parse(sym.get("expr", sym_default), dims, "symbol.expr")
    s_imag = _parse(sym["imag"], dims, "symbol.imag") if sym.get("imag") is not None else None
    if "order" in sym:
        order = -math.inf if sym["order"] in ("-inf", None) else float(sym["order"])
    elif "expr" in sym:
        order = None
    else:
        order = order_default
    return RunConfig(echo, dims, phi, mu, box, s_expr, s_imag, order, preset_name,
                     expected_invalid, settings)


def _dims(d) -> E.Dims:
    try:
        return E.Dims(int(d["n"]), int(d["s"]))
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigInvalid(f"dims must be {{n, s}} positive integers ({exc})",
                            {"field": "dims", "reason": "type"}) from None


def _pos_float(v, name: str) -> float:
    try:
        f = float(v)
    except (TypeError, ValueError):
        f = float("nan")
    if not f > 0:
        raise ConfigInvalid(f"{name} must be a positive number", {"field": name, "reason": "range"})
    return f


def _box(b, n: int) -> Box:
    try:
        box = Box(tuple(tuple(iv) for iv in b))
    except (TypeError, ValueError) as exc:
        raise ConfigInvalid(f"invalid box: {exc}", {"field": "box", "reason": "type"}) from None
    if box.dim != n:
        raise ConfigInvalid(f"box has {box.dim} axes, expected {n}",
                            {"field": "box", "reason": "mismatch"})
    return box


def _parse(text, dims: E.Dims, where: str) -> E.Expr:
    if not isinstance(text, str):
        raise ConfigInvalid(f"{where} must be a string", {"field": where, "reason": "type"})
    try:
        return E.parse(text, dims)
    except OscintError as exc:
        raise ConfigInvalid(f"{where}: {exc}", {"field": where, "reason": "parse",
                                                **exc.witness}) from None


def _num(v):
    if v is None:
        return None
    if isinstance(v, (float, np.floating)) and not math.isfinite(v):
        return "inf" if v > 0 else "-inf"
    return float(v)


def _jsonify(o):
    """Replace non-finite floats so the report is strict JSON."""
    if isinstance(o, dict):
        return {k: _jsonify(v) for k, v in o.items()}
    if isinstance(o, (list, tuple)):
        return [_jsonify(v) for v in o]
    if isinstance(o, (np.floating, float)):
        return _num(o)
    if isinstance(o, np.integer):
        return int(o)
    if isinstance(o, np.bool_):
        return bool(o)
    if isinstance(o, np.ndarray):
        return _jsonify(o.tolist())
    return o


# ------------------------------------------------------------------ commands

def _phase(cfg: RunConfig) -> PhaseFn:
    return validate_phase(cfg.phase_expr, cfg.mu, cfg.box, cfg.dims, cfg.scan_config())


def _symbol(cfg: RunConfig) -> SymbolFn:
    if cfg.symbol_order is None:
        est = estimate_symbol(cfg.symbol_expr, cfg.dims, cfg.box, cfg.scan_config())
        return SymbolFn(cfg.symbol_expr, cfg.dims, est.order, "estimated", cfg.symbol_imag)
    return SymbolFn(cfg.symbol_expr, cfg.dims, cfg.symbol_order, "declared", cfg.symbol_imag)


def _points(given, box: Box, n: int, grid: int | None) -> np.ndarray:
    if given is None:
        return box.grid(grid or {1: 9, 2: 5, 3: 4}.get(n, 3))
    X = np.asarray(given, dtype=float)
    if X.ndim != 2 or X.shape[1] != n:
        raise ConfigInvalid(f"points must be a list of length-{n} coordinate lists",
                            {"field": "points", "reason": "shape"})
    return X.T


def _directions(given, dim: int, seed: int) -> np.ndarray:
    if given is None or isinstance(given, int):
        return direction_set(dim, given, seed)
    D = np.asarray(given, dtype=float)
    if D.ndim != 2 or D.shape[1] != dim:
        raise ConfigInvalid(f"directions must be a count or length-{dim} vectors",
                            {"field": "directions", "reason": "shape"})
    return D / np.linalg.norm(D, axis=1, keepdims=True)


def cmd_validate(cfg: RunConfig) -> dict:
    ph = _phase(cfg)
    return {"valid": True, "mu": ph.mu, "certificate": ph.certificate.to_dict(),
            "cutoff": {"r0": ph.cutoff.r0, "r1": ph.cutoff.r1}}


def cmd_eval(cfg: RunConfig) -> dict:
    from .quadrature import eval_pointwise
    ph = _phase(cfg)
    a = _symbol(cfg)
    X = _points(cfg.settings["eval"]["points"], cfg.box, cfg.dims.n, 5)
    res = eval_pointwise(a, ph, X, tol=cfg.settings["eval"]["tol"], seed=cfg.seed,
                         strict=cfg.settings["strict"])
    return res.to_dict()


def cmd_pair(cfg: RunConfig) -> dict:
    from .quadrature import TestFn, pair_direct, pair_regularized
    ph = _phase(cfg)
    a = _symbol(cfg)
    ps = cfg.settings["pair"]
    fs = ps["f"] or {}
    center = fs.get("center", [0.0] * cfg.dims.n)
    if len(center) != cfg.dims.n:
        raise ConfigInvalid("pair.f.center has the wrong length",
                            {"field": "pair.f.center", "reason": "shape"})
    f = TestFn(tuple(map(float, center)), float(fs.get("radius", 1.0)),
               float(fs.get("amplitude", 1.0)), float(fs.get("beta", 1.0)))
    kw = dict(tol=ps["tol"], seed=cfg.seed, workers=int(cfg.settings["threads"]),
              strict=cfg.settings["strict"])
    if ps["method"] == "direct":
        res = pair_direct(a, ph, f, **kw)
    elif ps["method"] == "regularized":
        res = pair_regularized(a, ph, f, p=ps["p"], **kw)
    else:
        raise ConfigInvalid("pair.method must be 'direct' or 'regularized'",
                            {"field": "pair.method", "reason": "value"})
    out = res.to_dict()
    out["f"] = f.to_dict()
    out["symbol_order"] = _num(a.order)
    return out


def _critical(cfg: RunConfig, ph: PhaseFn):
    from .microlocal import critical_set_scan
    sc = cfg.settings["scan"]
    X = _points(sc["points"], cfg.box, cfg.dims.n, sc["grid"])
    dirs = _directions(sc["directions"], cfg.dims.s, cfg.seed)
    return critical_set_scan(ph, X, dirs, cfg.scan_config().ladder, sc["eps_crit"],
                             sc["slope_tol"], int(sc["refine"]), seed=cfg.seed)


def cmd_critical_set(cfg: RunConfig) -> tuple[dict, dict]:
    from .microlocal import singular_support
    ph = _phase(cfg)
    scan = _critical(cfg, ph)
    ss = singular_support(scan)
    rep = scan.to_dict()
    rep["singular_support"] = ss.T.tolist()
    head = ",".join(f"x{i + 1}" for i in range(cfg.dims.n))
    rows = "".join(",".join(repr(float(v)) for v in col) + "\n" for col in ss.T)
    return rep, {"singular_support.csv": head + "\n" + rows}


def cmd_stationary_phase(cfg: RunConfig) -> dict:
    from .microlocal import stationary_phase_scan
    ph = _phase(cfg)
    scan = _critical(cfg, ph)
    sc = cfg.settings["scan"]
    kd = _directions(sc["k_directions"], cfg.dims.n, cfg.seed)
    sp = stationary_phase_scan(ph, scan, kd, sc["alpha_tol"], seed=cfg.seed)
    rep = sp.to_dict()
    rep["critical_rays"] = scan.to_dict()["critical_rays"]
    return rep


def cmd_wavefront(cfg: RunConfig) -> tuple[dict, dict]:
    from .microlocal import wavefront_scan
    ph = _phase(cfg)
    a = _symbol(cfg)
    w = cfg.settings["wavefront"]
    X = _points(w["points"], cfg.box, cfg.dims.n, 3)
    K = _directions(w["k_directions"], cfg.dims.n, cfg.seed)
    rep = wavefront_scan(a, ph, X.T, K, rhos=w["rho"], radius=w["radius"],
                         n_threshold=w["n_threshold"], n_singular=w["n_singular"],
                         floor_rel=w["floor_rel"], shortcut=bool(w["shortcut"]))
    return rep.to_dict(), {"wavefront.csv": rep.to_csv()}


def run_command(cmd: str, cfg: RunConfig | None, out_dir: str | os.PathLike | None = None
                ) -> tuple[int, dict]:
    """Run ``cmd`` and write its report; returns ``(exit code, report)``."""
    report: dict = {"tool": "oscint", "version": __version__, "command": cmd}
    if cfg is not None:
        report["seed"] = cfg.seed
        report["config"] = cfg.echo()
    extra: dict = {}
    code = 0
    try:
        if cmd == "presets":
            report["result"] = {"presets": list_presets()}
        elif cfg is None:
            raise ConfigInvalid(f"command {cmd!r} needs a config or --preset",
                                {"field": "phase", "reason": "missing"})
        else:
            fn = {"validate": cmd_validate, "eval": cmd_eval, "pair": cmd_pair,
                  "critical-set": cmd_critical_set, "stationary-phase": cmd_stationary_phase,
                  "wavefront": cmd_wavefront}[cmd]
            res = fn(cfg)
            if isinstance(res, tuple):
                res, extra = res
            report["result"] = res
    except (DegeneratePhase, NotASymbol) as exc:
        code = 2
        report["verdict"] = "invalid phase"
        report["error"] = {**exc.to_dict(), "operation": "validate_phase"}
    except OscintError as exc:
        code = 1
        report["error"] = {**exc.to_dict(), "operation": cmd}
    except (ValueError, ArithmeticError, MemoryError) as exc:
        code = 1
        report["error"] = {"error": type(exc).__name__, "module": "oscint", "message": str(exc),
                           "operation": cmd, "witness": {}}
    if out_dir is not None:
        d = Path(out_dir)
        d.mkdir(parents=True, exist_ok=True)
        (d / "report.json").write_text(dumps(report), encoding="utf-8")
        for name, text in extra.items():
            if text and not text.endswith("\n"):
                text += "\n"
            (d / name).write_text(text, encoding="utf-8")
    return code, report


def dumps(report: dict) -> str:
    return json.dumps(_jsonify(report), indent=2, sort_keys=True, allow_nan=False) + "\n"


_BUMP = re.compile(r"^\s*bump\s*\((.*)\)\s*$")


def _parse_f(text: str) -> dict:
    """``bump(c1,...,cn,r)`` or ``bump(c,r)`` -> test-function block."""
    m = _BUMP.match(text)
    if not m:
        raise ConfigInvalid("--f must look like bump(center..., radius)",
                            {"field": "--f", "reason": "syntax"})
    try:
        nums = [float(v) for v in m.group(1).split(",")]
    except ValueError:
        raise ConfigInvalid("--f arguments must be numbers",
                            {"field": "--f", "reason": "syntax"}) from None
    if len(nums) < 2:
        raise ConfigInvalid("--f needs a center and a radius", {"field": "--f", "reason": "syntax"})
    return {"center": nums[:-1], "radius": nums[-1]}


def main(argv: list[str] | None = None) -> int:
    ap = argparse.ArgumentParser(prog="oscint", description="Oscillatory integrals with "
                                 "inhomogeneous phase functions: validation, evaluation, "
                                 "and microlocal scans.")
    ap.add_argument("command", choices=COMMANDS)
    ap.add_argument("--config", help="JSON config file")
    ap.add_argument("--preset", help="use a built-in phase (overrides the config's phase)")
    ap.add_argument("--symbol", help="amplitude expression (overrides the config)")
    ap.add_argument("--f", dest="f", help="test function, e.g. bump(0,1)")
    ap.add_argument("--seed", type=int)
    ap.add_argument("--threads", type=int)
    ap.add_argument("--strict", action="store_true", help="compensated summation")
    ap.add_argument("--out", help="output directory (default from config, else oscint-out)")
    args = ap.parse_args(argv)

    cfg = None
    out = args.out
    try:
        raw: dict = {}
        if args.config:
            p = Path(args.config)
            try:
                raw = json.loads(p.read_text(encoding="utf-8"))
            except OSError as exc:
                raise ConfigParse(f"cannot read config: {exc}",
                                  {"path": str(p), "line": None}) from None
            except json.JSONDecodeError as exc:
                raise ConfigParse(f"invalid JSON: {exc.msg}",
                                  {"path": str(p), "line": exc.lineno}) from None
            if not isinstance(raw, dict):
                raise ConfigParse("config must be a JSON object", {"path": str(p), "line": 1})
        if args.preset:
            for key in ("preset", "params", "dims"):
                raw.pop(key, None)
            raw["phase"] = {"preset": args.preset}
        if args.symbol:
            raw["symbol"] = {"expr": args.symbol}
        if args.f:
            raw.setdefault("pair", {})["f"] = _parse_f(args.f)
        if args.seed is not None:
            raw["seed"] = args.seed
        if args.threads is not None:
            raw["threads"] = args.threads
        if args.strict:
            raw["strict"] = True
        if args.command != "presets" or raw.get("phase"):
            cfg = build_config(raw)
            out = out or cfg.settings["output"]["dir"]
    except OscintError as exc:
        report = {"tool": "oscint", "version": __version__, "command": args.command,
                  "error": {**exc.to_dict(), "operation": "load_config"}}
        if out:
            Path(out).mkdir(parents=True, exist_ok=True)
            (Path(out) / "report.json").write_text(dumps(report), encoding="utf-8")
        print(dumps(report), end="", file=sys.stderr)
        return 1
    code, report = run_command(args.command, cfg, out or DEFAULTS["output"]["dir"])
    summary = {k: report[k] for k in ("command", "verdict", "error") if k in report}
    if "result" in report and args.command in ("validate", "pair", "presets"):
        summary["result"] = report["result"]
    print(dumps(summary), end="")
    return code


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
