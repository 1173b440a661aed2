"""Acceptance criteria 1-10, each checked at its stated tolerance and time limit.

Every criterion prints one ``PASS``/``FAIL`` line (collected in the terminal
summary as well). Run alone with ``pytest tests/test_acceptance.py -v``.
"""

import math
import subprocess
import sys
import time
from contextlib import contextmanager
from pathlib import Path

import numpy as np
import pytest
from scipy import integrate

from oscint import expr as E
from oscint.calculus import Box, SymbolFn, direction_set
from oscint.cli import main
from oscint.microlocal import critical_set_scan, stationary_phase_scan, wavefront_scan
from oscint.quadrature import TestFn, eval_pointwise, pair_direct, pair_regularized
from oscint.regularize import build_reducer, verify_transpose_identity

from conftest import build, bump_1d

RESULTS: list[str] = []


@contextmanager
def criterion(num: int, title: str, limit: float):
    t0 = time.perf_counter()
    detail = {}
    try:
        yield detail
    except BaseException as exc:
        line = f"criterion {num:2d} FAIL  {title} ({time.perf_counter() - t0:.1f}s): {exc}"
        RESULTS.append(line)
        print(line)
        raise
    elapsed = time.perf_counter() - t0
    ok = elapsed <= limit
    extra = ", ".join(f"{k}={v}" for k, v in detail.items())
    line = (f"criterion {num:2d} {'PASS' if ok else 'FAIL'}  {title} "
            f"({elapsed:.1f}s of {limit:.0f}s){': ' + extra if extra else ''}")
    RESULTS.append(line)
    print(line)
    assert ok, f"runtime {elapsed:.1f}s exceeds {limit}s"


def _angle(u, v) -> float:
    u = np.asarray(u, float) / np.linalg.norm(u)
    v = np.asarray(v, float) / np.linalg.norm(v)
    return 2 * math.asin(min(1.0, np.linalg.norm(u - v) / 2))


def test_criterion_01_transpose_identity():
    with criterion(1, "transpose identity <= 1e-9", 10) as d:
        for name, params in (("linear", {}), ("kg2pt", {}), ("distorted", {"nu": 3}),
                             ("moyal-euclid", {})):
            ph = build(name, **params)
            res = verify_transpose_identity(build_reducer(ph), ph, samples=1000, seed=0)
            d[name] = f"{res:.1e}"
            assert res <= 1e-9, f"{name}: residual {res}"


def test_criterion_02_gaussian_oracle():
    with criterion(2, "Gaussian oracle", 30) as d:
        ph = build("linear")
        a = SymbolFn(E.parse("exp(-t1^2)", ph.dims), ph.dims, -math.inf)
        xs = np.array([-2.0, -1.0, 0.0, 1.0, 2.0])
        vals = eval_pointwise(a, ph, xs[None, :]).values
        exact = math.sqrt(math.pi) * np.exp(-xs ** 2 / 4)
        rel = float(np.max(np.abs(vals - exact) / exact))
        ref = integrate.quad(lambda x: bump_1d(x) * math.sqrt(math.pi) * math.exp(-x * x / 4),
                             -1, 1, epsabs=1e-13, epsrel=1e-12)[0]
        pr = pair_direct(a, ph, TestFn.unit(1))
        d["pointwise_rel"] = f"{rel:.1e}"
        d["pairing_abs"] = f"{abs(pr.value - ref):.1e}"
        assert rel <= 1e-6
        assert abs(pr.value - ref) <= 1e-6


def test_criterion_03_regularization_consistency():
    with criterion(3, "p-independence and regularized = direct", 300) as d:
        kg = build("kg2pt")
        f = TestFn.unit(4)
        one = SymbolFn(E.ONE, kg.dims, 0.0)
        r4 = pair_regularized(one, kg, f, p=4)
        r5 = pair_regularized(one, kg, f, p=5)
        d["p4"] = f"{r4.value.real:.3f}+-{r4.abs_err:.2f}"
        d["p5"] = f"{r5.value.real:.3f}+-{r5.abs_err:.2f}"
        assert abs(r4.value - r5.value) <= r4.abs_err + r5.abs_err
        g = SymbolFn(E.exp(E.neg(E.sum_squares(E.ts(3)))), kg.dims, -math.inf)
        direct = pair_direct(g, kg, f)
        reg = pair_regularized(g, kg, f, p=1, split=None)
        d["direct"] = f"{direct.value.real:.5f}"
        d["regularized"] = f"{reg.value.real:.4f}+-{reg.abs_err:.3f}"
        assert abs(direct.value - reg.value) <= direct.abs_err + reg.abs_err


def test_criterion_04_kg_critical_set():
    with criterion(4, "KG critical set on 9^4 grid x 256 directions", 120) as d:
        kg = build("kg2pt")
        sc = critical_set_scan(kg, Box.cube(4, -2, 2), 256, grid=9)
        bad = 0
        rays = sc.rays()
        for r in rays:
            x, th = np.array(r.x), np.array(r.direction)
            if np.allclose(x, 0):
                continue
            xv = x[1:]
            if x[0] == 0 or abs(abs(x[0]) - np.linalg.norm(xv)) > 0.5:
                bad += 1
            elif _angle(th, np.sign(x[0]) * xv) > 0.05:
                bad += 1
        X, has = sc.points, sc.has_critical()
        on = np.isclose(np.abs(X[0]), np.linalg.norm(X[1:], axis=0))
        d.update(rays=len(rays), off_set=bad, set_points=int(on.sum()),
                 detected=int((has & on).sum()))
        assert bad == 0
        assert (has & on).sum() == on.sum()


def test_criterion_05_kg_stationary_phase():
    with criterion(5, "KG stationary-phase covectors", 120) as d:
        kg = build("kg2pt")
        pts = np.array([[0, 0, 0, 0], [1, 1, 0, 0]], float).T
        sp = stationary_phase_scan(kg, critical_set_scan(kg, pts, 256))
        worst = {0: 0.0, 1: 0.0}
        count = {0: 0, 1: 0}
        for v in sp.in_sp():
            k = np.array(v.k_hat)
            if np.allclose(v.x, 0):
                kv = k[1:]
                target = np.concatenate([[-1.0], kv / np.linalg.norm(kv)])
                key = 0
            else:
                target, key = np.array([-1.0, 1, 0, 0]), 1
            worst[key] = max(worst[key], _angle(k, target))
            count[key] += 1
        d.update(origin=f"{count[0]} within {worst[0]:.3f}",
                 cone=f"{count[1]} within {worst[1]:.3f}")
        assert count[0] > 0 and count[1] > 0
        assert worst[0] <= 0.1 and worst[1] <= 0.1


def test_criterion_06_kg_wavefront():
    with criterion(6, "KG wave-front containment", 600) as d:
        kg = build("kg2pt")
        one = SymbolFn(E.ONE, kg.dims, 0.0)
        off = wavefront_scan(one, kg, [(1, 0.5, 0, 0)], direction_set(4, 16, 0))
        n_off = min(e.N for e in off.entries)
        d["off_cone_min_N"] = n_off
        assert len(off.entries) == 16
        assert all(e.verdict == "smooth_direction" and e.N >= 6 for e in off.entries)
        on = wavefront_scan(one, kg, [(1, 1, 0, 0)], [(-1, 1, 0, 0), (1, 1, 0, 0)])
        sing, smooth = on.entries
        d["N_singular_dir"] = f"{sing.N:.2f}"
        d["N_smooth_dir"] = f"{smooth.N:.2f}"
        assert sing.N is not None and sing.N <= 1.5
        assert smooth.N is not None and smooth.N >= 6


def test_criterion_07_moyal_euclid():
    with criterion(7, "Euclidean Moyal: valid, no critical rays, smooth", 300) as d:
        ph = build("moyal-euclid")
        assert ph.mu == 2.0
        sc = critical_set_scan(ph, ph.box, 256, grid=9)
        sp = stationary_phase_scan(ph, sc)
        wf = wavefront_scan(SymbolFn(E.ONE, ph.dims, 0.0), ph, [(0, 0), (1, -0.5), (-1.5, 1)],
                            direction_set(2, 16))
        d.update(critical_rays=len(sc.rays()), in_sp=len(sp.in_sp()),
                 wavefront=f"{sum(e.verdict == 'smooth_direction' for e in wf.entries)}/"
                           f"{len(wf.entries)} smooth")
        assert len(sc.rays()) == 0 and len(sp.in_sp()) == 0
        assert all(e.verdict == "smooth_direction" for e in wf.entries)


def test_criterion_08_moyal_hyper(tmp_path):
    import json
    with criterion(8, "hyperbolic Moyal rejected with same-sign witness", 30) as d:
        code = main(["validate", "--preset", "moyal-hyper", "--out", str(tmp_path)])
        rep = json.loads((tmp_path / "report.json").read_text())
        w = rep["error"]["witness"]["direction"]
        d.update(exit=code, witness=[round(c, 4) for c in w])
        assert code == 2 and rep["error"]["error"] == "DegeneratePhase"
        assert w[0] * w[1] > 0


def test_criterion_09_distorted():
    with criterion(9, "distorted dispersion nu=3", 180) as d:
        ph = build("distorted", nu=3)
        assert ph.mu == 1.5
        sp = stationary_phase_scan(ph, critical_set_scan(ph, ph.box, 256, grid=5))
        ins = sp.in_sp()
        xs = np.array([v.x for v in ins])
        ang = max(min(_angle(v.k_hat, e), _angle(v.k_hat, -e))
                  for v in ins for e in [np.array([1.0, 0, 0, 0])])
        d.update(in_sp=len(ins), max_abs_x1=float(np.abs(xs[:, 0]).max()),
                 max_angle=f"{ang:.4f}")
        assert len(ins) > 0
        assert np.abs(xs[:, 0]).max() <= 1e-12
        assert ang <= 0.1


INVARIANT_TESTS = [
    "tests/test_expr.py::test_derivatives_match_central_differences",
    "tests/test_expr.py::test_round_trip",
    "tests/test_calculus.py::test_order_algebra",
    "tests/test_microlocal.py::test_conic_consistency_ladder_offset",
    "tests/test_microlocal.py::test_covector_rescaling_invariant",
    "tests/test_microlocal.py::test_sp_points_within_singular_support",
    "tests/test_microlocal.py::test_delta_is_singular",
    "tests/test_cli.py::test_determinism_strict",
]


def test_criterion_10_invariant_suites():
    root = Path(__file__).resolve().parents[1]
    with criterion(10, "invariant suites", 300) as d:
        r = subprocess.run([sys.executable, "-m", "pytest", "-q", "-p", "no:cacheprovider",
                            *INVARIANT_TESTS], cwd=root, capture_output=True, text=True)
        tail = r.stdout.strip().splitlines()[-1] if r.stdout.strip() else r.stderr[-200:]
        d["pytest"] = tail
        assert r.returncode == 0, r.stdout[-2000:]


if __name__ == "__main__":
    sys.exit(pytest.main([__file__, "-q"]))
