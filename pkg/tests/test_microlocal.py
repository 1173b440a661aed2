import csv
import io
import math

import numpy as np
import pytest

from oscint import expr as E
from oscint.calculus import Box, Ladder, SymbolFn, direction_set
from oscint.microlocal import (critical_set_scan, fit_decay, singular_support,
                               stationary_phase_scan, wavefront_scan)

from conftest import gaussian_symbol

KG_SP = np.array([-1.0, 1.0, 0, 0]) / math.sqrt(2)


def _angle(u, v):
    u, v = np.asarray(u, float), np.asarray(v, float)
    c = np.dot(u, v) / np.linalg.norm(u) / np.linalg.norm(v)
    return math.acos(max(-1.0, min(1.0, c)))


# -------------------------------------------------------------- fit_decay

def test_fit_decay_power_law():
    r = 4.0 * 2.0 ** np.arange(6)
    N, resid, res = fit_decay(r, 7 * r ** -3.0, np.full(6, 1e-14))
    assert N == pytest.approx(3.0, abs=1e-9) and resid < 1e-9 and res.all()


def test_fit_decay_floor_crossing_bounds_n():
    # values drop below the floor after three rungs: N is at least the crossing slope
    r = 4.0 * 2.0 ** np.arange(5)
    v = np.array([1.0, 0.5, 0.25, 1e-14, 1e-15])
    N, _, res = fit_decay(r, v, np.zeros(5), floor_rel=1e-10)
    assert list(res) == [True, True, True, False, False]
    assert N >= math.log(0.25 / 1e-10) / math.log(2) - 1e-9


def test_fit_decay_undetermined():
    r = 4.0 * 2.0 ** np.arange(4)
    N, _, res = fit_decay(r, np.full(4, 1e-3), np.full(4, 1.0))
    assert N is None and not res.any()
    N1, _, _ = fit_decay(r[:1], [1.0], [0.0])
    assert N1 is None


# ----------------------------------------------------------- critical set

def test_linear_critical_only_at_origin(linear):
    xs = np.array([[-1.0, -0.25, 0.0, 0.25, 1.0]])
    sc = critical_set_scan(linear, xs, None)
    assert list(sc.has_critical()) == [False, False, True, False, False]
    # the ratio equals |x| for this phase
    np.testing.assert_allclose(sc.min_ratio[:, 0], np.abs(xs[0]), atol=1e-15)
    assert singular_support(sc).tolist() == [[0.0]]


def test_kg_light_cone_direction(kg):
    sc = critical_set_scan(kg, np.array([[1.0, 1.0, 0, 0]]).T, 256)
    dirs = sc.critical_directions(0)
    assert dirs.shape[0] >= 1
    assert max(_angle(d, [1, 0, 0]) for d in dirs) < 0.05
    # sampled directions away from the axis are regular
    far = np.array([_angle(d, [1, 0, 0]) for d in sc.directions]) > 0.1
    assert not sc.critical[0, far].any()


def test_kg_origin_all_critical(kg):
    sc = critical_set_scan(kg, np.zeros((4, 1)), 64, refine=0)
    assert sc.critical.all()


def test_kg_off_cone_regular(kg):
    sc = critical_set_scan(kg, np.array([[1.0, 0.5, 0, 0]]).T, 256)
    assert not sc.has_critical().any()


def test_moyal_no_critical_rays(moyal):
    sc = critical_set_scan(moyal, moyal.box, 256, grid=5)
    assert not sc.has_critical().any()
    assert singular_support(sc).shape[1] == 0


def test_conic_consistency_ladder_offset(kg):
    pts = np.array([[1.0, 1.0, 0, 0], [1.0, 0.5, 0, 0], [0, 0, 0, 0], [0.5, -0.5, 0, 0]]).T
    a = critical_set_scan(kg, pts, 128, Ladder(2.0, 15, 1.0))
    b = critical_set_scan(kg, pts, 128, Ladder(2.0, 15, 1.5))
    assert (a.critical == b.critical).all()
    assert (a.has_critical() == b.has_critical()).all()


def test_closedness_stability(kg):
    pts = Box.cube(4, -2, 2).grid(3)
    coarse = critical_set_scan(kg, pts, 128, refine=0)
    fine = critical_set_scan(kg, pts, 256, refine=0)
    confident = (~coarse.critical) & (coarse.min_ratio > 2 * coarse.eps_crit)
    for p in np.nonzero(confident.any(axis=1))[0]:
        # a point whose every coarse direction is confidently regular stays regular
        if confident[p].all():
            assert not fine.critical[p].any()


# -------------------------------------------------------- stationary phase

def test_linear_sp_full_sphere(linear):
    sc = critical_set_scan(linear, np.array([[0.0]]), None)
    sp = stationary_phase_scan(linear, sc, augment=False)
    assert sorted(v.k_hat for v in sp.in_sp()) == [(-1.0,), (1.0,)]


def test_kg_sp_on_cone(kg):
    sc = critical_set_scan(kg, np.array([[1.0, 1.0, 0, 0]]).T, 256)
    sp = stationary_phase_scan(kg, sc, [KG_SP, -KG_SP, [1, 1, 0, 0]], augment=False,
                               include_outside=True)
    assert [v.verdict for v in sp.verdicts] == ["in_SP", "outside_SP", "outside_SP"]


def test_kg_sp_at_origin(kg):
    sc = critical_set_scan(kg, np.zeros((4, 1)), 256)
    sp = stationary_phase_scan(kg, sc)
    ks = np.array([v.k_hat for v in sp.in_sp()])
    assert ks.shape[0] > 10
    # (-|k|, k) / norm: time component -1/sqrt(2)
    np.testing.assert_allclose(ks[:, 0], -1 / math.sqrt(2), atol=0.05)


def test_covector_rescaling_invariant(kg):
    sc = critical_set_scan(kg, np.array([[1.0, 1.0, 0, 0]]).T, 256)
    K = direction_set(4, 64, 3)
    a = stationary_phase_scan(kg, sc, K, augment=False, include_outside=True)
    b = stationary_phase_scan(kg, sc, 7.5 * K, augment=False, include_outside=True)
    assert [v.verdict for v in a.verdicts] == [v.verdict for v in b.verdicts]


def test_sp_points_within_singular_support(kg):
    sc = critical_set_scan(kg, Box.cube(4, -2, 2).grid(3), 128)
    sp = stationary_phase_scan(kg, sc)
    supp = {tuple(map(float, c)) for c in singular_support(sc).T}
    assert {v.x for v in sp.in_sp()} <= supp


# ------------------------------------------------------------- wave front

def test_gaussian_output_is_smooth(linear):
    a = gaussian_symbol(linear.dims)
    wf = wavefront_scan(a, linear, [[0.0], [0.5]], [[1.0], [-1.0]], shortcut=False)
    assert all(e.verdict == "smooth_direction" for e in wf.entries)
    assert all(e.N >= 6 for e in wf.entries)


def test_delta_is_singular(linear):
    wf = wavefront_scan(SymbolFn(E.ONE, linear.dims, 0.0), linear, [[0.0]], [[1.0], [-1.0]])
    assert [e.verdict for e in wf.entries] == ["singular_direction"] * 2
    sc = critical_set_scan(linear, np.array([[0.0]]), None)
    sp = stationary_phase_scan(linear, sc)
    in_sp = {v.k_hat for v in sp.in_sp()}
    assert {e.k_hat for e in wf.entries} <= in_sp


def test_shortcut_off_singular_support(kg):
    wf = wavefront_scan(SymbolFn(E.ONE, kg.dims, 0.0), kg, [[1.0, 0.5, 0, 0]],
                        direction_set(4, 8, 0))
    assert all(e.verdict == "smooth_direction" and e.N == math.inf for e in wf.entries)
    assert all(e.policy == "theta-reduced-shortcut" for e in wf.entries)
    d = wf.to_dict()
    assert d["entries"][0]["N"] == "inf"


def test_report_csv(linear):
    wf = wavefront_scan(gaussian_symbol(linear.dims), linear, [[0.5]], [[1.0]], shortcut=False)
    rows = list(csv.reader(io.StringIO(wf.to_csv())))
    assert rows[0] == ["x1", "khat1", "N_fit", "residual", "verdict"]
    assert rows[1][-1] == "smooth_direction" and len(rows) == 2
