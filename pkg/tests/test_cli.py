import json
import math
import subprocess
import sys

import numpy as np
import pytest
from scipy import integrate

from oscint import expr as E
from oscint.cli import build_config, load_config, main, run_command
from oscint.errors import ConfigInvalid, ConfigParse

from conftest import bump_1d


def _run(tmp_path, *argv, config=None):
    args = list(argv)
    if config is not None:
        p = tmp_path / "cfg.json"
        p.write_text(json.dumps(config))
        args += ["--config", str(p)]
    out = tmp_path / "out"
    code = main(args + ["--out", str(out)])
    return code, json.loads((out / "report.json").read_text()), out


# ------------------------------------------------------------------ config

def test_minimal_config_defaults(tmp_path):
    p = tmp_path / "c.json"
    p.write_text(json.dumps({"dims": {"n": 4, "s": 3}, "preset": "kg2pt"}))
    cfg = load_config(p)
    assert cfg.dims == E.Dims(4, 3) and cfg.mu == 1.0 and cfg.seed == 0
    assert cfg.settings["scan"]["eps_crit"] == 1e-3
    assert cfg.settings["wavefront"]["radius"] == 0.25


def test_both_phase_sources_rejected():
    with pytest.raises(ConfigInvalid):
        build_config({"dims": {"n": 1, "s": 1}, "mu": 1,
                      "phase": {"expr": "x1*t1", "preset": "linear"}})


def test_unknown_key_rejected():
    with pytest.raises(ConfigInvalid) as ei:
        build_config({"preset": "linear", "scan": {"directionz": 3}})
    assert "directionz" in str(ei.value.witness)


def test_dims_mismatch_rejected():
    with pytest.raises(ConfigInvalid):
        build_config({"dims": {"n": 2, "s": 2}, "preset": "kg2pt"})


def test_unknown_preset():
    with pytest.raises(ConfigInvalid):
        build_config({"preset": "nope"})


def test_parse_error_has_line(tmp_path):
    p = tmp_path / "bad.json"
    p.write_text('{\n  "preset": "linear",\n  oops\n}')
    with pytest.raises(ConfigParse) as ei:
        load_config(p)
    assert ei.value.witness["line"] == 3


def test_kg_mass_parameter():
    cfg = build_config({"phase": {"preset": "kg2pt", "params": {"m2": 4}}})
    text = E.format_expr(cfg.phase_expr)
    assert "4 + t1^2 + t2^2 + t3^2" in text or "t1^2 + t2^2 + t3^2 + 4" in text
    with pytest.raises(ConfigInvalid):
        build_config({"phase": {"preset": "kg2pt", "params": {"m2": 0}}})


def test_expr_phase_needs_dims_and_mu():
    cfg = build_config({"dims": {"n": 1, "s": 1}, "mu": 1, "phase": {"expr": "x1*t1"}})
    assert cfg.dims == E.Dims(1, 1)
    with pytest.raises(ConfigInvalid):
        build_config({"phase": {"expr": "x1*t1"}})


# ---------------------------------------------------------------- commands

def test_presets_catalog(tmp_path):
    code, rep, _ = _run(tmp_path, "presets")
    assert code == 0
    cat = {p["name"]: p for p in rep["result"]["presets"]}
    assert cat["kg2pt"]["mu"] == 1.0
    assert cat["moyal-euclid"]["mu"] == 2.0
    assert cat["moyal-hyper"]["expected_invalid"] is True
    assert {"linear", "gaussian", "distorted"} <= set(cat)


@pytest.mark.parametrize("name,mu", [("kg2pt", 1.0), ("distorted", 1.5), ("moyal-euclid", 2.0),
                                     ("linear", 1.0), ("gaussian", 1.0)])
def test_validate_presets(tmp_path, name, mu):
    code, rep, _ = _run(tmp_path, "validate", "--preset", name)
    assert code == 0 and rep["result"]["valid"] and rep["result"]["mu"] == mu
    assert rep["tool"] == "oscint" and "version" in rep and rep["seed"] == 0
    assert "config" in rep


def test_validate_moyal_hyper_exit_2(tmp_path):
    code, rep, _ = _run(tmp_path, "validate", "--preset", "moyal-hyper")
    assert code == 2 and rep["verdict"] == "invalid phase"
    err = rep["error"]
    assert err["error"] == "DegeneratePhase"
    d = err["witness"]["direction"]
    assert d[0] * d[1] > 0


def test_critical_set_moyal_empty(tmp_path):
    code, rep, out = _run(tmp_path, "critical-set", "--preset", "moyal-euclid")
    assert code == 0 and rep["result"]["critical_rays"] == 0
    assert (out / "singular_support.csv").read_text() == "x1,x2\n"


def test_critical_set_linear_csv(tmp_path):
    cfg = {"preset": "linear", "scan": {"points": [[-1.0], [0.0], [1.0]]}}
    code, rep, out = _run(tmp_path, "critical-set", config=cfg)
    assert code == 0 and rep["result"]["singular_support"] == [[0.0]]
    assert (out / "singular_support.csv").read_text() == "x1\n0.0\n"


def test_pair_gaussian_oracle(tmp_path):
    code, rep, _ = _run(tmp_path, "pair", "--preset", "linear", "--symbol", "exp(-t1^2)",
                        "--f", "bump(0,1)")
    ref = integrate.quad(lambda x: bump_1d(x) * math.sqrt(math.pi) * math.exp(-x * x / 4),
                         -1, 1, epsabs=1e-13)[0]
    assert code == 0
    re, im = rep["result"]["value"]
    assert abs(complex(re, im) - ref) <= 1e-6


def test_eval_and_sp_commands(tmp_path):
    cfg = {"preset": "linear", "symbol": {"expr": "exp(-t1^2)"},
           "eval": {"points": [[0.0], [1.0]]}, "scan": {"points": [[0.0], [0.5]]}}
    code, rep, _ = _run(tmp_path, "eval", config=cfg)
    assert code == 0
    vals = np.array(rep["result"]["values"])
    np.testing.assert_allclose(vals[:, 0], math.sqrt(math.pi) * np.exp(-np.array([0, 1]) / 4),
                               rtol=1e-6)
    code, rep, _ = _run(tmp_path, "stationary-phase", config=cfg)
    assert code == 0 and rep["result"]["in_SP"] >= 2


def test_wavefront_command(tmp_path):
    cfg = {"preset": "kg2pt", "wavefront": {"points": [[1.0, 0.5, 0, 0]], "k_directions": 4}}
    code, rep, out = _run(tmp_path, "wavefront", config=cfg)
    assert code == 0
    assert {e["verdict"] for e in rep["result"]["entries"]} == {"smooth_direction"}
    lines = (out / "wavefront.csv").read_text().splitlines()
    assert lines[0].startswith("x1,x2,x3,x4,khat1") and len(lines) == 5


def test_operational_error_exit_1(tmp_path):
    # a = 1 is not absolutely integrable, so the direct pairing refuses
    cfg = {"preset": "linear", "pair": {"method": "direct"}}
    code, rep, _ = _run(tmp_path, "pair", config=cfg)
    assert code == 1 and rep["error"]["error"] == "NotConvergent"
    assert rep["error"]["operation"] == "pair"


def test_config_error_exit_1(tmp_path):
    code, rep, _ = _run(tmp_path, "validate", config={"preset": "kg2pt", "params": {"m2": 0}})
    assert code == 1 and rep["error"]["error"] == "ConfigInvalid"


def test_determinism_strict(tmp_path):
    cfg = build_config({"preset": "linear", "symbol": {"expr": "exp(-t1^2)"}, "strict": True,
                        "scan": {"points": [[0.0], [0.5]]}})
    for cmd in ("pair", "critical-set"):
        run_command(cmd, cfg, tmp_path / "a")
        run_command(cmd, cfg, tmp_path / "b")
        assert (tmp_path / "a" / "report.json").read_bytes() == \
            (tmp_path / "b" / "report.json").read_bytes()


def test_console_entry_point(tmp_path):
    r = subprocess.run([sys.executable, "-m", "oscint.cli", "validate", "--preset",
                        "moyal-hyper", "--out", str(tmp_path)], capture_output=True, text=True)
    assert r.returncode == 2
    assert json.loads(r.stdout)["verdict"] == "invalid phase"
    assert (tmp_path / "report.json").read_text(encoding="utf-8").endswith("\n")
