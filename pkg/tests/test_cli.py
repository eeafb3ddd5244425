import json
import subprocess
import sys

import numpy as np
import pytest

from kppspeed.cli import ConfigError, main, resolve_config


def read_manifest(out):
    return json.loads((out / "manifest.json").read_text())


def write_config(tmp_path, data, name="cfg.json"):
    p = tmp_path / name
    p.write_text(json.dumps(data))
    return p


def test_speed_zero_shear(tmp_path):
    out = tmp_path / "out"
    assert main(["speed", "--out", str(out)]) == 0
    rows = np.loadtxt(out / "speed.csv", delimiter=",", skiprows=1)
    assert rows[0] == pytest.approx(2.0, abs=1e-10)
    assert rows[1] == pytest.approx(1.0, abs=1e-6)
    m = read_manifest(out)
    assert m["command"] == "speed" and m["config"]["m"] == 201


def test_speed_trace_and_ou(tmp_path):
    cfg = write_config(tmp_path, {"shear": "ou", "index": 3, "delta": 2.0, "trace": True, "m": 51})
    out = tmp_path / "out"
    assert main(["speed", "--config", str(cfg), "--out", str(out)]) == 0
    assert (out / "trace.csv").read_text().startswith("lambda,H\n")


def test_missing_config_writes_nothing(tmp_path):
    out = tmp_path / "out"
    assert main(["ensemble", "--config", str(tmp_path / "nope.json"), "--out", str(out)]) == 2
    assert not out.exists()
    assert list(tmp_path.iterdir()) == []


@pytest.mark.parametrize("data", [{"bogus": 1}, {"N": "many"}, {"deltas": []}, {"trace": 1}])
def test_bad_config_rejected(tmp_path, data):
    cfg = write_config(tmp_path, data)
    out = tmp_path / "out"
    assert main(["speed", "--config", str(cfg), "--out", str(out)]) != 0
    assert not out.exists()
    with pytest.raises(ConfigError):
        resolve_config("speed", cfg)


def test_failed_run_leaves_no_partial_output(tmp_path):
    cfg = write_config(tmp_path, {"shear": "wavy"})
    out = tmp_path / "out"
    assert main(["speed", "--config", str(cfg), "--out", str(out)]) == 1
    assert not out.exists()
    assert [p.name for p in tmp_path.iterdir()] == ["cfg.json"]


def test_overrides_take_precedence(tmp_path):
    cfg = write_config(tmp_path, {"N": 7, "seed": 2})
    c = resolve_config("ensemble", cfg, {"N": 9, "seed": None})
    assert c["N"] == 9 and c["seed"] == 2


def test_manifest_rerun_is_byte_identical(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    assert main(["ensemble", "--out", str(a), "--n", "12", "--m", "41", "--seed", "5",
                 "--deltas", "0.5,2"]) == 0
    assert main(["ensemble", "--config", str(a / "manifest.json"), "--out", str(b)]) == 0
    for f in a.glob("*.csv"):
        assert f.read_bytes() == (b / f.name).read_bytes(), f.name
    assert read_manifest(a)["config"] == read_manifest(b)["config"]


def test_tiny_ensemble_flagged_unreliable(tmp_path):
    out = tmp_path / "o"
    assert main(["ensemble", "--out", str(out), "--n", "1", "--m", "21", "--deltas", "1"]) == 0
    m = read_manifest(out)
    assert m["statistically_reliable"] is False
    lines = (out / "ensemble_summary.csv").read_text().splitlines()
    assert lines[1].split(",")[2] == "nan"


def test_single_alpha_sweep_makes_no_claim(tmp_path):
    cfg = write_config(tmp_path, {"alphas": [1.0], "N": 5, "m": 21})
    out = tmp_path / "o"
    assert main(["cov-sweep", "--config", str(cfg), "--out", str(out)]) == 0
    assert read_manifest(out)["result"]["argmax_alpha"] is None


def test_cov_sweep_small(tmp_path):
    cfg = write_config(tmp_path, {"alphas": [0.25, 4.0, 256.0], "N": 30, "m": 41})
    out = tmp_path / "o"
    assert main(["cov-sweep", "--config", str(cfg), "--out", str(out)]) == 0
    res = read_manifest(out)["result"]
    assert res["closed_form_argmax_alpha"] == 4.0
    rows = np.loadtxt(out / "cov_sweep.csv", delimiter=",", skiprows=1)
    assert rows.shape == (3, 7)


def test_pdf_and_bounds_small(tmp_path):
    out = tmp_path / "p"
    assert main(["pdf", "--out", str(out), "--n", "200", "--m", "41", "--deltas", "1,14"]) == 0
    info = read_manifest(out)["result"]
    for d in ("1", "14"):
        assert info[d]["integral"] == pytest.approx(1.0, abs=1e-12)
        assert (out / f"pdf_{d}.csv").exists()
    out = tmp_path / "b"
    cfg = write_config(tmp_path, {"N": 20, "m": 51, "delta": 50.0, "kappa": 0.01})
    assert main(["bounds", "--config", str(cfg), "--out", str(out)]) == 0
    assert read_manifest(out)["result"]["violations_scaled"] == 0
    rows = np.loadtxt(out / "bounds.csv", delimiter=",", skiprows=1)
    assert np.all(rows[:, 1] <= np.minimum(rows[:, 3], rows[:, 4]))


def test_scaling_small(tmp_path):
    cfg = write_config(tmp_path, {"L_list": [1.0], "N": 20, "m": 41,
                                  "small_deltas": [0.1, 0.2], "large_deltas": [50.0, 100.0]})
    out = tmp_path / "s"
    assert main(["scaling", "--config", str(cfg), "--out", str(out)]) == 0
    p_small, p_large = read_manifest(out)["result"]["exponents"]["1"]
    assert 1.8 < p_small < 2.2 and 0.9 < p_large < 1.4
    assert (out / "curve_L1.csv").exists() and (out / "exponents.csv").exists()


def test_pdesim_compare_small(tmp_path):
    cfg = write_config(tmp_path, {"N": 2, "t_final": 40.0, "nonlinearities": ["kpp", "bistable"]})
    out = tmp_path / "d"
    assert main(["pdesim-compare", "--config", str(cfg), "--out", str(out)]) == 0
    info = read_manifest(out)["result"]
    assert info["kpp"]["seed"] != info["bistable"]["seed"]
    assert "ks_kpp_bistable_0.5" in info
    rows = np.loadtxt(out / "direct_kpp.csv", delimiter=",", skiprows=1)
    assert rows[:, 4] == pytest.approx(rows[:, 6], rel=0.05)


def test_console_entry_point(tmp_path):
    r = subprocess.run([sys.executable, "-m", "kppspeed.cli", "speed", "--out", str(tmp_path / "x")],
                       capture_output=True, text=True)
    assert r.returncode == 0, r.stderr
