import csv
import json

import numpy as np
import pytest

from ccphase.cli import (EXIT_ERROR, EXIT_OK, EXIT_PARTIAL, ConfigError, device_from, load_config,
                         main, resolve, set_path, sweep_values)

SMALL_GRID = {"start": 4.2, "stop": 6.2, "points": 101}
ZERO_COUPLINGS = {f"{a}-{b}": 0.0 for a, b in [("q1", "coupler"), ("q2", "coupler"),
                                               ("q3", "coupler"), ("q1", "q2"), ("q2", "q3"),
                                               ("q1", "q3")]}


def _write(tmp_path, cfg, name="cfg.json"):
    p = tmp_path / name
    p.write_text(json.dumps(cfg))
    return str(p)


def _rows(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def test_spectrum_outputs_and_manifest(tmp_path):
    cfg = _write(tmp_path, {"grid": SMALL_GRID})
    out = tmp_path / "run"
    assert main(["spectrum", "--config", cfg, "--out", str(out)]) == EXIT_OK
    for name in ("spectrum.csv", "adiabatic.csv", "shifts.csv", "diabatic_events.csv",
                 "config.json", "manifest.json"):
        assert (out / name).exists(), name
    man = json.loads((out / "manifest.json").read_text())
    assert man["status"] == "ok" and "shifts.csv" in man["files"]
    rows = _rows(out / "shifts.csv")
    assert len(rows) == 101
    idle = [r for r in rows if abs(float(r["coupler_freq_ghz"]) - 5.8) < 1e-9][0]
    assert all(abs(float(idle[k])) < 1e-4 for k in idle if k.startswith("chi"))


def test_zero_coupling_spectrum_is_flat(tmp_path):
    cfg = _write(tmp_path, {"grid": SMALL_GRID, "device": {"couplings": ZERO_COUPLINGS}})
    out = tmp_path / "run"
    assert main(["spectrum", "--config", cfg, "--out", str(out)]) == EXIT_OK
    chi = np.array([[float(r[k]) for k in r if k.startswith("chi")]
                    for r in _rows(out / "shifts.csv")])
    assert np.max(np.abs(chi)) < 1e-12


def test_spectrum_refinement_and_determinism(tmp_path):
    runs = {}
    for n in (201, 401, 401):
        out = tmp_path / f"run{n}_{len(runs)}"
        cfg = _write(tmp_path, {"grid": {"start": 4.2, "stop": 6.2, "points": n}})
        assert main(["spectrum", "--config", cfg, "--out", str(out)]) == EXIT_OK
        runs[out.name] = (out / "shifts.csv").read_bytes()
    a, b, c = runs.values()
    assert b == c  # same config, same bytes
    coarse = np.loadtxt(tmp_path / "run201_0" / "shifts.csv", delimiter=",", skiprows=1)
    fine = np.loadtxt(tmp_path / "run401_1" / "shifts.csv", delimiter=",", skiprows=1)[::2]
    big = np.abs(coarse[:, 1:]) > 1e-3
    assert np.all(np.abs(fine[:, 1:] - coarse[:, 1:])[big] <= 1e-3 * np.abs(coarse[:, 1:])[big])


def test_refuses_non_empty_output_without_overwrite(tmp_path):
    cfg = _write(tmp_path, {"grid": SMALL_GRID})
    out = tmp_path / "run"
    assert main(["spectrum", "--config", cfg, "--out", str(out)]) == EXIT_OK
    assert main(["spectrum", "--config", cfg, "--out", str(out)]) == EXIT_ERROR
    assert main(["spectrum", "--config", cfg, "--out", str(out), "--overwrite"]) == EXIT_OK


def test_empty_grid_fails_before_simulation(tmp_path):
    cfg = _write(tmp_path, {"sweep": {"parameter": "pulses.op_freq", "values": []}})
    out = tmp_path / "run"
    assert main(["sweep", "--config", cfg, "--out", str(out)]) == EXIT_ERROR
    assert not out.exists()
    with pytest.raises(ConfigError):
        sweep_values({"start": 0, "stop": 1, "num": 0})
    with pytest.raises(ConfigError):
        sweep_values({"values": [1.0, float("nan")]})


def test_bad_parameter_path(tmp_path):
    cfg = _write(tmp_path, {"sweep": {"parameter": "device.nonsense", "values": [1.0]}})
    assert main(["sweep", "--config", cfg, "--out", str(tmp_path / "r")]) == EXIT_ERROR
    base = resolve({})
    with pytest.raises(ConfigError):
        set_path(base, "pulses.op_freq.x", 1.0)
    with pytest.raises(ConfigError):
        set_path(base, "device.modes.q9.frequency", 1.0)
    assert set_path(base, "device.modes.q1.frequency", 3.6)["device"]["modes"][1]["frequency"] == 3.6
    spec = device_from(set_path(base, "device.g_ic", 0.11))
    assert [spec.coupling(q, "coupler") for q in ("q1", "q2", "q3")] == [0.11] * 3
    assert spec.coupling("q1", "q2") == 0.013


def test_unknown_sections_and_bad_json(tmp_path):
    with pytest.raises(ConfigError):
        resolve({"devise": {}})
    p = tmp_path / "bad.json"
    p.write_text("{not json")
    assert main(["spectrum", "--config", str(p), "--out", str(tmp_path / "r")]) == EXIT_ERROR
    with pytest.raises(ConfigError):
        load_config(None, dt_ps=-1.0)
    assert load_config(None, dt_ps=25.0)["pulses"]["sim_rate"] == pytest.approx(40.0)


def test_sweep_records_point_failures(tmp_path):
    cfg = _write(tmp_path, {
        "grid": SMALL_GRID,
        "sweep": {"parameter": "device.modes.q1.level_count", "values": [4, 1, 3],
                  "probe": "shifts"},
    })
    out = tmp_path / "run"
    assert main(["sweep", "--config", cfg, "--out", str(out), "--workers", "2"]) == EXIT_PARTIAL
    rows = _rows(out / "sweep.csv")
    assert [r["status"] for r in rows] == ["ok", "failed", "ok"]
    assert "level" in rows[1]["error"]
    assert json.loads((out / "manifest.json").read_text())["status"] == "partial"


def test_identity_gate(tmp_path):
    cfg = _write(tmp_path, {"grid": SMALL_GRID, "gate": {"kind": "identity"}})
    out = tmp_path / "run"
    assert main(["gate", "--config", cfg, "--out", str(out)]) == EXIT_OK
    rep = json.loads((out / "report.json").read_text())
    assert rep["fidelity"] > 0.9999
