import csv
import json
import struct

import numpy as np
import pytest

from regsac import cli, harness
from regsac.output import MANIFEST_NAME, version_string, write_table_csv
from regsac.spectral import load_snapshot

TINY = {
    "simulate": {"solver": {"n_modes": 8, "T": 0.02, "tau": 1e-2}, "realizations": 2, "snapshot_times": [0.0, 0.02]},
    "converge": {"solver": {"n_modes": 8, "T": 0.016, "tau": 1e-3}, "tau_ladder": [8e-3, 4e-3, 2e-3], "tau_ref": 1e-3, "realizations": 4},
    "energy-scan": {"solver": {"n_modes": 8, "T": 0.1}, "realizations": 3, "delta_ladder": [1e-2, 1e-4], "record_every": 1},
    "coarsen": {"solver": {"n_modes": 8, "T": 0.1, "tau": 1e-2}, "epsilon_ladder": [0.0, 1e-2], "record_every": 1, "snapshot_times": [0.1]},
    "blowup-demo": {"solver": {"n_modes": 8, "T": 0.1, "tau": 1e-2}, "realizations": 2, "record_every": 1},
    "energy-law": {"solver": {"n_modes": 4, "T": 0.01, "tau": 2e-3}, "realizations": 10},
}

EXPECTED_TABLE = {
    "simulate": "diagnostics_0000.csv",
    "converge": "strong_errors.csv",
    "energy-scan": "energy_scan.csv",
    "coarsen": "coarsen_energy.csv",
    "blowup-demo": "blowup.csv",
    "energy-law": "energy_law.csv",
}


def run(tmp_path, name, cfg, *extra):
    path = tmp_path / f"{name}.json"
    path.write_text(json.dumps(cfg))
    out = tmp_path / f"out_{name}"
    return cli.main([name, "-c", str(path), "-o", str(out), *extra]), out


@pytest.mark.parametrize("name", harness.EXPERIMENTS)
def test_subcommands(tmp_path, name, capsys):
    code, out = run(tmp_path, name, TINY[name])
    assert code == 0
    table = out / EXPECTED_TABLE[name]
    with table.open() as fh:
        rows = list(csv.reader(fh))
    assert len(rows) >= 2
    manifest = json.loads((out / MANIFEST_NAME).read_text())
    assert manifest["version"].startswith("0.1.0")
    assert manifest["config"]["experiment"] == name
    assert table.name in manifest["outputs"]
    resolved = harness.ExperimentConfig.from_dict(manifest["config"])
    assert resolved.solver.n_modes == TINY[name]["solver"]["n_modes"]
    json.loads(capsys.readouterr().out)


def test_simulate_outputs(tmp_path):
    code, out = run(tmp_path, "simulate", TINY["simulate"])
    assert code == 0
    with (out / "diagnostics_0001.csv").open() as fh:
        header = next(csv.reader(fh))
    assert header == ["time", "energy", "sup_norm", "tail_upper", "tail_lower", "violation_measure", "blown_up"]
    f, meta = load_snapshot(out / "snapshot_0000_t0p020000")
    assert meta["time"] == pytest.approx(0.02) and meta["bc"] == "neumann" and meta["M"] == 8
    raw = (out / "snapshot_0000_t0p020000.bin").read_bytes()
    assert struct.unpack("<d", raw[:8])[0] == f.values[0, 0]
    first, _ = load_snapshot(out / "snapshot_0000_t0p000000.json")
    init = harness.initial_condition("fig1", f.basis)
    assert np.array_equal(first.values, init.values)


def test_outputs_deterministic(tmp_path):
    _, a = run(tmp_path, "energy-scan", TINY["energy-scan"], "--seed", "5")
    (a / "energy_scan.csv").rename(tmp_path / "first.csv")
    _, b = run(tmp_path, "energy-scan", TINY["energy-scan"], "--seed", "5")
    a = tmp_path / "first.csv"
    assert a.read_bytes() == (b / "energy_scan.csv").read_bytes()


def test_overrides(tmp_path):
    code, out = run(tmp_path, "simulate", TINY["simulate"], "-M", "3", "--seed", "9")
    assert code == 0
    manifest = json.loads((out / MANIFEST_NAME).read_text())
    assert manifest["config"]["realizations"] == 3 and manifest["config"]["solver"]["seed"] == 9
    assert (out / "diagnostics_0002.csv").exists()


def test_print_config(capsys):
    assert cli.main(["converge", "--print-config"]) == 0
    cfg = json.loads(capsys.readouterr().out)
    assert cfg["tau_ladder"] == [8e-3, 4e-3, 2e-3, 1e-3, 5e-4] and cfg["solver"]["c"] == 1.5


@pytest.mark.parametrize(
    "content",
    ['{"solver": {"tau": 0.3}}', '{"nope": 1}', "not json", "[1, 2]", '{"experiment": "converge"}', '{"initial_condition": "fig99"}'],
)
def test_config_errors(tmp_path, content):
    path = tmp_path / "bad.json"
    path.write_text(content)
    assert cli.main(["simulate", "-c", str(path), "-o", str(tmp_path / "o")]) == cli.EXIT_CONFIG


def test_missing_config(tmp_path):
    assert cli.main(["simulate", "-c", str(tmp_path / "absent.json")]) == cli.EXIT_CONFIG


def test_blowup_is_not_failure(tmp_path):
    cfg = {"solver": {"n_modes": 4, "T": 0.2, "tau": 1e-2, "noise": "additive", "epsilon": 30.0, "blowup_threshold": 2.0}, "realizations": 2}
    code, out = run(tmp_path, "simulate", cfg)
    assert code == cli.EXIT_OK
    manifest = json.loads((out / MANIFEST_NAME).read_text())
    assert manifest["results"]["blown_up"] == [True, True]


def test_ladder_not_coarser_than_reference(tmp_path):
    cfg = {"solver": {"n_modes": 4, "T": 0.04, "tau": 1e-2}, "tau_ladder": [4e-2, 2e-2, 1e-2], "tau_ref": 1e-2}
    code, _ = run(tmp_path, "converge", cfg)
    assert code == cli.EXIT_CONFIG


def test_numerical_failure_mapping(tmp_path, monkeypatch):
    def boom(cfg):
        raise FloatingPointError("overflow")

    monkeypatch.setattr(harness, "experiment_energy_law", boom)
    code, _ = run(tmp_path, "energy-law", TINY["energy-law"])
    assert code == cli.EXIT_NUMERICAL


def test_table_writer(tmp_path):
    p = write_table_csv(tmp_path / "t.csv", {"a": [1, 2], "b": [0.5, float("nan")], "c": np.array([True, False])})
    assert p.read_text().splitlines() == ["a,b,c", "1,0.5,1", "2,nan,0"]
    with pytest.raises(ValueError):
        write_table_csv(tmp_path / "u.csv", {"a": [1], "b": [1, 2]})


def test_version_string():
    assert version_string().startswith("0.1.0")
