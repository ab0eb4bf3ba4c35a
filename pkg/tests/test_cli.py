import csv
import hashlib
import io
import json

import pytest

from cqad.cli import main
from cqad.device import CouplingGraph, DeviceConfig, TransmonParams, dump_config
from cqad.spectrum import TwoFamilyScheme, UniformScheme, generate_spectrum, two_family_device_graph

MHZ = 1e6
TR = TransmonParams(5e9, 150 * MHZ)


def _write(path, obj):
    path.write_text(json.dumps(obj))
    return str(path)


@pytest.fixture
def devices(tmp_path):
    spec, graph, _ = two_family_device_graph(TwoFamilyScheme(10 * MHZ, 11 * MHZ, counts=(6, 6), base=5.1e9,
                                                             g=5 * MHZ), 8)
    good = tmp_path / "two_family.json"
    dump_config(DeviceConfig(TR, spec, graph), good)
    uni = generate_spectrum(UniformScheme(10 * MHZ, 8, 5.1e9, g=5 * MHZ))
    bad = tmp_path / "uniform.json"
    dump_config(DeviceConfig(TR, uni, CouplingGraph(frozenset(range(8)), frozenset({frozenset((0, 1))}))), bad)
    return str(good), str(bad), graph.sorted_pairs()[0]


def test_unknown_flag_is_usage_error(capsys):
    assert main(["fidelity-map", "--bogus"]) == 1
    assert "usage" in capsys.readouterr().err


def test_missing_subcommand_is_usage_error(capsys):
    assert main([]) == 1


def test_fidelity_map_shape_and_columns(tmp_path):
    out = tmp_path / "map.csv"
    assert main(["fidelity-map", "--grid", "3x4", "--gate", "cz", "--out", str(out)]) == 0
    rows = list(csv.DictReader(io.StringIO(out.read_text())))
    assert len(rows) == 12
    assert list(rows[0]) == ["kappa_hz", "gamma_hz", "g_opt_hz", "infidelity", "constrained",
                             "direct_g_opt_hz", "direct_infidelity", "direct_constrained", "log_ratio"]
    assert b"\r\n" not in out.read_bytes()


@pytest.mark.parametrize("mode", ["direct", "virtual"])
def test_fidelity_map_single_mode(mode, capsys):
    assert main(["fidelity-map", "--grid", "2x2", "--mode", mode, "--format", "json"]) == 0
    rows = json.loads(capsys.readouterr().out)
    assert len(rows) == 4 and all(0 < r["infidelity"] <= 1 for r in rows)


def test_manifest_records_hashes(tmp_path):
    out = tmp_path / "v.json"
    assert main(["qvolume", "--seed", "3", "--out", str(out)]) == 0
    man = json.loads((tmp_path / "v.json.manifest.json").read_text())
    assert man["subcommand"] == "qvolume" and man["seed"] == 3
    key = str(out.resolve())
    assert man["outputs"][key] == hashlib.sha256(out.read_bytes()).hexdigest()
    assert set(man) >= {"config_paths", "version", "wall_clock_s"}


def test_qvolume_constant_infidelity(capsys):
    assert main(["qvolume", "--infidelity", "0.01", "--m-range", "2:30"]) == 0
    res = json.loads(capsys.readouterr().out)
    assert res == {"M_opt": 10, "V": 100.0}


def test_sweep_is_byte_identical(tmp_path):
    outs = []
    for k in range(2):
        p = tmp_path / f"s{k}.csv"
        assert main(["qram", "sweep", "--depths", "1:2", "--eps", "0.01", "--trials", "100", "--seed", "5",
                     "--out", str(p)]) == 0
        outs.append(p.read_bytes())
    assert outs[0] == outs[1]
    assert outs[0].count(b"\n") == 3


def test_sweep_trial_floor_is_validation_error():
    assert main(["qram", "sweep", "--depths", "1", "--trials", "10"]) == 2


def test_plan_exit_codes(devices, tmp_path, capsys):
    good, bad, (a, b) = devices
    anchors = {"omega_hz": 6e9, "amplitude_hz": 0.1e9, "amplitude2_hz": 0.1e9}
    req = _write(tmp_path / "r.json", {"kind": "two_mode", "modes": [a, b], "anchors": anchors,
                                       "tolerance_hz": 100e3})
    assert main(["plan", "--config", good, "--request", req]) == 0
    assert json.loads(capsys.readouterr().out)["collisions"]["passed"] is True
    req2 = _write(tmp_path / "r2.json", {"kind": "two_mode", "modes": [0, 1], "anchors": anchors,
                                         "tolerance_hz": 100e3})
    assert main(["plan", "--config", bad, "--request", req2]) == 3
    assert json.loads(capsys.readouterr().out)["collisions"]["collisions"]


def test_missing_file_is_validation_error(capsys):
    assert main(["plan", "--config", "/nonexistent/dev.json", "--request", "/nonexistent/r.json"]) == 2
    assert main(["simulate", "--input", "/nonexistent/c.json"]) == 2


def test_simulate_circuit(tmp_path, capsys):
    circ = _write(tmp_path / "c.json", {
        "n_modes": 2, "truncation": 3,
        "initial": {"terms": [{"occupations": [1, 0], "amplitude": [1, 0]}]},
        "gates": [{"kind": "beamsplitter", "targets": [0, 1], "theta": 0.7853981633974483,
                   "phi": 1.5707963267948966}],
    })
    assert main(["simulate", "--input", circ]) == 0
    terms = {tuple(t["occupations"]): t["amplitude"] for t in json.loads(capsys.readouterr().out)["terms"]}
    assert terms[(1, 0)][0] == pytest.approx(2 ** -0.5)
    assert terms[(0, 1)][0] == pytest.approx(2 ** -0.5)


def test_simulate_truncation_overflow_is_validation_error(tmp_path):
    circ = _write(tmp_path / "c.json", {
        "n_modes": 2, "truncation": 2,
        "initial": {"terms": [{"occupations": [1, 1], "amplitude": [1, 0]}]},
        "gates": [{"kind": "beamsplitter", "targets": [0, 1], "theta": 0.3}],
    })
    assert main(["simulate", "--input", circ]) == 2


def test_qram_run_ideal(capsys):
    assert main(["qram", "run", "--depth", "2", "--db", "0110", "--address", "10"]) == 0
    res = json.loads(capsys.readouterr().out)
    assert res["disentangled"] and res["max_occupation"] == 1
    bus = res["modes"]["bus"]
    assert all(t["occupations"][bus] == 1 for t in res["state"]["terms"])


def test_qram_run_bad_db_length():
    assert main(["qram", "run", "--depth", "2", "--db", "011", "--address", "10"]) == 2


def test_couple_two_mode(devices, tmp_path, capsys):
    good, _, (a, b) = devices
    drives = _write(tmp_path / "d.json", [{"omega_hz": 6e9, "amplitude_hz": 0.1e9, "label": "1"},
                                          {"omega_hz": 6.02e9, "amplitude_hz": 0.1e9, "label": "2"}])
    assert main(["couple", "--config", good, "--drives", drives, "--modes", str(a), str(b)]) == 0
    assert capsys.readouterr().out.strip().startswith("{")
