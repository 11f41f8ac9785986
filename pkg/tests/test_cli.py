import csv
import json
import math

import pytest

from ibrfault import report
from ibrfault.cli import main, parse_plrs
from ibrfault.ingest import reference_network_path

SAMPLE = reference_network_path("sl2g_pcc.json")
SMALL = str(reference_network_path("feeder13_td.json"))
FIVE = {"trips.csv", "vuf.csv", "profile.csv", "summary.json", "manifest.json"}


def _scenario(tmp_path, **changes):
    doc = json.loads(SAMPLE.read_text())
    doc["network_path"] = str(reference_network_path("ieee123_td.json"))
    for key, value in changes.items():
        doc[key] = value
    p = tmp_path / "sc.json"
    p.write_text(json.dumps(doc))
    return str(p)


def _rows(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def test_simulate_writes_five_files(tmp_path, capsys):
    out = tmp_path / "out"
    assert main(["simulate", "--scenario", str(SAMPLE), "--out", str(out)]) == 0
    assert {p.name for p in out.iterdir()} == FIVE
    trips = _rows(out / "trips.csv")
    assert [r["category"] for r in trips] == ["three_phase", "phase_a", "phase_b", "phase_c"]
    assert [r["pct"] for r in trips] == ["100", "100", "0", "0"]
    summary = json.loads((out / "summary.json").read_text())
    assert summary["converged"] is True and summary["nonconverged_steps_s"] == []
    assert summary["scenario"]["fault"]["kind"] == "SL2G"
    assert len(summary["trips"]) == 32 and summary["trips"][0]["cause"].startswith("under_voltage")
    manifest = json.loads((out / "manifest.json").read_text())
    assert set(manifest["outputs"]) == FIVE - {"manifest.json"}
    assert len(manifest["inputs"]) == 2
    prof = _rows(out / "profile.csv")
    assert sorted({r["time_s"] for r in prof}, key=float) == ["0", "0.633333", "1.75"]
    assert "SL2G_PCC_50%" in capsys.readouterr().out


def test_simulate_with_plots(tmp_path):
    out = tmp_path / "out"
    assert main(["simulate", "--scenario", str(SAMPLE), "--network", SMALL, "--out", str(out), "--plots"]) == 0
    for name in ("profile.png", "vuf.png"):
        data = (out / name).read_bytes()
        assert data[:8] == b"\x89PNG\r\n\x1a\n"
    assert "profile.png" in json.loads((out / "manifest.json").read_text())["outputs"]


def test_malformed_scenario_lists_every_error(tmp_path, capsys):
    p = tmp_path / "bad.json"
    p.write_text(json.dumps({"schema_version": "1", "network_path": "ieee123_td.json",
                             "fault": {"kind": "XL", "bus": 3}, "plr": "lots"}))
    out = tmp_path / "out"
    assert main(["simulate", "--scenario", str(p), "--out", str(out)]) == 1
    assert not out.exists()
    err = capsys.readouterr().err
    assert "fault.kind" in err and "fault.bus" in err and "plr" in err


def test_nonconvergent_run_exits_two(tmp_path, capsys):
    sc = _scenario(tmp_path, solver={"tol_pu": 1e-15, "max_iter": 1, "relaxation": 1.0})
    out = tmp_path / "out"
    assert main(["simulate", "--scenario", sc, "--network", SMALL, "--out", str(out)]) == 2
    summary = json.loads((out / "summary.json").read_text())
    assert summary["converged"] is False
    assert summary["nonconverged_steps_s"]
    assert any(not s["converged"] for s in summary["convergence_log"])
    assert FIVE <= {p.name for p in out.iterdir()}
    assert "did not converge" in capsys.readouterr().err


def test_off_grid_dt_flag(tmp_path):
    out = tmp_path / "out"
    assert main(["simulate", "--scenario", str(SAMPLE), "--network", SMALL, "--out", str(out),
                 "--dt", "0.01", "--profile-times", "0,0.6"]) == 0
    summary = json.loads((out / "summary.json").read_text())
    assert summary["scenario"]["engine"]["dt_s"] == 0.01
    assert summary["scenario"]["profile_times_s"] == [0.0, 0.6]
    assert main(["simulate", "--scenario", str(SAMPLE), "--out", str(out), "--dt", "-1"]) == 1


def test_seed_replaces_rooftops(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    assert main(["simulate", "--scenario", str(SAMPLE), "--out", str(a), "--seed", "1"]) == 0
    assert main(["simulate", "--scenario", str(SAMPLE), "--out", str(b), "--seed", "1"]) == 0
    assert (a / "trips.csv").read_bytes() == (b / "trips.csv").read_bytes()
    assert (a / "profile.csv").read_bytes() == (b / "profile.csv").read_bytes()


def test_single_cell_sweep_equals_simulate(tmp_path):
    sim, sw = tmp_path / "sim", tmp_path / "sw"
    assert main(["simulate", "--scenario", str(SAMPLE), "--out", str(sim)]) == 0
    assert main(["sweep", "--scenario", str(SAMPLE), "--kinds", "SL2G", "--locations", "PCC",
                 "--plrs", "0.5", "--out", str(sw)]) == 0
    cell = sw / "SL2G_PCC_50pct"
    for name in ("trips.csv", "vuf.csv", "profile.csv"):
        assert (cell / name).read_bytes() == (sim / name).read_bytes()
    table = _rows(sw / "trip_table.csv")
    assert len(table) == 4 and {r["status"] for r in table} == {"ok"}


def test_sweep_table_layout(tmp_path):
    out = tmp_path / "sw"
    rc = main(["sweep", "--scenario", str(SAMPLE), "--network", SMALL, "--kinds", "L2L,3L2G",
               "--locations", "MEDIUM,FAR", "--plrs", "50%,50%vr", "--out", str(out), "--plots"])
    assert rc == 0
    rows = _rows(out / "trip_table.csv")
    assert len(rows) == 2 * 2 * 2 * 4
    assert list(rows[0]) == report.TABLE_COLUMNS
    assert rows[0]["fault_kind"] == "L2L" and rows[0]["location"] == "MEDIUM" and rows[0]["fault_bus"] == "5"
    assert {r["vr"] for r in rows} == {"true", "false"}
    assert (out / "trip_table.png").exists()
    assert (out / "L2L_FAR_50pctVR" / "summary.json").exists()


def test_sweep_rejects_unknown_kind_and_location(tmp_path, capsys):
    assert main(["sweep", "--scenario", str(SAMPLE), "--kinds", "XYZ", "--out", str(tmp_path)]) == 1
    assert main(["sweep", "--scenario", str(SAMPLE), "--locations", "ATLANTIS", "--out", str(tmp_path)]) == 1
    assert main(["sweep", "--scenario", str(SAMPLE), "--plrs", "lots", "--out", str(tmp_path)]) == 1
    err = capsys.readouterr().err
    assert "XYZ" in err and "ATLANTIS" in err


def test_parse_plrs():
    assert parse_plrs("0.5,0.5vr,1.0,3.0") == [(0.5, False), (0.5, True), (1.0, False), (3.0, False)]
    assert parse_plrs("300%", vr_default=True) == [(3.0, True)]


# --------------------------------------------------------------------------
# validate

def test_validate_reference(capsys):
    assert main(["validate", "--network", str(reference_network_path())]) == 0
    assert "ok" in capsys.readouterr().out


def test_validate_dangling_reference(tmp_path, capsys):
    doc = json.loads(reference_network_path().read_text())
    doc["ibrs"][4]["bus"] = "999"
    p = tmp_path / "net.json"
    p.write_text(json.dumps(doc))
    assert main(["validate", str(p)]) == 1
    lines = [ln for ln in capsys.readouterr().err.splitlines() if ln.strip()]
    assert len(lines) == 1 and "ibrs[4].bus" in lines[0]


def test_validate_missing_file(tmp_path, capsys):
    assert main(["validate", "--network", str(tmp_path / "nope.json")]) == 1
    assert "cannot read" in capsys.readouterr().err


# --------------------------------------------------------------------------
# formatting

@pytest.mark.parametrize("value,text", [
    (True, "true"), (False, "false"), (3, "3"), (0.1 + 0.2, "0.3"), (math.nan, "NA"),
    (-0.0, "0"), (1234567.0, "1.23457e+06"), ("x", "x"),
])
def test_fmt(value, text):
    assert report.fmt(value) == text


def test_outputs_do_not_depend_on_directory(tmp_path):
    a, b = tmp_path / "a", tmp_path / "deeper" / "b"
    for out in (a, b):
        assert main(["simulate", "--scenario", str(SAMPLE), "--network", SMALL, "--out", str(out)]) == 0
    for name in ("trips.csv", "vuf.csv", "profile.csv"):
        assert (a / name).read_bytes() == (b / name).read_bytes()
