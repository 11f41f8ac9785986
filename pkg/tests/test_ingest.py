import copy
import json
import math

import pytest

from ibrfault.devices import DEFAULT_FRT
from ibrfault.engine import DEFAULT_FAULT_PHASES
from ibrfault.ingest import (
    IoError,
    KindPhaseMismatch,
    SchemaError,
    UnresolvedReference,
    ValidationError,
    feeder_distances,
    load_network,
    load_scenario,
    network_from_dict,
    network_to_dict,
    place_rooftops,
    reference_network_path,
    save_network,
    scenario_from_dict,
    validate_cross,
)

import netbuild


@pytest.fixture
def doc():
    net = netbuild.two_bus(loads=netbuild.impedance_load("r", 2 + 1j),
                           ibrs=[netbuild.rooftop("pv1", "r", "a"), netbuild.rooftop("pv2", "r", "b")])
    return network_to_dict(net)


def _scenario_doc(**fault):
    f = {"kind": "SL2G", "bus": "3", "phases": ["a"]}
    f.update(fault)
    return {"schema_version": "1", "network_path": "ieee123_td.json", "fault": f, "plr": 0.5}


# --------------------------------------------------------------------------
# reference data

def test_reference_network_inventory(ref_net):
    trans = [b for b in ref_net.buses if b.zone == "transmission"]
    assert len(trans) == 6
    assert len(ref_net.sources) == 1
    single = [i for i in ref_net.ibrs if not i.three_phase]
    three = [i for i in ref_net.ibrs if i.three_phase]
    assert len(single) == 86 and len(three) == 3
    assert sum(i.s_rated_kva for i in single) == pytest.approx(4500.0)
    assert single[0].s_rated_kva == pytest.approx(52.33, abs=0.01)
    assert {i.id: i.s_rated_kva for i in three} == {"pv_farm": 3000.0, "bess_149": 3000.0, "bess_108": 550.0}
    assert ref_net.fault_locations == {"GTF": "1", "PCC": "3", "SHORT": "4", "MEDIUM": "5", "FAR": "6"}


def test_reference_network_load_and_charging(ref_net):
    assert sum(l.s_nominal_kva.real for l in ref_net.loads) == pytest.approx(1300.0)
    charge = {i.id: i.p_set_kw for i in ref_net.ibrs if i.kind == "bess"}
    assert charge == {"bess_149": -300.0, "bess_108": -100.0}


def test_rooftops_spread_evenly_over_phases(ref_net):
    counts = {p: sum(1 for i in ref_net.ibrs if i.phases == (p,)) for p in "abc"}
    assert counts == {"a": 29, "b": 29, "c": 28}
    assert len({i.bus for i in ref_net.ibrs if not i.three_phase}) > 40


def test_placement_is_seed_deterministic(ref_net):
    a = place_rooftops(ref_net, seed=5)
    b = place_rooftops(ref_net, seed=5)
    c = place_rooftops(ref_net, seed=6)
    assert a.ibrs == b.ibrs
    assert [i.bus for i in a.ibrs] != [i.bus for i in c.ibrs]
    assert sum(1 for i in a.ibrs if i.kind == "rooftop_pv") == 86


def test_feeder_distances_start_at_head(ref_net):
    d = feeder_distances(ref_net)
    assert d[ref_net.feeder_head] == 0.0
    assert all(v >= 0 for v in d.values())
    feeder = [d[b.id] for b in ref_net.buses if b.zone == "distribution"]
    assert len(feeder) == len(ref_net.buses) - 6
    assert 1.0 < max(feeder) < 5.0


# --------------------------------------------------------------------------
# network diagnostics

def test_round_trip_preserves_model(doc, tmp_path):
    net = network_from_dict(doc)
    path = tmp_path / "net.json"
    save_network(net, path)
    again = load_network(path)
    assert again == net
    assert network_to_dict(again) == doc


def test_reference_round_trip(ref_net, tmp_path):
    save_network(ref_net, tmp_path / "r.json")
    assert load_network(tmp_path / "r.json") == ref_net


def test_empty_bus_list_gives_single_error(doc):
    doc["buses"] = []
    with pytest.raises(SchemaError) as info:
        network_from_dict(doc)
    errs = [d for d in info.value.diagnostics if d.severity == "error"]
    assert len(errs) == 1 and errs[0].path == "buses"


def test_dangling_inverter_bus_is_named(doc):
    doc["ibrs"][1]["bus"] = "999"
    with pytest.raises(UnresolvedReference) as info:
        network_from_dict(doc)
    assert [d.path for d in info.value.diagnostics] == ["ibrs[1].bus"]
    assert "999" in str(info.value)


def test_every_error_is_reported(doc):
    doc["lines"][0]["length_km"] = -1
    doc["loads"][0]["zip"] = [0.5, 0.5, 0.5]
    doc["ibrs"][0]["phases"] = ["a", "b"]
    doc["ibrs"].append(copy.deepcopy(doc["ibrs"][1]))
    with pytest.raises(ValidationError) as info:
        network_from_dict(doc)
    paths = {d.path for d in info.value.diagnostics}
    assert {"lines[0].length_km", "loads[0].zip", "ibrs[0].phases", "ibrs[2].id"} <= paths


def test_schema_errors_are_located(doc):
    doc["ibrs"][0]["s_rated_kva"] = "big"
    doc["buses"][0]["colour"] = "red"
    with pytest.raises(SchemaError) as info:
        network_from_dict(doc)
    paths = [d.path for d in info.value.diagnostics]
    assert "ibrs[0].s_rated_kva" in paths
    assert any(p.startswith("buses[0]") for p in paths)


def test_non_finite_numbers_rejected(doc):
    doc["lines"][0]["length_km"] = math.inf
    with pytest.raises(SchemaError) as info:
        network_from_dict(doc)
    assert info.value.diagnostics[0].path == "lines[0].length_km"


def test_unknown_phase_on_bus(doc):
    doc["buses"][1]["phases"] = ["a", "c"]
    doc["lines"][0]["phases"] = ["a", "c"]
    with pytest.raises(UnresolvedReference) as info:
        network_from_dict(doc)
    assert {d.path for d in info.value.diagnostics} >= {"ibrs[1].bus", "loads[1].bus"}


def test_disconnected_bus(doc):
    doc["buses"].append({"id": "lonely", "base_kv_ll": 4.16})
    with pytest.raises(ValidationError, match="lonely"):
        network_from_dict(doc)


def _curve_doc():
    def zones(z):
        return [[lo, None if math.isinf(hi) else hi, dur] for lo, hi, dur in z]

    c = DEFAULT_FRT
    return {
        "under_voltage": zones(c.under_voltage_zones),
        "over_voltage": zones(c.over_voltage_zones),
        "under_frequency": zones(c.under_frequency_zones),
        "over_frequency": zones(c.over_frequency_zones),
        "continuous": dict(zip(("v_min_pu", "v_max_pu", "f_min_hz", "f_max_hz"), c.continuous_region)),
    }


def test_custom_curve_is_loaded(doc):
    doc["frt_curves"] = {"strict": _curve_doc()}
    doc["frt_curves"]["strict"]["under_voltage"][0][2] = 0.05
    doc["ibrs"][0]["frt_curve"] = "strict"
    net = network_from_dict(doc)
    assert net.frt_curves["strict"].under_voltage_zones[0] == (0.0, 0.5, 0.05)
    assert net.frt_curves["strict"].over_voltage_zones[-1][1] == math.inf


def test_curve_with_gap_is_rejected(doc):
    doc["frt_curves"] = {"gappy": _curve_doc()}
    doc["frt_curves"]["gappy"]["under_voltage"][1][0] = 0.55
    with pytest.raises(ValidationError) as info:
        network_from_dict(doc)
    assert info.value.diagnostics[0].path == "frt_curves.gappy.under_voltage"


def test_unknown_curve_reference(doc):
    doc["ibrs"][0]["frt_curve"] = "nope"
    with pytest.raises(UnresolvedReference):
        network_from_dict(doc)


def test_missing_file_is_io_error(tmp_path):
    with pytest.raises(IoError) as info:
        load_network(tmp_path / "absent.json")
    assert info.value.diagnostics[0].code == "io"


def test_bad_json_is_schema_error(tmp_path):
    p = tmp_path / "bad.json"
    p.write_text("{ not json")
    with pytest.raises(SchemaError, match="invalid JSON"):
        load_network(p)


# --------------------------------------------------------------------------
# scenarios

def test_scenario_example(ref_net):
    sc = scenario_from_dict(_scenario_doc(duration_s=0.25), network=ref_net)
    assert sc.fault.kind == "SL2G" and sc.fault.bus == "3" and sc.fault.phases == ("a",)
    assert sc.plr == 0.5 and sc.fault.duration_s == 0.25


def test_duration_defaults_to_fifteen_cycles(ref_net):
    sc = scenario_from_dict(_scenario_doc(), network=ref_net)
    assert sc.fault.duration_s == pytest.approx(15 / 60)
    assert sc.fault.t_on_s == sc.engine.t_pre_s
    assert sc.engine.dt_s == pytest.approx(1 / 60)


def test_location_names_resolve_to_buses(ref_net):
    sc = scenario_from_dict(_scenario_doc(bus="FAR"), network=ref_net)
    assert sc.fault.bus == "6"


@pytest.mark.parametrize("kind", sorted(DEFAULT_FAULT_PHASES))
def test_default_phases_per_kind(ref_net, kind):
    d = _scenario_doc(kind=kind)
    del d["fault"]["phases"]
    assert scenario_from_dict(d, network=ref_net).fault.phases == DEFAULT_FAULT_PHASES[kind]


def test_line_to_line_needs_two_phases(ref_net):
    with pytest.raises(KindPhaseMismatch):
        scenario_from_dict(_scenario_doc(kind="L2L", phases=["a"]), network=ref_net)


def test_scenario_value_errors_are_collected(ref_net):
    d = _scenario_doc(duration_s=0)
    d["plr"] = -1
    d["engine"] = {"dt_s": 0}
    with pytest.raises(ValidationError) as info:
        scenario_from_dict(d, network=ref_net)
    assert {x.path for x in info.value.diagnostics} == {"plr", "fault.duration_s", "engine.dt_s"}


def test_scenario_unknown_fault_bus(ref_net):
    with pytest.raises(UnresolvedReference) as info:
        scenario_from_dict(_scenario_doc(bus="nowhere"), network=ref_net)
    assert info.value.diagnostics[0].path == "fault.bus"


def test_scenario_file_resolves_shipped_network(tmp_path):
    p = tmp_path / "sc.json"
    p.write_text(json.dumps(_scenario_doc()))
    sc = load_scenario(p)
    assert len(sc.network.ibrs) == 89
    assert sc.network_path == str(reference_network_path())


def test_inverter_overrides(ref_net):
    d = _scenario_doc()
    d["ibr_overrides"] = [{"id": "pv001", "i_limit_pu": 1.5}]
    sc = scenario_from_dict(d, network=ref_net)
    assert next(i for i in sc.network.ibrs if i.id == "pv001").i_limit_pu == 1.5
    d["ibr_overrides"] = [{"id": "ghost", "i_limit_pu": 1.5}]
    with pytest.raises(UnresolvedReference):
        scenario_from_dict(d, network=ref_net)


def test_cross_validation_quiet_for_valid_fault(ref_net):
    sc = scenario_from_dict(_scenario_doc(), network=ref_net)
    assert validate_cross(ref_net, sc) == []


def test_capacity_warning_only_when_exceeded(ref_net):
    from dataclasses import replace

    sc = scenario_from_dict(_scenario_doc(), network=ref_net)
    assert validate_cross(ref_net, replace(sc, plr=3.0)) == []  # 5.1 MW <= 7.5 MW
    diags = validate_cross(ref_net, replace(sc, plr=10.0))  # 17 MW > 7.5 MW
    assert len(diags) == 1 and diags[0].severity == "warning"
    assert "required PV output exceeds installed capacity" in diags[0].message


def test_missing_phase_at_fault_bus(ref_net):
    from dataclasses import replace

    single = next(b for b in ref_net.buses if b.phases == ("b",))
    sc = scenario_from_dict(_scenario_doc(), network=ref_net)
    bad = replace(sc, fault=replace(sc.fault, bus=single.id))
    assert [d.path for d in validate_cross(ref_net, bad)] == ["fault.phases"]
