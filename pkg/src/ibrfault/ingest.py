"""Network and scenario file loading with located diagnostics.

Both files are UTF-8 JSON with a top-level ``schema_version`` of ``"1"``.
Structural checks run through JSON Schema; everything that needs more than
one field (references, electrical invariants, FRT envelope shape) is checked
by hand afterwards. Every problem found is reported, not just the first.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, replace
from pathlib import Path

import jsonschema
import numpy as np

from .devices import DEFAULT_FRT, FrtCurve, Ibr, Regulator, ShuntCapacitor, ZipLoad, phase_list
from .engine import (
    DEFAULT_FAULT_PHASES,
    EngineSettings,
    Scenario,
    effective_load_kw,
    pv_capacity_kw,
    resolve_location,
)
from .netmodel import (
    FAULT_PHASE_COUNT,
    PHASES,
    Bus,
    FaultSpec,
    LineBranch,
    NetworkModel,
    SourceEquivalent,
    TransformerBranch,
)
from .solver import SolveSettings

SCHEMA_VERSION = "1"
DATA_DIR = Path(__file__).parent / "data"


@dataclass(frozen=True)
class ParseDiagnostic:
    severity: str  # "error" | "warning"
    path: str
    message: str
    code: str = "validation"

    def __str__(self) -> str:
        return f"{self.severity}: {self.path}: {self.message}"


class IngestError(Exception):
    """Raised with the complete list of diagnostics for a rejected file."""

    def __init__(self, diagnostics: list[ParseDiagnostic], source: str = ""):
        self.diagnostics = list(diagnostics)
        self.source = source
        errors = [d for d in self.diagnostics if d.severity == "error"]
        head = "; ".join(str(d) for d in errors[:3])
        more = f" (+{len(errors) - 3} more)" if len(errors) > 3 else ""
        super().__init__(f"{source}: {head}{more}" if source else head + more)


class IoError(IngestError):
    pass


class SchemaError(IngestError):
    pass


class UnresolvedReference(IngestError):
    pass


class ValidationError(IngestError):
    pass


class KindPhaseMismatch(IngestError):
    pass


_ERROR_CLASSES = {
    "io": IoError,
    "schema": SchemaError,
    "reference": UnresolvedReference,
    "kind_phase": KindPhaseMismatch,
    "validation": ValidationError,
}


def _raise(diags: list[ParseDiagnostic], source: str) -> None:
    errors = [d for d in diags if d.severity == "error"]
    if errors:
        raise _ERROR_CLASSES[errors[0].code](diags, source)


# --------------------------------------------------------------------------
# schemas

_NUM = {"type": "number"}
_COMPLEX = {"type": "array", "items": _NUM, "minItems": 2, "maxItems": 2}
_PHASES = {
    "type": "array",
    "items": {"enum": list(PHASES)},
    "minItems": 1,
    "maxItems": 3,
    "uniqueItems": True,
}
_ZONES = {
    "type": "array",
    "items": {"type": "array", "prefixItems": [_NUM, {"type": ["number", "null"]}, _NUM],
              "minItems": 3, "maxItems": 3},
}


def _obj(required, props):
    return {"type": "object", "required": required, "properties": props, "additionalProperties": False}


NETWORK_SCHEMA = _obj(
    ["schema_version", "buses", "lines", "sources"],
    {
        "schema_version": {"const": SCHEMA_VERSION},
        "name": {"type": "string"},
        "s_base_mva": _NUM,
        "f_nominal_hz": _NUM,
        "feeder_head": {"type": "string"},
        "fault_locations": {"type": "object", "additionalProperties": {"type": "string"}},
        "buses": {"type": "array", "minItems": 1, "items": _obj(
            ["id", "base_kv_ll"],
            {"id": {"type": "string"}, "base_kv_ll": _NUM, "phases": _PHASES,
             "zone": {"enum": ["transmission", "distribution"]}})},
        "lines": {"type": "array", "items": _obj(
            ["from", "to", "length_km", "z1_ohm_per_km", "z0_ohm_per_km"],
            {"name": {"type": "string"}, "from": {"type": "string"}, "to": {"type": "string"},
             "length_km": _NUM, "z1_ohm_per_km": _COMPLEX, "z0_ohm_per_km": _COMPLEX,
             "phases": _PHASES})},
        "transformers": {"type": "array", "items": _obj(
            ["from", "to", "connection", "s_rated_mva", "z_leak_pu"],
            {"name": {"type": "string"}, "from": {"type": "string"}, "to": {"type": "string"},
             "connection": {"enum": ["delta_yg_lag30", "yg_yg"]}, "s_rated_mva": _NUM,
             "z_leak_pu": _COMPLEX, "grounded": {"type": "boolean"}, "z_ground_pu": _COMPLEX})},
        "sources": {"type": "array", "items": _obj(
            ["bus", "z_internal_pu"],
            {"bus": {"type": "string"}, "v_set_pu": _NUM, "angle_deg": _NUM,
             "z_internal_pu": _COMPLEX})},
        "loads": {"type": "array", "items": _obj(
            ["bus", "phase", "p_kw", "q_kvar"],
            {"name": {"type": "string"}, "bus": {"type": "string"}, "phase": {"enum": list(PHASES)},
             "p_kw": _NUM, "q_kvar": _NUM,
             "zip": {"type": "array", "items": _NUM, "minItems": 3, "maxItems": 3},
             "v_nominal_pu": _NUM})},
        "capacitors": {"type": "array", "items": _obj(
            ["bus", "phases", "q_kvar_per_phase"],
            {"name": {"type": "string"}, "bus": {"type": "string"}, "phases": _PHASES,
             "q_kvar_per_phase": _NUM, "enabled": {"type": "boolean"}})},
        "regulators": {"type": "array", "items": _obj(
            ["name", "from", "to", "phases"],
            {"name": {"type": "string"}, "from": {"type": "string"}, "to": {"type": "string"},
             "phases": _PHASES, "step_pu": _NUM, "tap_range": {"type": "integer"},
             "band_center_pu": _NUM, "band_width_pu": _NUM,
             "taps": {"type": "array", "items": {"type": "integer"}}, "z_pu": _COMPLEX})},
        "ibrs": {"type": "array", "items": _obj(
            ["id", "bus", "phases", "kind", "s_rated_kva", "p_set_kw"],
            {"id": {"type": "string"}, "bus": {"type": "string"}, "phases": _PHASES,
             "kind": {"enum": ["pv_farm", "bess", "rooftop_pv"]}, "s_rated_kva": _NUM,
             "p_set_kw": _NUM, "q_set_kvar": _NUM, "i_limit_pu": _NUM,
             "frt_curve": {"type": "string"}})},
        "frt_curves": {"type": "object", "additionalProperties": _obj(
            ["under_voltage", "over_voltage", "under_frequency", "over_frequency", "continuous"],
            {"under_voltage": _ZONES, "over_voltage": _ZONES, "under_frequency": _ZONES,
             "over_frequency": _ZONES,
             "continuous": _obj(["v_min_pu", "v_max_pu", "f_min_hz", "f_max_hz"],
                                {"v_min_pu": _NUM, "v_max_pu": _NUM, "f_min_hz": _NUM,
                                 "f_max_hz": _NUM})})},
    },
)

SCENARIO_SCHEMA = _obj(
    ["schema_version", "network_path", "fault"],
    {
        "schema_version": {"const": SCHEMA_VERSION},
        "label": {"type": "string"},
        "network_path": {"type": "string"},
        "fault": _obj(
            ["kind", "bus"],
            {"kind": {"enum": list(FAULT_PHASE_COUNT)}, "bus": {"type": "string"},
             "phases": {"type": "array", "items": {"enum": list(PHASES)}, "uniqueItems": True},
             "t_on_s": _NUM, "duration_s": _NUM, "y_fault_pu": _NUM}),
        "plr": _NUM,
        "voltage_regulation": {"type": "boolean"},
        "ibr_overrides": {"type": "array", "items": _obj(
            ["id"],
            {"id": {"type": "string"}, "i_limit_pu": _NUM, "frt_curve": {"type": "string"},
             "q_set_kvar": _NUM, "p_set_kw": _NUM})},
        "solver": _obj([], {"tol_pu": _NUM, "max_iter": {"type": "integer"}, "relaxation": _NUM}),
        "engine": _obj([], {"dt_s": _NUM, "t_pre_s": _NUM, "t_end_s": _NUM,
                            "frequency_trace": {"type": "array", "items": {
                                "type": "array", "items": _NUM, "minItems": 2, "maxItems": 2}}}),
        "outputs": _obj([], {"directory": {"type": "string"},
                             "profile_snapshot_times_s": {"type": "array", "items": _NUM}}),
    },
)


def _json_path(parts) -> str:
    out = ""
    for p in parts:
        out += f"[{p}]" if isinstance(p, int) else (f".{p}" if out else str(p))
    return out or "$"


def _schema_diagnostics(doc, schema) -> list[ParseDiagnostic]:
    validator = jsonschema.Draft202012Validator(schema)
    diags = []
    for err in sorted(validator.iter_errors(doc), key=lambda e: list(map(str, e.absolute_path))):
        path = list(err.absolute_path)
        if err.validator == "additionalProperties" and isinstance(err.instance, dict):
            extra = sorted(set(err.instance) - set(err.schema.get("properties", {})))
            for key in extra:
                diags.append(ParseDiagnostic("error", _json_path(path + [key]), "unknown field", "schema"))
            continue
        if err.validator == "required":
            missing = err.message.split("'")[1] if "'" in err.message else err.message
            diags.append(ParseDiagnostic("error", _json_path(path + [missing]), "missing required field", "schema"))
            continue
        diags.append(ParseDiagnostic("error", _json_path(path), err.message, "schema"))
    return diags


def _nonfinite(doc, path=()) -> list[ParseDiagnostic]:
    out = []
    if isinstance(doc, float) and not math.isfinite(doc):
        out.append(ParseDiagnostic("error", _json_path(list(path)), "number must be finite", "schema"))
    elif isinstance(doc, dict):
        for k, v in doc.items():
            out += _nonfinite(v, path + (k,))
    elif isinstance(doc, list):
        for i, v in enumerate(doc):
            out += _nonfinite(v, path + (i,))
    return out


def _read_json(path) -> dict:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise IoError([ParseDiagnostic("error", "$", f"cannot read {path}: {exc.strerror or exc}", "io")],
                      str(path)) from None
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise SchemaError([ParseDiagnostic("error", f"line {exc.lineno} col {exc.colno}",
                                           f"invalid JSON: {exc.msg}", "schema")], str(path)) from None


def _cx(pair) -> complex:
    return complex(pair[0], pair[1])


def _zone_tuple(zones):
    return tuple((float(lo), math.inf if hi is None else float(hi), float(d)) for lo, hi, d in zones)


# --------------------------------------------------------------------------
# network

def load_network(path) -> NetworkModel:
    """Parse and validate a network file; raises :class:`IngestError` subclasses."""
    doc = _read_json(path)
    return network_from_dict(doc, source=str(path))


def network_from_dict(doc: dict, source: str = "") -> NetworkModel:
    diags = _schema_diagnostics(doc, NETWORK_SCHEMA) + _nonfinite(doc)
    _raise(diags, source)
    diags = _check_network_doc(doc)
    _raise(diags, source)
    return _build_network(doc)


def _check_network_doc(doc) -> list[ParseDiagnostic]:
    d: list[ParseDiagnostic] = []

    def err(path, msg, code="validation"):
        d.append(ParseDiagnostic("error", path, msg, code))

    buses = {}
    for i, b in enumerate(doc["buses"]):
        if b["id"] in buses:
            err(f"buses[{i}].id", f"duplicate bus id {b['id']!r}")
        buses[b["id"]] = set(b.get("phases", PHASES))
        if not b["base_kv_ll"] > 0:
            err(f"buses[{i}].base_kv_ll", "must be > 0")
    kv = {b["id"]: b["base_kv_ll"] for b in doc["buses"]}

    def ref(path, bus, phases=()):
        if bus not in buses:
            err(path, f"unknown bus {bus!r}", "reference")
            return False
        missing = [p for p in phases if p not in buses[bus]]
        if missing:
            err(path, f"bus {bus!r} has no phase(s) {''.join(missing)}", "reference")
            return False
        return True

    for i, ln in enumerate(doc["lines"]):
        ph = ln.get("phases", PHASES)
        ok = ref(f"lines[{i}].from", ln["from"], ph) & ref(f"lines[{i}].to", ln["to"], ph)
        if not ln["length_km"] > 0:
            err(f"lines[{i}].length_km", "must be > 0")
        for key in ("z1_ohm_per_km", "z0_ohm_per_km"):
            if ln[key][0] < 0:
                err(f"lines[{i}].{key}", "resistance must be >= 0")
        if ok and not math.isclose(kv[ln["from"]], kv[ln["to"]]):
            err(f"lines[{i}]", "line ends have different base voltages")
    for i, tr in enumerate(doc.get("transformers", [])):
        ref(f"transformers[{i}].from", tr["from"], PHASES)
        ref(f"transformers[{i}].to", tr["to"], PHASES)
        if not tr["s_rated_mva"] > 0:
            err(f"transformers[{i}].s_rated_mva", "must be > 0")
        if abs(_cx(tr["z_leak_pu"])) == 0:
            err(f"transformers[{i}].z_leak_pu", "must be nonzero")
    if len(doc["sources"]) != 1:
        err("sources", f"exactly one source required, found {len(doc['sources'])}")
    for i, s in enumerate(doc["sources"]):
        ref(f"sources[{i}].bus", s["bus"], PHASES)
        if not s.get("v_set_pu", 1.0) > 0:
            err(f"sources[{i}].v_set_pu", "must be > 0")
        if abs(_cx(s["z_internal_pu"])) == 0:
            err(f"sources[{i}].z_internal_pu", "must be nonzero")
    for i, ld in enumerate(doc.get("loads", [])):
        ref(f"loads[{i}].bus", ld["bus"], ld["phase"])
        z = ld.get("zip", [0.4, 0.3, 0.3])
        if any(c < 0 for c in z):
            err(f"loads[{i}].zip", "coefficients must be >= 0")
        if abs(sum(z) - 1.0) > 1e-9:
            err(f"loads[{i}].zip", f"coefficients sum to {sum(z):.12g}, not 1")
    for i, c in enumerate(doc.get("capacitors", [])):
        ref(f"capacitors[{i}].bus", c["bus"], c["phases"])
        if c["q_kvar_per_phase"] < 0:
            err(f"capacitors[{i}].q_kvar_per_phase", "must be >= 0")
    names = set()
    for i, r in enumerate(doc.get("regulators", [])):
        ref(f"regulators[{i}].from", r["from"], r["phases"])
        ref(f"regulators[{i}].to", r["to"], r["phases"])
        if r["name"] in names:
            err(f"regulators[{i}].name", f"duplicate regulator {r['name']!r}")
        names.add(r["name"])
        taps = r.get("taps", [0] * len(r["phases"]))
        rng = r.get("tap_range", 16)
        if len(taps) != len(r["phases"]):
            err(f"regulators[{i}].taps", "one tap per phase required")
        if any(abs(t) > rng for t in taps):
            err(f"regulators[{i}].taps", f"tap outside +/-{rng}")
    curves = set(doc.get("frt_curves", {})) | {DEFAULT_FRT.name}
    for name, c in doc.get("frt_curves", {}).items():
        d.extend(_check_curve(name, c))
    ids = set()
    for i, ibr in enumerate(doc.get("ibrs", [])):
        if ibr["id"] in ids:
            err(f"ibrs[{i}].id", f"duplicate ibr id {ibr['id']!r}")
        ids.add(ibr["id"])
        ref(f"ibrs[{i}].bus", ibr["bus"], ibr["phases"])
        if len(ibr["phases"]) == 2:
            err(f"ibrs[{i}].phases", "inverters are single-phase or three-phase")
        if not ibr["s_rated_kva"] > 0:
            err(f"ibrs[{i}].s_rated_kva", "must be > 0")
        elif abs(ibr["p_set_kw"]) > ibr["s_rated_kva"] + 1e-9:
            err(f"ibrs[{i}].p_set_kw", "|p_set_kw| exceeds s_rated_kva")
        if ibr.get("i_limit_pu", 2.0) < 1:
            err(f"ibrs[{i}].i_limit_pu", "must be >= 1")
        if ibr.get("frt_curve", DEFAULT_FRT.name) not in curves:
            err(f"ibrs[{i}].frt_curve", f"unknown FRT curve {ibr['frt_curve']!r}", "reference")
    for name, bus in doc.get("fault_locations", {}).items():
        ref(f"fault_locations.{name}", bus)
    if "feeder_head" in doc:
        ref("feeder_head", doc["feeder_head"])
    if not d:
        d.extend(_check_connectivity(doc))
    return d


def _check_curve(name, c) -> list[ParseDiagnostic]:
    d = []
    base = f"frt_curves.{name}"
    cont = c["continuous"]
    if not cont["v_min_pu"] < cont["v_max_pu"] or not cont["f_min_hz"] < cont["f_max_hz"]:
        d.append(ParseDiagnostic("error", f"{base}.continuous", "empty continuous region"))
    checks = (
        ("under_voltage", cont["v_min_pu"], True),
        ("over_voltage", cont["v_max_pu"], False),
        ("under_frequency", cont["f_min_hz"], True),
        ("over_frequency", cont["f_max_hz"], False),
    )
    for key, edge, below in checks:
        zones = _zone_tuple(c[key])
        for i, (lo, hi, dur) in enumerate(zones):
            if not lo < hi:
                d.append(ParseDiagnostic("error", f"{base}.{key}[{i}]", "zone bounds must increase"))
            if dur < 0:
                d.append(ParseDiagnostic("error", f"{base}.{key}[{i}]", "duration must be >= 0"))
        if not zones:
            continue
        ordered = sorted(zones)
        for (lo1, hi1, _), (lo2, _, _) in zip(ordered, ordered[1:]):
            if not math.isclose(hi1, lo2):
                d.append(ParseDiagnostic("error", f"{base}.{key}", "zones overlap or leave a gap"))
                break
        touch = ordered[-1][1] if below else ordered[0][0]
        if not math.isclose(touch, edge):
            d.append(ParseDiagnostic("error", f"{base}.{key}",
                                     "zones are not contiguous with the continuous region"))
    return d


def _check_connectivity(doc) -> list[ParseDiagnostic]:
    adj = {b["id"]: set() for b in doc["buses"]}
    for group in ("lines", "transformers", "regulators"):
        for br in doc.get(group, []):
            adj[br["from"]].add(br["to"])
            adj[br["to"]].add(br["from"])
    seen, stack = set(), [s["bus"] for s in doc["sources"]]
    while stack:
        b = stack.pop()
        if b not in seen:
            seen.add(b)
            stack.extend(adj[b] - seen)
    return [ParseDiagnostic("error", f"buses[{i}]", f"bus {b['id']!r} is not connected to the source")
            for i, b in enumerate(doc["buses"]) if b["id"] not in seen]


def _build_network(doc) -> NetworkModel:
    curves = {}
    for name, c in doc.get("frt_curves", {}).items():
        cont = c["continuous"]
        curves[name] = FrtCurve(
            name=name,
            under_voltage_zones=_zone_tuple(c["under_voltage"]),
            over_voltage_zones=_zone_tuple(c["over_voltage"]),
            under_frequency_zones=_zone_tuple(c["under_frequency"]),
            over_frequency_zones=_zone_tuple(c["over_frequency"]),
            continuous_region=(cont["v_min_pu"], cont["v_max_pu"], cont["f_min_hz"], cont["f_max_hz"]),
        )
    return NetworkModel(
        name=doc.get("name", ""),
        s_base_mva=float(doc.get("s_base_mva", 10.0)),
        f_nominal_hz=float(doc.get("f_nominal_hz", 60.0)),
        feeder_head=doc.get("feeder_head"),
        fault_locations=dict(doc.get("fault_locations", {})),
        buses=tuple(Bus(b["id"], float(b["base_kv_ll"]), phase_list(b.get("phases", PHASES)),
                        b.get("zone", "distribution")) for b in doc["buses"]),
        line_branches=tuple(
            LineBranch(ln["from"], ln["to"], float(ln["length_km"]), _cx(ln["z1_ohm_per_km"]),
                       _cx(ln["z0_ohm_per_km"]), phase_list(ln.get("phases", PHASES)), ln.get("name", ""))
            for ln in doc["lines"]),
        transformer_branches=tuple(
            TransformerBranch(t["from"], t["to"], t["connection"], float(t["s_rated_mva"]),
                              _cx(t["z_leak_pu"]), t.get("grounded", True),
                              _cx(t["z_ground_pu"]) if "z_ground_pu" in t else None, t.get("name", ""))
            for t in doc.get("transformers", [])),
        sources=tuple(SourceEquivalent(s["bus"], float(s.get("v_set_pu", 1.0)),
                                       float(s.get("angle_deg", 0.0)), _cx(s["z_internal_pu"]))
                      for s in doc["sources"]),
        loads=tuple(ZipLoad(l["bus"], l["phase"], complex(l["p_kw"], l["q_kvar"]),
                            tuple(l.get("zip", (0.4, 0.3, 0.3))), float(l.get("v_nominal_pu", 1.0)),
                            l.get("name", ""))
                    for l in doc.get("loads", [])),
        capacitors=tuple(ShuntCapacitor(c["bus"], phase_list(c["phases"]), float(c["q_kvar_per_phase"]),
                                        c.get("enabled", True), c.get("name", ""))
                         for c in doc.get("capacitors", [])),
        regulators=tuple(
            Regulator(r["name"], r["from"], r["to"], phase_list(r["phases"]),
                      float(r.get("step_pu", 0.00625)), int(r.get("tap_range", 16)),
                      float(r.get("band_center_pu", 1.0)), float(r.get("band_width_pu", 0.0333)),
                      tuple(r.get("taps", [0] * len(r["phases"]))),
                      _cx(r.get("z_pu", [1e-4, 1e-3])))
            for r in doc.get("regulators", [])),
        ibrs=tuple(Ibr(i["id"], i["bus"], phase_list(i["phases"]), float(i["s_rated_kva"]),
                       float(i["p_set_kw"]), float(i.get("q_set_kvar", 0.0)),
                       float(i.get("i_limit_pu", 2.0)), i.get("frt_curve", DEFAULT_FRT.name), i["kind"])
                   for i in doc.get("ibrs", [])),
        frt_curves=curves,
    )


def _pair(z: complex) -> list[float]:
    return [float(z.real), float(z.imag)]


def _zones_out(zones):
    return [[lo, None if math.isinf(hi) else hi, dur] for lo, hi, dur in zones]


def network_to_dict(net: NetworkModel) -> dict:
    """Inverse of :func:`network_from_dict`."""
    doc = {
        "schema_version": SCHEMA_VERSION,
        "name": net.name,
        "s_base_mva": net.s_base_mva,
        "f_nominal_hz": net.f_nominal_hz,
    }
    if net.feeder_head is not None:
        doc["feeder_head"] = net.feeder_head
    if net.fault_locations:
        doc["fault_locations"] = dict(net.fault_locations)
    doc["buses"] = [{"id": b.id, "base_kv_ll": b.base_kv_ll, "phases": list(b.phases), "zone": b.zone}
                    for b in net.buses]
    doc["lines"] = [{"name": l.name, "from": l.from_bus, "to": l.to_bus, "length_km": l.length_km,
                     "z1_ohm_per_km": _pair(l.z1_per_km), "z0_ohm_per_km": _pair(l.z0_per_km),
                     "phases": list(l.phases)} for l in net.line_branches]
    doc["transformers"] = []
    for t in net.transformer_branches:
        item = {"name": t.name, "from": t.from_bus, "to": t.to_bus, "connection": t.connection,
                "s_rated_mva": t.s_rated_mva, "z_leak_pu": _pair(t.z_leak_pu), "grounded": t.grounded}
        if t.z_ground_pu is not None:
            item["z_ground_pu"] = _pair(t.z_ground_pu)
        doc["transformers"].append(item)
    doc["sources"] = [{"bus": s.bus, "v_set_pu": s.v_set_pu, "angle_deg": s.angle_deg,
                       "z_internal_pu": _pair(s.z_internal_pu)} for s in net.sources]
    doc["loads"] = [{"name": l.name, "bus": l.bus, "phase": l.phase, "p_kw": l.s_nominal_kva.real,
                     "q_kvar": l.s_nominal_kva.imag, "zip": list(l.coeffs), "v_nominal_pu": l.v_nominal_pu}
                    for l in net.loads]
    doc["capacitors"] = [{"name": c.name, "bus": c.bus, "phases": list(c.phases),
                          "q_kvar_per_phase": c.q_rated_kvar, "enabled": c.enabled} for c in net.capacitors]
    doc["regulators"] = [{"name": r.name, "from": r.from_bus, "to": r.to_bus, "phases": list(r.phases),
                          "step_pu": r.step_pu, "tap_range": r.tap_range,
                          "band_center_pu": r.band_center_pu, "band_width_pu": r.band_width_pu,
                          "taps": list(r.tap_map().values()), "z_pu": _pair(r.z_pu)}
                         for r in net.regulators]
    doc["ibrs"] = [{"id": i.id, "bus": i.bus, "phases": list(i.phases), "kind": i.kind,
                    "s_rated_kva": i.s_rated_kva, "p_set_kw": i.p_set_kw, "q_set_kvar": i.q_set_kvar,
                    "i_limit_pu": i.i_limit_pu, "frt_curve": i.frt_curve} for i in net.ibrs]
    doc["frt_curves"] = {
        name: {
            "under_voltage": _zones_out(c.under_voltage_zones),
            "over_voltage": _zones_out(c.over_voltage_zones),
            "under_frequency": _zones_out(c.under_frequency_zones),
            "over_frequency": _zones_out(c.over_frequency_zones),
            "continuous": dict(zip(("v_min_pu", "v_max_pu", "f_min_hz", "f_max_hz"), c.continuous_region)),
        }
        for name, c in net.frt_curves.items()
    }
    return doc


def save_network(net: NetworkModel, path) -> None:
    Path(path).write_text(json.dumps(network_to_dict(net), indent=1) + "\n", encoding="utf-8")


# --------------------------------------------------------------------------
# scenario

def load_scenario(path, network: NetworkModel | None = None) -> Scenario:
    """Parse a scenario file, loading the network it points to.

    ``network_path`` is resolved relative to the scenario file, falling back to
    the shipped data directory for bare file names.
    """
    doc = _read_json(path)
    return scenario_from_dict(doc, base_dir=Path(path).parent, network=network, source=str(path))


def resolve_network_path(name: str, base_dir) -> Path:
    p = Path(name)
    if not p.is_absolute():
        cand = Path(base_dir) / p
        if cand.exists() or not (DATA_DIR / p).exists():
            return cand
        return DATA_DIR / p
    return p


def scenario_from_dict(doc: dict, base_dir=".", network: NetworkModel | None = None,
                       source: str = "") -> Scenario:
    diags = _schema_diagnostics(doc, SCENARIO_SCHEMA) + _nonfinite(doc)
    _raise(diags, source)
    diags = []
    f = doc["fault"]
    kind = f["kind"]
    phases = tuple(f.get("phases", DEFAULT_FAULT_PHASES[kind]))
    if len(phases) != FAULT_PHASE_COUNT[kind]:
        diags.append(ParseDiagnostic(
            "error", "fault.phases",
            f"{kind} needs {FAULT_PHASE_COUNT[kind]} phase(s), got {len(phases)}", "kind_phase"))
    eng = doc.get("engine", {})
    t_pre = eng.get("t_pre_s", 0.5)
    t_on = f.get("t_on_s", t_pre)
    duration = f.get("duration_s", 0.25)
    y_fault = f.get("y_fault_pu", 1e4)
    dt = eng.get("dt_s", 1.0 / 60.0)
    plr = doc.get("plr", 0.5)
    if plr < 0:
        diags.append(ParseDiagnostic("error", "plr", "must be >= 0"))
    if not duration > 0:
        diags.append(ParseDiagnostic("error", "fault.duration_s", "must be > 0"))
    if y_fault < 0:
        diags.append(ParseDiagnostic("error", "fault.y_fault_pu", "must be >= 0"))
    if not dt > 0:
        diags.append(ParseDiagnostic("error", "engine.dt_s", "must be > 0"))
    if t_on < 0:
        diags.append(ParseDiagnostic("error", "fault.t_on_s", "must be >= 0"))
    t_end = eng.get("t_end_s")
    if t_end is not None and not t_end > t_on + duration:
        diags.append(ParseDiagnostic("error", "engine.t_end_s", "must exceed fault clearing time"))
    sol = doc.get("solver", {})
    if not sol.get("tol_pu", 1e-6) > 0:
        diags.append(ParseDiagnostic("error", "solver.tol_pu", "must be > 0"))
    if sol.get("max_iter", 100) < 1:
        diags.append(ParseDiagnostic("error", "solver.max_iter", "must be >= 1"))
    if not 0 < sol.get("relaxation", 1.0) <= 1:
        diags.append(ParseDiagnostic("error", "solver.relaxation", "must be in (0, 1]"))
    _raise(diags, source)

    net_path = resolve_network_path(doc["network_path"], base_dir)
    if network is None:
        network = load_network(net_path)
    overrides = doc.get("ibr_overrides", [])
    if overrides:
        network = _apply_overrides(network, overrides, source)
    fault = FaultSpec(kind=kind, bus=resolve_location(network, f["bus"]), phases=phases,
                      t_on_s=float(t_on), duration_s=float(duration), y_fault_pu=float(y_fault))
    outputs = doc.get("outputs", {})
    sc = Scenario(
        network=network,
        fault=fault,
        plr=float(plr),
        voltage_regulation=bool(doc.get("voltage_regulation", False)),
        solver=SolveSettings(float(sol.get("tol_pu", 1e-6)), int(sol.get("max_iter", 100)),
                             float(sol.get("relaxation", 1.0))),
        engine=EngineSettings(dt_s=float(dt), t_pre_s=float(t_pre),
                              t_end_s=None if t_end is None else float(t_end),
                              frequency_trace=tuple(tuple(p) for p in eng.get("frequency_trace", []))),
        label=doc.get("label", ""),
        profile_times_s=tuple(outputs.get("profile_snapshot_times_s", ())),
        output_dir=outputs.get("directory"),
        network_path=str(net_path),
    )
    cross = [x for x in validate_cross(network, sc) if x.severity == "error"]
    _raise(cross, source)
    return sc


def _apply_overrides(net: NetworkModel, overrides, source) -> NetworkModel:
    by_id = {i.id: i for i in net.ibrs}
    diags = []
    changes = {}
    for k, o in enumerate(overrides):
        if o["id"] not in by_id:
            diags.append(ParseDiagnostic("error", f"ibr_overrides[{k}].id", f"unknown ibr {o['id']!r}", "reference"))
            continue
        fields = {key: o[key] for key in ("i_limit_pu", "frt_curve", "q_set_kvar", "p_set_kw") if key in o}
        changes[o["id"]] = fields
    _raise(diags, source)
    ibrs = tuple(replace(i, **changes[i.id]) if i.id in changes else i for i in net.ibrs)
    return replace(net, ibrs=ibrs)


def validate_cross(net: NetworkModel, sc: Scenario) -> list[ParseDiagnostic]:
    """Checks that need both the network and the scenario."""
    diags = []
    bus_ids = {b.id for b in net.buses}
    if sc.fault.bus not in bus_ids:
        diags.append(ParseDiagnostic("error", "fault.bus", f"unknown bus {sc.fault.bus!r}", "reference"))
    else:
        have = net.bus(sc.fault.bus).phases
        missing = [p for p in sc.fault.phases if p not in have]
        if missing:
            diags.append(ParseDiagnostic("error", "fault.phases",
                                         f"bus {sc.fault.bus!r} has no phase(s) {''.join(missing)}", "reference"))
    cap = pv_capacity_kw(net)
    need = sc.plr * effective_load_kw(net)
    if need > cap + 1e-9:
        diags.append(ParseDiagnostic(
            "warning", "plr",
            f"required PV output exceeds installed capacity ({need:.0f} kW > {cap:.0f} kW)"))
    return diags


# --------------------------------------------------------------------------
# rooftop placement

def feeder_distances(net: NetworkModel, root: str | None = None) -> dict[str, float]:
    """Accumulated line length (km) from ``root`` along the radial tree."""
    root = root or net.feeder_head or net.source.bus
    adj: dict[str, list[tuple[str, float]]] = {}
    for l in net.line_branches:
        adj.setdefault(l.from_bus, []).append((l.to_bus, l.length_km))
        adj.setdefault(l.to_bus, []).append((l.from_bus, l.length_km))
    for br in (*net.regulators, *net.transformer_branches):
        adj.setdefault(br.from_bus, []).append((br.to_bus, 0.0))
        adj.setdefault(br.to_bus, []).append((br.from_bus, 0.0))
    dist = {root: 0.0}
    stack = [root]
    while stack:
        b = stack.pop()
        for nb, length in adj.get(b, ()):
            if nb not in dist:
                dist[nb] = dist[b] + length
                stack.append(nb)
    return dist


def place_rooftops(
    net: NetworkModel,
    count: int = 86,
    total_kva: float = 4500.0,
    seed: int = 0,
    i_limit_pu: float = 2.0,
    prefix: str = "pv",
) -> NetworkModel:
    """Spread single-phase rooftop PVs evenly over load nodes, cycling a/b/c.

    Units of phase ``p`` are spaced evenly along that phase's load nodes
    ordered by distance from the feeder head; ``seed`` sets the offset of the
    spacing grid. Existing rooftop units are replaced.
    """
    dist = feeder_distances(net)
    rng = np.random.default_rng(seed)
    cands = {}
    for p in PHASES:
        nodes = sorted({l.bus for l in net.loads if l.phase == p}, key=lambda b: (dist.get(b, 0.0), b))
        cands[p] = nodes
    per_phase = {p: 0 for p in PHASES}
    order = []
    for k in range(count):
        p = PHASES[k % 3]
        order.append((p, per_phase[p]))
        per_phase[p] += 1
    offsets = {p: float(rng.random()) for p in PHASES}
    unit = total_kva / count
    ibrs = [i for i in net.ibrs if i.kind != "rooftop_pv"]
    for k, (p, j) in enumerate(order):
        nodes = cands[p]
        if not nodes:
            raise ValueError(f"no load nodes on phase {p} to host rooftop PV")
        pos = int((j + offsets[p]) * len(nodes) / per_phase[p]) % len(nodes)
        ibrs.append(Ibr(f"{prefix}{k + 1:03d}", nodes[pos], (p,), unit, unit, 0.0, i_limit_pu,
                        DEFAULT_FRT.name, "rooftop_pv"))
    return replace(net, ibrs=tuple(ibrs))


def reference_network_path(name: str = "ieee123_td.json") -> Path:
    return DATA_DIR / name


__all__ = [
    "ParseDiagnostic", "IngestError", "IoError", "SchemaError", "UnresolvedReference",
    "ValidationError", "KindPhaseMismatch", "load_network", "load_scenario", "validate_cross",
    "network_from_dict", "network_to_dict", "save_network", "scenario_from_dict",
    "place_rooftops", "feeder_distances", "reference_network_path",
]
