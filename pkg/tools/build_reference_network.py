"""Generate the shipped network files.

    python tools/build_reference_network.py <ieee123_dss_dir> [--out src/ibrfault/data]

Reads the public IEEE 123-node test feeder in OpenDSS form (master, line
codes, loads, regulators), attaches it below a six-bus transmission
equivalent, scales the loads to 1.3 MW and places the inverter fleet. Also
writes a small synthetic 13-node feeder with the same transmission side,
used by the fast tests.
"""
from __future__ import annotations

import argparse
import re
import sys
from pathlib import Path

import numpy as np

sys.path.insert(0, str(Path(__file__).resolve().parents[1] / "src"))

from ibrfault.ingest import network_from_dict, place_rooftops, save_network  # noqa: E402

KFT_PER_KM = 1.0 / 0.3048
TOTAL_LOAD_KW = 1300.0
ZIP = [0.4, 0.3, 0.3]
SEED = 123
PHASE_OF = {"1": "a", "2": "b", "3": "c"}

# transmission side: source, 9.2 km line, substation transformer, PCC stubs
Z1_T = [0.063, 0.013]
Z0_T = [0.016, 0.041]


def transmission_part() -> dict:
    buses = [
        {"id": "1", "base_kv_ll": 12.47, "zone": "transmission"},
        {"id": "2", "base_kv_ll": 12.47, "zone": "transmission"},
    ] + [{"id": str(k), "base_kv_ll": 4.16, "zone": "transmission"} for k in (3, 4, 5, 6)]
    lines = [{"name": "L1-2", "from": "1", "to": "2", "length_km": 9.2,
              "z1_ohm_per_km": Z1_T, "z0_ohm_per_km": Z0_T}]
    for bus, km in (("4", 1.5), ("5", 4.0), ("6", 7.0)):
        lines.append({"name": f"L3-{bus}", "from": "3", "to": bus, "length_km": km,
                      "z1_ohm_per_km": Z1_T, "z0_ohm_per_km": Z0_T})
    return {
        "buses": buses,
        "lines": lines,
        "transformers": [{"name": "T2-3", "from": "2", "to": "3", "connection": "delta_yg_lag30",
                          "s_rated_mva": 10.0, "z_leak_pu": [0.0, 0.05], "grounded": True}],
        "sources": [{"bus": "1", "v_set_pu": 1.0, "angle_deg": 0.0, "z_internal_pu": [0.0, 0.001]}],
        "fault_locations": {"GTF": "1", "PCC": "3", "SHORT": "4", "MEDIUM": "5", "FAR": "6"},
    }


# --------------------------------------------------------------------------
# OpenDSS subset reader

def _statements(path: Path):
    """Yield one logical statement per 'New' line, folding '~' continuations."""
    cur = None
    for raw in path.read_text().splitlines():
        line = raw.split("!")[0].strip()
        if not line:
            continue
        if line.startswith("~"):
            if cur is not None:
                cur += " " + line[1:]
            continue
        if cur is not None:
            yield cur
        cur = line if line.lower().startswith("new ") else None
    if cur is not None:
        yield cur


def _props(stmt: str) -> tuple[str, dict]:
    stmt = re.sub(r"\s*=\s*", "=", stmt)
    head, rest = stmt.split(None, 2)[1], (stmt.split(None, 2) + [""])[2]
    if head.lower().startswith("object="):
        head = head.split("=", 1)[1]
    props = {}
    for m in re.finditer(r"(\w+)=(\[[^\]]*\]|\([^)]*\)|\S+)", rest):
        props[m.group(1).lower()] = m.group(2)
    return head.lower(), props


def _matrix(text: str) -> np.ndarray:
    rows = [list(map(float, r.split())) for r in text.strip("[]()").split("|")]
    n = len(rows)
    m = np.zeros((n, n))
    for i, r in enumerate(rows):
        for j, val in enumerate(r):
            m[i, j] = m[j, i] = val
    return m


def _bus(spec: str) -> tuple[str, tuple[str, ...]]:
    parts = spec.split(".")
    return parts[0].lower(), tuple(PHASE_OF[p] for p in parts[1:] if p in PHASE_OF)


def read_linecodes(path: Path) -> dict[str, tuple[list, list]]:
    """linecode -> (z1, z0) in ohm/km from averaged self and mutual terms."""
    codes = {}
    for stmt in _statements(path):
        name, p = _props(stmt)
        if not name.startswith("linecode.") or "rmatrix" not in p:
            continue
        z = _matrix(p["rmatrix"]) + 1j * _matrix(p["xmatrix"])
        n = z.shape[0]
        zs = np.trace(z) / n
        zm = (z.sum() - np.trace(z)) / (n * (n - 1)) if n > 1 else 0.0
        z1 = (zs - zm) * KFT_PER_KM
        z0 = (zs + 2 * zm) * KFT_PER_KM
        codes[name.split(".", 1)[1]] = ([round(z1.real, 6), round(z1.imag, 6)],
                                        [round(z0.real, 6), round(z0.imag, 6)])
    return codes


def node(name: str) -> str:
    return "n" + name


def ieee123_feeder(dss_dir: Path) -> dict:
    master = dss_dir / "IEEE123Master.dss"
    codes = read_linecodes(dss_dir / "IEEELineCodes.DSS")
    bus_phases: dict[str, set] = {}
    lines = []
    skip = {"line.sw7", "line.sw8"}  # normally open ties
    for stmt in _statements(master):
        name, p = _props(stmt)
        if not name.startswith("line.") or name in skip:
            continue
        b1, ph1 = _bus(p["bus1"])
        b2, ph2 = _bus(p["bus2"])
        phases = ph1 or ("a", "b", "c")
        if name == "line.sw1":
            continue  # merged: reg1 feeds node 149 directly
        if p.get("switch", "").lower() == "true":
            z1 = z0 = [0.1, 0.1]
            length = 0.001
        else:
            z1, z0 = codes[p["linecode"]]
            length = round(float(p["length"]) * 1000 * 0.3048 / 1000, 6)
        lines.append({"name": name.split(".", 1)[1].upper(), "from": node(b1), "to": node(b2),
                      "length_km": length, "z1_ohm_per_km": z1, "z0_ohm_per_km": z0,
                      "phases": list(phases)})
        for b in (b1, b2):
            bus_phases.setdefault(b, set()).update(phases)

    regs = [{"name": "reg1", "from": "3", "to": node("149"), "phases": ["a", "b", "c"]}]
    bus_phases.setdefault("149", set()).update("abc")
    for stmt in _statements(dss_dir / "IEEE123Regulators.DSS"):
        name, p = _props(stmt)
        if not name.startswith("transformer.reg"):
            continue
        m = re.match(r"\[(\S+)\s+(\S+)\]", p["buses"])
        b1, ph = _bus(m.group(1))
        b2, _ = _bus(m.group(2))
        rid = name.split(".")[1][:-1]
        for r in regs:
            if r["name"] == rid:
                r["phases"] = sorted(set(r["phases"]) | set(ph))
                break
        else:
            regs.append({"name": rid, "from": node(b1), "to": node(b2), "phases": list(ph)})
        bus_phases.setdefault(b1, set()).update(ph)
        bus_phases.setdefault(b2, set()).update(ph)
    for r in regs:
        r.update(step_pu=0.00625, tap_range=16, band_center_pu=1.0, band_width_pu=0.0333,
                 taps=[0] * len(r["phases"]), z_pu=[1e-4, 1e-3])

    transformers = [{"name": "XFM1", "from": node("61s"), "to": node("610"), "connection": "yg_yg",
                     "s_rated_mva": 0.15, "z_leak_pu": [0.0127, 0.0272], "grounded": True}]
    bus_phases.setdefault("610", set()).update("abc")

    caps = []
    for stmt in _statements(master):
        name, p = _props(stmt)
        if name.startswith("capacitor."):
            b, ph = _bus(p["bus1"])
            ph = ph or ("a", "b", "c")
            caps.append({"name": name.split(".")[1].upper(), "bus": node(b), "phases": list(ph),
                         "q_kvar_per_phase": float(p["kvar"]) / len(ph), "enabled": True})

    loads = []
    for stmt in _statements(dss_dir / "IEEE123Loads.DSS"):
        name, p = _props(stmt)
        if not name.startswith("load."):
            continue
        b, ph = _bus(p["bus1"])
        kw, kvar = float(p["kw"]), float(p["kvar"])
        if int(p["phases"]) == 3:
            split = [("a", 1 / 3), ("b", 1 / 3), ("c", 1 / 3)]
        else:
            split = [(ph[0], 1.0)]  # delta loads land on the leading phase
        for phase, frac in split:
            loads.append({"name": name.split(".")[1].upper() + (phase if len(split) > 1 else ""),
                          "bus": node(b), "phase": phase, "p_kw": kw * frac, "q_kvar": kvar * frac})
    scale = TOTAL_LOAD_KW / sum(l["p_kw"] for l in loads)
    for l in loads:
        l["p_kw"] = round(l["p_kw"] * scale, 6)
        l["q_kvar"] = round(l["q_kvar"] * scale, 6)
        l["zip"] = ZIP
    drift = TOTAL_LOAD_KW - sum(l["p_kw"] for l in loads)
    loads[0]["p_kw"] = round(loads[0]["p_kw"] + drift, 6)

    buses = [{"id": node(b), "base_kv_ll": 0.48 if b == "610" else 4.16, "phases": sorted(ph),
              "zone": "distribution"} for b, ph in sorted(bus_phases.items(), key=lambda kv: _natural(kv[0]))]
    return {"buses": buses, "lines": lines, "transformers": transformers, "regulators": regs,
            "capacitors": caps, "loads": loads}


def _natural(name: str):
    m = re.match(r"(\d+)(.*)", name)
    return (int(m.group(1)), m.group(2)) if m else (10**9, name)


def three_phase_plants(head: str, bess_bus: str) -> list[dict]:
    return [
        {"id": "pv_farm", "bus": head, "phases": ["a", "b", "c"], "kind": "pv_farm",
         "s_rated_kva": 3000.0, "p_set_kw": 3000.0, "i_limit_pu": 1.2},
        {"id": "bess_149", "bus": head, "phases": ["a", "b", "c"], "kind": "bess",
         "s_rated_kva": 3000.0, "p_set_kw": -300.0, "i_limit_pu": 1.2},
        {"id": "bess_108", "bus": bess_bus, "phases": ["a", "b", "c"], "kind": "bess",
         "s_rated_kva": 550.0, "p_set_kw": -100.0, "i_limit_pu": 1.2},
    ]


def assemble(feeder: dict, name: str, head: str, bess_bus: str, n_rooftops: int) -> dict:
    t = transmission_part()
    doc = {
        "schema_version": "1",
        "name": name,
        "s_base_mva": 10.0,
        "f_nominal_hz": 60.0,
        "feeder_head": head,
        "fault_locations": t["fault_locations"],
        "buses": t["buses"] + feeder["buses"],
        "lines": t["lines"] + feeder["lines"],
        "transformers": t["transformers"] + feeder.get("transformers", []),
        "sources": t["sources"],
        "loads": feeder["loads"],
        "capacitors": feeder["capacitors"],
        "regulators": feeder["regulators"],
        "ibrs": three_phase_plants(head, bess_bus),
    }
    net = place_rooftops(network_from_dict(doc), count=n_rooftops, total_kva=4500.0, seed=SEED)
    return net


def feeder13() -> dict:
    """Small radial feeder: 3-phase trunk with single-phase laterals."""
    trunk = ["h", "t1", "t2", "t3", "t4", "t5"]
    z3 = ([0.2843, 0.6645], [0.7151, 1.6263])
    z1p = ([0.8260, 0.8373], [0.8260, 0.8373])
    buses = [{"id": f"f{b}", "base_kv_ll": 4.16, "phases": ["a", "b", "c"], "zone": "distribution"}
             for b in trunk]
    lines = []
    for u, v in zip(trunk, trunk[1:]):
        lines.append({"name": f"F{u}-{v}", "from": f"f{u}", "to": f"f{v}", "length_km": 0.6,
                      "z1_ohm_per_km": z3[0], "z0_ohm_per_km": z3[1], "phases": ["a", "b", "c"]})
    laterals = [("t1", "la", "a"), ("t2", "lb", "b"), ("t3", "lc", "c"),
                ("t4", "la2", "a"), ("t4", "lb2", "b"), ("t5", "lc2", "c"), ("t5", "la3", "a")]
    for parent, lat, ph in laterals:
        buses.append({"id": f"f{lat}", "base_kv_ll": 4.16, "phases": [ph], "zone": "distribution"})
        lines.append({"name": f"F{parent}-{lat}", "from": f"f{parent}", "to": f"f{lat}", "length_km": 0.4,
                      "z1_ohm_per_km": z1p[0], "z0_ohm_per_km": z1p[1], "phases": [ph]})
    loads = []
    for b in trunk[1:]:
        for ph in "abc":
            loads.append({"bus": f"f{b}", "phase": ph, "p_kw": 40.0, "q_kvar": 20.0})
    for _, lat, ph in laterals:
        loads.append({"bus": f"f{lat}", "phase": ph, "p_kw": 100.0, "q_kvar": 50.0})
    scale = TOTAL_LOAD_KW / sum(l["p_kw"] for l in loads)
    for k, l in enumerate(loads):
        l.update(name=f"LD{k + 1}", p_kw=l["p_kw"] * scale, q_kvar=l["q_kvar"] * scale, zip=ZIP)
    regs = [{"name": "reg1", "from": "3", "to": "fh", "phases": ["a", "b", "c"], "step_pu": 0.00625,
             "tap_range": 16, "band_center_pu": 1.0, "band_width_pu": 0.0333, "taps": [0, 0, 0],
             "z_pu": [1e-4, 1e-3]}]
    caps = [{"name": "C1", "bus": "ft4", "phases": ["a", "b", "c"], "q_kvar_per_phase": 200.0,
             "enabled": True}]
    return {"buses": buses, "lines": lines, "loads": loads, "regulators": regs, "capacitors": caps}


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("dss_dir", type=Path)
    ap.add_argument("--out", type=Path, default=Path(__file__).resolve().parents[1] / "src/ibrfault/data")
    args = ap.parse_args(argv)
    args.out.mkdir(parents=True, exist_ok=True)
    big = assemble(ieee123_feeder(args.dss_dir), "ieee123_td", node("149"), node("108"), 86)
    save_network(big, args.out / "ieee123_td.json")
    small = assemble(feeder13(), "feeder13_td", "fh", "ft3", 12)
    save_network(small, args.out / "feeder13_td.json")
    print(f"wrote {len(big.buses)} + {len(small.buses)} buses to {args.out}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
