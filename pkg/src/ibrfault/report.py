"""CSV and JSON writers for simulation and sweep results."""
from __future__ import annotations

import csv
import hashlib
import json
import math
from pathlib import Path

from . import __version__
from .engine import CATEGORIES, SimulationResult
from .metrics import VUF_LIMIT, max_vuf_over_window, profile, trip_table

TRIPS_COLUMNS = ["scenario", "fault_kind", "fault_bus", "plr", "vr", "category", "n_total", "n_tripped", "pct"]
VUF_COLUMNS = ["scenario", "node", "max_vuf", "exceeds_limit"]
PROFILE_COLUMNS = ["scenario", "time_s", "node", "phase", "v_pu", "angle_deg", "distance_km"]
TABLE_COLUMNS = ["fault_kind", "location", "fault_bus", "plr", "vr", "category",
                 "n_total", "n_tripped", "pct", "status"]


def fmt(x) -> str:
    """Six significant digits; fixed tokens for booleans and missing values."""
    if isinstance(x, bool):
        return "true" if x else "false"
    if isinstance(x, int):
        return str(x)
    if isinstance(x, float):
        if math.isnan(x):
            return "NA"
        out = f"{x:.6g}"
        return "0" if out == "-0" else out
    return str(x)


def _write_csv(path: Path, columns, rows) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for r in rows:
            w.writerow([fmt(v) for v in r])


def digest(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


def default_profile_times(result: SimulationResult) -> list[float]:
    """Pre-fault, mid-fault and final snapshot times on the grid."""
    sc = result.scenario
    dt = sc.engine.dt_s
    k_on = int(round(sc.fault.t_on_s / dt))
    k_mid = k_on + max(1, int(round(sc.fault.duration_s / dt / 2)))
    return [float(result.times[0]), float(result.times[k_mid]), float(result.times[-1])]


def trips_rows(result: SimulationResult):
    sc = result.scenario
    for row in trip_table(result).rows:
        yield [result.label, sc.fault.kind, sc.fault.bus, float(sc.plr), sc.voltage_regulation,
               row.category, row.n_total, row.n_tripped, row.pct]


def vuf_rows(result: SimulationResult):
    rep = max_vuf_over_window(result)
    for node, val in rep.per_node.items():
        yield [result.label, node, val, rep.exceeds_limit(node)]


def profile_rows(result: SimulationResult, times):
    for t in times:
        prof = profile(result, t)
        for p in prof.points:
            yield [result.label, prof.time_s, p.node, p.phase, p.v_pu, p.angle_deg, p.distance_km]


def _step_ranges(result: SimulationResult):
    """Contiguous [t_first, t_last] ranges of non-converged steps."""
    out = []
    for s in result.log:
        if s.converged:
            continue
        if out and math.isclose(s.time_s - out[-1][1], result.scenario.engine.dt_s, rel_tol=1e-6):
            out[-1][1] = s.time_s
        else:
            out.append([s.time_s, s.time_s])
    return out


def summary(result: SimulationResult, profile_times) -> dict:
    sc = result.scenario
    f = sc.fault
    rep = max_vuf_over_window(result)
    return {
        "scenario": {
            "label": result.label,
            "network_path": sc.network_path,
            "network_name": result.network.name,
            "fault": {"kind": f.kind, "bus": f.bus, "phases": list(f.phases), "t_on_s": f.t_on_s,
                      "duration_s": f.duration_s, "y_fault_pu": f.y_fault_pu},
            "plr": sc.plr,
            "voltage_regulation": sc.voltage_regulation,
            "solver": {"tol_pu": sc.solver.tol_pu, "max_iter": sc.solver.max_iter,
                       "relaxation": sc.solver.relaxation},
            "engine": {"dt_s": sc.engine.dt_s, "t_pre_s": sc.engine.t_pre_s,
                       "t_end_s": sc.engine.end_time(f)},
            "profile_times_s": list(profile_times),
        },
        "dispatch_factor": result.dispatch_factor,
        "regulator_taps": result.taps,
        "converged": result.converged,
        "nonconverged_steps_s": _step_ranges(result),
        "convergence_log": [
            {"time_s": s.time_s, "iterations": s.iterations, "residual_pu": s.residual,
             "converged": s.converged, "event_rounds": s.event_rounds}
            for s in result.log
        ],
        "trip_percentages": trip_table(result).by_scenario(result.label),
        "trips": [{"ibr_id": t.ibr_id, "category": t.category, "trip_time_s": t.trip_time_s,
                   "cause": t.cause} for t in result.trips],
        "vuf": {"window_s": list(rep.window_s), "global_max": rep.global_max,
                "worst_node": rep.worst_node, "limit": VUF_LIMIT},
        "warnings": list(result.warnings),
    }


def write_result(result: SimulationResult, out_dir, profile_times=None) -> list[Path]:
    """Write trips.csv, vuf.csv, profile.csv and summary.json; return the paths."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    times = list(profile_times) if profile_times else default_profile_times(result)
    paths = [out / "trips.csv", out / "vuf.csv", out / "profile.csv", out / "summary.json"]
    _write_csv(paths[0], TRIPS_COLUMNS, trips_rows(result))
    _write_csv(paths[1], VUF_COLUMNS, vuf_rows(result))
    _write_csv(paths[2], PROFILE_COLUMNS, profile_rows(result, times))
    paths[3].write_text(json.dumps(_clean(summary(result, times)), indent=1) + "\n", encoding="utf-8")
    return paths


def _clean(obj):
    """JSON has no NaN; report undefined numbers as null."""
    if isinstance(obj, float) and not math.isfinite(obj):
        return None
    if isinstance(obj, dict):
        return {k: _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    return obj


def write_trip_table(cells, path) -> Path:
    """Consolidated table: one row per (kind, location, PLR case, category)."""
    rows = []
    for c in cells:
        status = "ok" if c.ok else ("error" if c.error else "not_converged")
        if c.result is not None:
            pct = trip_table(c.result).by_scenario(c.result.label)
            totals = {r.category: (r.n_total, r.n_tripped) for r in trip_table(c.result).rows}
            bus = c.result.scenario.fault.bus
        else:
            pct, totals, bus = {}, {}, ""
        for cat in CATEGORIES:
            n_total, n_tripped = totals.get(cat, (0, 0))
            rows.append([c.kind, c.location, bus, float(c.plr), c.voltage_regulation, cat,
                         n_total, n_tripped, pct.get(cat, math.nan), status])
    _write_csv(Path(path), TABLE_COLUMNS, rows)
    return Path(path)


def write_manifest(path, inputs, labels, outputs, wall_times) -> Path:
    base = Path(path).parent
    doc = {
        "tool": "ibrfault",
        "version": __version__,
        "inputs": {str(p): digest(p) for p in inputs if p and Path(p).exists()},
        "scenarios": list(labels),
        "outputs": sorted(str(Path(p).relative_to(base)) for p in outputs),
        "wall_time_s": dict(wall_times),
    }
    Path(path).write_text(json.dumps(doc, indent=1) + "\n", encoding="utf-8")
    return Path(path)
