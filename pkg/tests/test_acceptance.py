"""End-to-end acceptance checks on the shipped reference network.

Each test records one PASS/FAIL line that is printed in the terminal summary.
Two findings cannot be reproduced by this quasi-static model on the shipped
network; they are asserted at full strength and marked as expected failures
so the line still reads FAIL.
"""
from __future__ import annotations

import math
import os
import time
from dataclasses import replace

import numpy as np
import pytest

from conftest import ACCEPTANCE_LINES
from ibrfault import report
from ibrfault.cli import main
from ibrfault.devices import DEFAULT_FRT, FrtState, ZipLoad, frt_step
from ibrfault.engine import CATEGORIES, SweepMatrix, apply_plr, run_scenario, run_sweep
from ibrfault.ingest import load_scenario, reference_network_path
from ibrfault.metrics import VUF_LIMIT, feeder_end, main_trunk, max_vuf_over_window, profile, trip_table, vuf
from ibrfault.netmodel import PHASES, build_ybus, from_sequence, to_sequence
from ibrfault.solver import DeviceSet, SolveSettings, kcl_residual, solve, solve_prefault

import netbuild

SAMPLE = reference_network_path("sl2g_pcc.json")
KINDS = ("SL2G", "DL2G", "L2L", "3L2G")
LOCATIONS = ("GTF", "PCC", "SHORT", "MEDIUM", "FAR")
PLR_CASES = ((0.5, False), (0.5, True), (1.0, False), (3.0, False))
SWEEP_LIMIT_S = 300.0


def record(n: int, ok: bool, text: str) -> None:
    ACCEPTANCE_LINES[n] = f"criterion {n:>2}: {'PASS' if ok else 'FAIL'}  {text}"


def _pcts(res) -> dict[str, float]:
    return trip_table(res).by_scenario(res.label)


def _fmt_pcts(p) -> str:
    return "/".join(f"{p[c]:g}" for c in CATEGORIES)


@pytest.fixture(scope="module")
def base():
    return load_scenario(SAMPLE)


@pytest.fixture(scope="module")
def sweep(base, tmp_path_factory):
    jobs = max(1, os.cpu_count() or 1)
    t0 = time.perf_counter()
    cells = run_sweep(base, SweepMatrix(KINDS, LOCATIONS, PLR_CASES), jobs=jobs)
    elapsed = time.perf_counter() - t0
    table = tmp_path_factory.mktemp("sweep1") / "trip_table.csv"
    report.write_trip_table(cells, table)
    by_key = {(c.kind, c.location, c.plr, c.voltage_regulation): c for c in cells}
    return {"cells": cells, "by_key": by_key, "elapsed": elapsed, "table": table}


def _cell(sweep, kind, loc, plr=0.5, vr=False):
    c = sweep["by_key"][(kind, loc, plr, vr)]
    assert c.result is not None, c.error
    return c.result


def _mid_fault(res) -> float:
    sc = res.scenario
    k = round((sc.fault.t_on_s + sc.fault.duration_s / 2) / sc.engine.dt_s)
    return float(res.times[k])


# --------------------------------------------------------------------------

def _balanced(net):
    """Same topology, no inverters, equal load on each phase of three-phase buses."""
    totals: dict[str, complex] = {}
    for ld in net.loads:
        if len(net.bus(ld.bus).phases) == 3:
            totals[ld.bus] = totals.get(ld.bus, 0) + ld.s_nominal_kva
    loads = tuple(ZipLoad(b, p, s / 3, (0.4, 0.3, 0.3)) for b, s in totals.items() for p in PHASES)
    return replace(net, ibrs=(), loads=loads)


def test_balanced_network_null(base):
    net = _balanced(base.network)
    sc = replace(base, network=net, fault=replace(base.fault, y_fault_pu=0.0), plr=0.0)
    t0 = time.perf_counter()
    res = run_scenario(sc)
    elapsed = time.perf_counter() - t0
    worst = 0.0
    for b in net.buses:
        if len(b.phases) != 3:
            continue
        rows = [res.index[(b.id, p)] for p in PHASES]
        seq = to_sequence(res.voltages[:, rows])
        worst = max(worst, float(np.abs(seq[:, 0]).max()), float(np.abs(seq[:, 2]).max()))
    ok = worst < 1e-8 and not res.trips and elapsed < 1.0
    record(1, ok, f"balanced null run: max |V0|,|V2| = {worst:.2e} pu, {len(res.trips)} trips, {elapsed:.2f} s")
    assert worst < 1e-8 and res.trips == [] and elapsed < 1.0


def test_solver_matches_direct_solve(sweep):
    rng = np.random.default_rng(20240601)
    worst_dv = worst_res = 0.0
    for _ in range(200):
        net = netbuild.random_radial(rng, int(rng.integers(1, 9)))
        y = build_ybus(net)
        sol = solve(y, net, settings=SolveSettings(tol_pu=1e-12))
        direct = np.linalg.solve(y.matrix.toarray(), y.source_current)
        worst_dv = max(worst_dv, float(np.max(np.abs(sol.v - direct))))
        dev = DeviceSet(net, y.index)
        worst_res = max(worst_res, kcl_residual(y, sol.v, dev.injections(sol.v, np.ones(0, bool))))
    # every converged step of the full sweep
    sweep_res = max(s.residual for c in sweep["cells"] for s in c.result.log if s.converged)
    ok = worst_dv < 1e-9 and worst_res <= 1e-6 and sweep_res <= 1e-6
    record(2, ok, f"200 random radial networks: max |dV| = {worst_dv:.1e} pu; "
                  f"max KCL residual {max(worst_res, sweep_res):.1e} pu over converged solves")
    assert ok


def test_sequence_round_trip_and_vuf_invariance():
    rng = np.random.default_rng(11)
    v = rng.uniform(-10, 10, (10_000, 3)) + 1j * rng.uniform(-10, 10, (10_000, 3))
    err = float(np.max(np.abs(from_sequence(to_sequence(v)) - v)))
    inv = 0.0
    for row in v[:1000]:
        k = rng.uniform(0.01, 100)
        rot = np.exp(1j * rng.uniform(-math.pi, math.pi))
        base_vuf = vuf(row)
        inv = max(inv, abs(vuf(k * row) - base_vuf), abs(vuf(rot * row) - base_vuf))
    ok = err < 1e-12 and inv < 1e-12
    record(3, ok, f"10^4 round trips max error {err:.1e}; VUF scale/rotation drift {inv:.1e}")
    assert ok


def test_frt_timing():
    dt = 1 / 60
    state, t = FrtState(), 0.0
    while state.online and t < 1.0:
        t += dt
        state = frt_step(DEFAULT_FRT, state, 0.3, 60.0, dt, t)
    rng = np.random.default_rng(5)
    tripped = 0
    for _ in range(1000):
        s = FrtState()
        for k in range(int(rng.integers(1, 200))):
            v = tuple(sorted(rng.uniform(0.88, 1.10, 2)))
            s = frt_step(DEFAULT_FRT, s, v, rng.uniform(58.5, 61.2), dt, k * dt)
        tripped += not s.online
    ok = abs(state.trip_time_s - 0.15) <= dt + 1e-12 and tripped == 0
    record(4, ok, f"0.3 pu hold trips at {state.trip_time_s:.4f} s; {tripped}/1000 in-band traces tripped")
    assert ok


def test_three_phase_fault_at_pcc(sweep):
    res = _cell(sweep, "3L2G", "PCC")
    sc = res.scenario
    k_on = round(sc.fault.t_on_s / sc.engine.dt_s)
    k_clear = k_on + round(sc.fault.duration_s / sc.engine.dt_s)
    rows = [res.index[("3", p)] for p in PHASES]
    v_fault = float(np.abs(res.voltages[k_on + 1:k_clear + 1][:, rows]).max())
    p = _pcts(res)
    ok = v_fault < 0.01 and all(p[c] == 100.0 for c in CATEGORIES)
    record(5, ok, f"3L2G PCC 50%: faulted bus max {v_fault:.4f} pu; trips {_fmt_pcts(p)} %")
    assert ok


def test_single_line_fault_at_pcc(sweep):
    p = _pcts(_cell(sweep, "SL2G", "PCC"))
    ok = (p["three_phase"], p["phase_a"], p["phase_b"], p["phase_c"]) == (100.0, 100.0, 0.0, 0.0)
    record(6, ok, f"SL2G PCC 50%: trips {_fmt_pcts(p)} %")
    assert ok


@pytest.mark.xfail(strict=True, reason="current-limited rooftops cannot lift the bolted phase above "
                                       "the 0.5 pu zone on a 2 km feeder")
def test_generation_level_shields_feeder_end(sweep):
    lo = _cell(sweep, "SL2G", "PCC", 0.5)
    hi = _cell(sweep, "SL2G", "PCC", 3.0)
    pa_lo, pa_hi = _pcts(lo)["phase_a"], _pcts(hi)["phase_a"]
    prof = profile(hi, _mid_fault(hi))
    net = hi.network
    v_head = prof.magnitude(net.feeder_head, "a")
    v_end = prof.magnitude(feeder_end(net), "a")
    ok = pa_hi < pa_lo and v_end > v_head
    record(7, ok, f"SL2G PCC phase-a trips 50% {pa_lo:g} % vs 300% {pa_hi:g} %; "
                  f"mid-fault phase a head {v_head:.3f} pu, end {v_end:.3f} pu")
    assert pa_hi < pa_lo
    assert v_end > v_head


@pytest.mark.xfail(strict=True, reason="a bolted wye-side line-to-line fault holds the faulted phases "
                                       "just under 0.5 pu, inside the shortest clearing zone")
def test_line_to_line_downstream_immunity(sweep):
    bad = []
    for loc in ("PCC", "SHORT", "MEDIUM", "FAR"):
        for plr, vr in PLR_CASES:
            res = _cell(sweep, "L2L", loc, plr, vr)
            p = _pcts(res)
            if any(p.values()):
                bad.append(f"{loc} {res.scenario.plr_label} {_fmt_pcts(p)}")
    record(8, not bad, "L2L below the transformer: " + ("no trips" if not bad else
                                                          f"{len(bad)}/16 cells trip, e.g. " + "; ".join(bad[:3])))
    assert not bad


def test_delta_wye_shielding(sweep):
    res = _cell(sweep, "L2L", "GTF")
    prof = profile(res, _mid_fault(res))
    lows = {p: min(x.v_pu for x in prof.phase(p)) for p in PHASES}
    sagged = [p for p in PHASES if lows[p] < 0.5]
    p_l2l = _pcts(res)
    p_dl2g = _pcts(_cell(sweep, "DL2G", "GTF"))

    def only_three_and_b(p):
        return p["three_phase"] > 0 and p["phase_b"] > 0 and p["phase_a"] == 0 and p["phase_c"] == 0

    ok = sagged == ["b"] and only_three_and_b(p_l2l) and only_three_and_b(p_dl2g)
    record(9, ok, f"L2L a-b at GTF: feeder minima a/b/c {lows['a']:.3f}/{lows['b']:.3f}/{lows['c']:.3f} pu; "
                  f"trips L2L {_fmt_pcts(p_l2l)} %, DL2G {_fmt_pcts(p_dl2g)} %")
    assert ok


def test_post_fault_unbalance(sweep):
    res = _cell(sweep, "SL2G", "PCC", 3.0)
    rep = max_vuf_over_window(res)
    ok = rep.global_max > VUF_LIMIT
    record(10, ok, f"SL2G PCC 300% post-fault max VUF {rep.global_max:.4f} at {rep.worst_node} "
                   f"(limit {VUF_LIMIT})")
    assert ok


def test_prefault_profiles(base, sweep):
    net0, _, _ = apply_plr(base.network, 0.0)
    pre0 = solve_prefault(net0)
    trunk = main_trunk(base.network)
    mags0 = [abs(pre0.solution.voltage(b, "a")) for b in trunk]
    falling = all(b <= a + 1e-12 for a, b in zip(mags0, mags0[1:]))

    hi = _cell(sweep, "SL2G", "PCC", 3.0)
    v_pcc = np.abs([hi.voltage(0, "3", p) for p in PHASES])
    above = max(abs(hi.voltage(0, b.id, p)) - v_pcc[PHASES.index(p)]
                for b in hi.network.buses if b.zone == "distribution" for p in b.phases)

    end = feeder_end(base.network)
    v_plain = abs(_cell(sweep, "SL2G", "PCC", 0.5, False).voltage(0, end, "a"))
    v_vr = abs(_cell(sweep, "SL2G", "PCC", 0.5, True).voltage(0, end, "a"))
    ok = falling and above > 0 and v_vr > v_plain
    record(11, ok, f"0% trunk non-increasing {falling} ({mags0[0]:.4f} -> {mags0[-1]:.4f} pu); "
                   f"300% peak above PCC by {above:.4f} pu; 50% feeder end {v_plain:.4f} -> {v_vr:.4f} pu with regulation")
    assert ok


def test_full_sweep_is_fast_and_reproducible(sweep, tmp_path):
    out = tmp_path / "sweep2"
    jobs = str(max(1, os.cpu_count() or 1))
    t0 = time.perf_counter()
    rc = main(["sweep", "--scenario", str(SAMPLE), "--kinds", "all", "--locations", "all",
               "--plrs", "0.5,0.5vr,1.0,3.0", "--jobs", jobs, "--out", str(out)])
    second = time.perf_counter() - t0
    first_bytes = sweep["table"].read_bytes()
    same = (out / "trip_table.csv").read_bytes() == first_bytes
    n_rows = first_bytes.count(b"\n") - 1
    failed = sum(not c.ok for c in sweep["cells"])
    ok = (rc == 0 and same and failed == 0 and n_rows == 320
          and sweep["elapsed"] < SWEEP_LIMIT_S and second < SWEEP_LIMIT_S)
    record(12, ok, f"80 cells in {sweep['elapsed']:.1f} s and {second:.1f} s (jobs={jobs}); "
                   f"{n_rows} table rows; byte-identical {same}; {failed} failed cells")
    assert ok
