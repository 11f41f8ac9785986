"""Scenario orchestration: PLR dispatch, quasi-static fault timeline, sweeps."""
from __future__ import annotations

import logging
import math
import time
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from .devices import DEFAULT_FRT, V_CTRL_MIN_PU, FrtState, frt_step, ibr_voltage_for_frt
from .netmodel import FaultSpec, NetworkModel, stamp_fault
from .solver import DeviceSet, Factorized, SolveSettings, solve, solve_prefault

logger = logging.getLogger(__name__)

PV_KINDS = ("pv_farm", "rooftop_pv")
DEFAULT_FAULT_PHASES = {"SL2G": ("a",), "DL2G": ("a", "b"), "L2L": ("a", "b"), "3L2G": ("a", "b", "c")}
CATEGORIES = ("three_phase", "phase_a", "phase_b", "phase_c")
MAX_EVENT_ROUNDS = 50


class EventIterationOverflow(RuntimeError):
    pass


class CapacityExceeded(UserWarning):
    pass


@dataclass(frozen=True)
class EngineSettings:
    dt_s: float = 1.0 / 60.0
    t_pre_s: float = 0.5
    t_end_s: float | None = None  # default: fault clearing + 1.0 s
    frequency_trace: tuple[tuple[float, float], ...] = ()

    def end_time(self, fault: FaultSpec) -> float:
        return self.t_end_s if self.t_end_s is not None else fault.t_clear_s + 1.0


@dataclass(frozen=True)
class Scenario:
    network: NetworkModel
    fault: FaultSpec
    plr: float = 0.5
    voltage_regulation: bool = False
    solver: SolveSettings = field(default_factory=SolveSettings)
    engine: EngineSettings = field(default_factory=EngineSettings)
    label: str = ""
    profile_times_s: tuple[float, ...] = ()
    output_dir: str | None = None
    network_path: str | None = None

    @property
    def plr_label(self) -> str:
        pct = f"{self.plr * 100:g}%"
        return pct + ("VR" if self.voltage_regulation else "")


@dataclass(frozen=True)
class TripRecord:
    ibr_id: str
    category: str
    trip_time_s: float
    cause: str


@dataclass
class StepLog:
    time_s: float
    iterations: int
    residual: float
    converged: bool
    event_rounds: int = 0


@dataclass
class SimulationResult:
    label: str
    scenario: Scenario
    network: NetworkModel
    times: np.ndarray
    voltages: np.ndarray  # (n_steps, n_nodes) complex pu
    index: dict[tuple[str, str], int]
    trips: list[TripRecord]
    online: np.ndarray  # (n_steps, n_ibrs) bool
    log: list[StepLog]
    dispatch_factor: float = 0.0
    taps: dict = field(default_factory=dict)
    warnings: list[str] = field(default_factory=list)
    wall_time_s: float = 0.0

    @property
    def converged(self) -> bool:
        return all(s.converged for s in self.log)

    def step_of(self, t: float) -> int:
        k = int(round(t / self.scenario.engine.dt_s))
        if k < 0 or k >= len(self.times) or not math.isclose(self.times[k], t, abs_tol=1e-9):
            from .metrics import TimeNotOnGrid
            raise TimeNotOnGrid(f"t={t} is not on the simulation grid")
        return k

    def voltage(self, k: int, bus: str, phase: str) -> complex:
        return complex(self.voltages[k, self.index[(bus, phase)]])


# --------------------------------------------------------------------------

def effective_load_kw(net: NetworkModel) -> float:
    """Load consumption plus battery charging, the PLR denominator."""
    loads = sum(l.s_nominal_kva.real for l in net.loads)
    charging = sum(-i.p_set_kw for i in net.ibrs if i.kind == "bess" and i.p_set_kw < 0)
    return loads + charging


def pv_capacity_kw(net: NetworkModel) -> float:
    return sum(i.s_rated_kva for i in net.ibrs if i.kind in PV_KINDS)


def apply_plr(net: NetworkModel, plr: float) -> tuple[NetworkModel, float, list[str]]:
    """Scale every PV setpoint by one factor so total PV = plr * effective load.

    Returns the dispatched network, the factor actually applied and warnings.
    """
    if plr < 0:
        raise ValueError("plr must be >= 0")
    cap = pv_capacity_kw(net)
    need = plr * effective_load_kw(net)
    factor = need / cap if cap > 0 else 0.0
    notes = []
    if factor > 1.0:
        msg = (f"required PV output {need:.1f} kW exceeds installed capacity {cap:.1f} kW; "
               "dispatch clamped at rated output")
        warnings.warn(msg, CapacityExceeded, stacklevel=2)
        notes.append(msg)
        factor = 1.0
    ibrs = tuple(
        i.with_dispatch(factor * i.s_rated_kva) if i.kind in PV_KINDS else i for i in net.ibrs
    )
    return replace(net, ibrs=ibrs), factor, notes


def _frequency_at(trace, t: float, f_nom: float) -> float:
    if not trace:
        return f_nom
    ts = [p[0] for p in trace]
    fs = [p[1] for p in trace]
    return float(np.interp(t, ts, fs))


def run_scenario(sc: Scenario) -> SimulationResult:
    """Pre-fault solve, then step through fault and post-fault with FRT logic."""
    t_start = time.perf_counter()
    net, factor, notes = apply_plr(sc.network, sc.plr)
    pre = solve_prefault(net, sc.voltage_regulation, sc.solver)
    notes = notes + pre.warnings
    y_pre = pre.ybus
    y_flt = stamp_fault(y_pre, sc.fault)
    fac_pre = Factorized(y_pre)
    fac_flt = Factorized(y_flt)
    devices = DeviceSet(net, y_pre.index)

    dt = sc.engine.dt_s
    n_steps = int(round(sc.engine.end_time(sc.fault) / dt))
    k_on = int(round(sc.fault.t_on_s / dt))
    k_clear = k_on + int(round(sc.fault.duration_s / dt))
    times = np.arange(n_steps + 1) * dt

    n_ibr = len(net.ibrs)
    curves = {i.id: net.frt_curves.get(i.frt_curve, DEFAULT_FRT) for i in net.ibrs}
    states = [FrtState() for _ in net.ibrs]
    online = np.ones(n_ibr, dtype=bool)

    volts = np.empty((n_steps + 1, y_pre.n), dtype=complex)
    online_hist = np.empty((n_steps + 1, n_ibr), dtype=bool)
    log: list[StepLog] = []
    trips: list[TripRecord] = []

    sol = pre.solution
    # phase-locked loops follow the terminal angle with one step of lag
    angle_ref = devices.terminal_angles(sol.v)
    volts[0] = sol.v
    online_hist[0] = online
    log.append(StepLog(0.0, sol.iterations, sol.residual, sol.converged))

    for k in range(1, n_steps + 1):
        t = float(times[k])
        faulted = k_on < k <= k_clear
        y, fac = (y_flt, fac_flt) if faulted else (y_pre, fac_pre)
        angle_ref = _track_angles(devices, sol.v, angle_ref)
        sol = solve(y, net, online, sc.solver, v0=sol.v, devices=devices, factors=fac,
                    angle_ref=angle_ref)
        f_hz = _frequency_at(sc.engine.frequency_trace, t, net.f_nominal_hz)
        snapshot = list(states)
        rounds = 0
        while True:
            new_trips = []
            for n, ibr in enumerate(net.ibrs):
                if not online[n]:
                    continue
                v_pair = ibr_voltage_for_frt(ibr, sol.bus_voltages(ibr.bus, ibr.phases))
                states[n] = frt_step(curves[ibr.id], snapshot[n], v_pair, f_hz, dt, t)
                if not states[n].online:
                    new_trips.append(n)
            if not new_trips:
                break
            rounds += 1
            if rounds > MAX_EVENT_ROUNDS:
                raise EventIterationOverflow(f"trip cascade did not settle at t={t:.4f}")
            for n in new_trips:
                online[n] = False
                ibr = net.ibrs[n]
                trips.append(TripRecord(ibr.id, ibr.category, t, states[n].trip_cause))
            sol = solve(y, net, online, sc.solver, v0=sol.v, devices=devices, factors=fac,
                        angle_ref=angle_ref)
        volts[k] = sol.v
        online_hist[k] = online
        log.append(StepLog(t, sol.iterations, sol.residual, sol.converged, rounds))

    return SimulationResult(
        label=sc.label or default_label(sc),
        scenario=sc,
        network=net,
        times=times,
        voltages=volts,
        index=y_pre.index,
        trips=trips,
        online=online_hist,
        log=log,
        dispatch_factor=factor,
        taps=pre.taps,
        warnings=notes,
        wall_time_s=time.perf_counter() - t_start,
    )


def _track_angles(devices: DeviceSet, v: np.ndarray, previous: np.ndarray) -> np.ndarray:
    """Angles the PLLs lock to for the next step; hold the last valid angle
    where the control voltage has collapsed."""
    ang = devices.terminal_angles(v)
    mag = devices.control_magnitudes(v)
    return np.where(mag >= V_CTRL_MIN_PU, ang, previous)


def default_label(sc: Scenario) -> str:
    loc = sc.fault.bus
    for name, bus in sc.network.fault_locations.items():
        if bus == loc:
            loc = name
            break
    return f"{sc.fault.kind}_{loc}_{sc.plr_label}"


# --------------------------------------------------------------------------

@dataclass(frozen=True)
class SweepMatrix:
    kinds: tuple[str, ...]
    locations: tuple[str, ...]
    plr_cases: tuple[tuple[float, bool], ...]

    def cells(self):
        for kind in self.kinds:
            for loc in self.locations:
                for plr, vr in self.plr_cases:
                    yield kind, loc, plr, vr


@dataclass
class SweepCell:
    kind: str
    location: str
    plr: float
    voltage_regulation: bool
    result: SimulationResult | None = None
    error: str | None = None

    @property
    def ok(self) -> bool:
        return self.error is None and self.result is not None and self.result.converged


def cell_scenario(base: Scenario, kind: str, location: str, plr: float, vr: bool) -> Scenario:
    bus = resolve_location(base.network, location)
    fault = replace(base.fault, kind=kind, bus=bus, phases=DEFAULT_FAULT_PHASES[kind])
    pct = f"{plr * 100:g}%" + ("VR" if vr else "")
    return replace(base, fault=fault, plr=plr, voltage_regulation=vr,
                   label=f"{kind}_{location}_{pct}")


def resolve_location(net: NetworkModel, location: str) -> str:
    return net.fault_locations.get(location, location)


def _run_cell(args):
    base, kind, loc, plr, vr = args
    cell = SweepCell(kind, loc, plr, vr)
    try:
        cell.result = run_scenario(cell_scenario(base, kind, loc, plr, vr))
    except Exception as exc:  # per-cell isolation
        logger.error("cell %s/%s/%s failed: %s", kind, loc, plr, exc)
        cell.error = f"{type(exc).__name__}: {exc}"
    return cell


def run_sweep(base: Scenario, matrix: SweepMatrix, jobs: int = 1) -> list[SweepCell]:
    """One result per matrix cell, ordered kind-major, then location, then PLR."""
    tasks = [(base, *c) for c in matrix.cells()]
    if not tasks:
        return []
    if jobs <= 1:
        return [_run_cell(t) for t in tasks]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(_run_cell, tasks))
