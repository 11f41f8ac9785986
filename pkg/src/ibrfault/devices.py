"""Bus-attached device models: ZIP loads, capacitors, regulators, inverters.

Currents are complex per-unit phasors on the system base. Loads use the load
convention (current drawn from the node); inverters use the generator
convention (current injected into the node). Power arguments in kVA/kW are
converted with ``kva_base``, the per-phase system base in kVA.
"""
from __future__ import annotations

import cmath
import math
from dataclasses import dataclass, field, replace

import numpy as np

from .netmodel import PHASES, to_sequence

V_FLOOR_PU = 0.3  # constant-current/power shares turn into constant impedance below this
V_CTRL_MIN_PU = 1e-3
_EPS_T = 1e-9


@dataclass(frozen=True)
class ZipLoad:
    bus: str
    phase: str
    s_nominal_kva: complex
    coeffs: tuple[float, float, float] = (0.4, 0.3, 0.3)
    v_nominal_pu: float = 1.0
    name: str = ""


@dataclass(frozen=True)
class ShuntCapacitor:
    bus: str
    phases: tuple[str, ...]
    q_rated_kvar: float
    enabled: bool = True
    name: str = ""


@dataclass(frozen=True)
class Regulator:
    name: str
    from_bus: str
    to_bus: str
    phases: tuple[str, ...]
    step_pu: float = 0.00625
    tap_range: int = 16
    band_center_pu: float = 1.0
    band_width_pu: float = 0.0333
    current_taps: tuple[int, ...] = ()
    z_pu: complex = complex(1e-4, 1e-3)

    def tap_map(self) -> dict[str, int]:
        taps = self.current_taps or (0,) * len(self.phases)
        return dict(zip(self.phases, taps))

    def ratio(self, tap: int) -> float:
        return 1.0 + tap * self.step_pu


@dataclass(frozen=True)
class Ibr:
    id: str
    bus: str
    phases: tuple[str, ...]
    s_rated_kva: float
    p_set_kw: float
    q_set_kvar: float = 0.0
    i_limit_pu: float = 2.0
    frt_curve: str = "default_1547"
    kind: str = "rooftop_pv"

    @property
    def three_phase(self) -> bool:
        return len(self.phases) == 3

    @property
    def category(self) -> str:
        return "three_phase" if self.three_phase else f"phase_{self.phases[0]}"

    def with_dispatch(self, p_set_kw: float) -> Ibr:
        return replace(self, p_set_kw=p_set_kw)


@dataclass(frozen=True)
class FrtCurve:
    """Non-trip envelope as must-trip zones around a continuous region.

    Zones are ``(low, high, max_duration_s)``: voltage in pu, frequency in Hz.
    A zone covers ``low <= x < high``.
    """

    name: str
    under_voltage_zones: tuple[tuple[float, float, float], ...]
    over_voltage_zones: tuple[tuple[float, float, float], ...]
    under_frequency_zones: tuple[tuple[float, float, float], ...]
    over_frequency_zones: tuple[tuple[float, float, float], ...]
    continuous_region: tuple[float, float, float, float]

    def zones(self):
        for kind in ("under_voltage", "over_voltage", "under_frequency", "over_frequency"):
            for i, zone in enumerate(getattr(self, kind + "_zones")):
                yield f"{kind}[{i}]", kind, zone


DEFAULT_FRT = FrtCurve(
    name="default_1547",
    under_voltage_zones=((0.0, 0.50, 0.15), (0.50, 0.70, 2.0), (0.70, 0.88, 10.0)),
    over_voltage_zones=((1.10, 1.20, 0.5), (1.20, math.inf, 0.15)),
    under_frequency_zones=((0.0, 57.0, 0.15), (57.0, 58.5, 0.3)),
    over_frequency_zones=((61.2, 61.8, 0.3), (61.8, math.inf, 0.15)),
    continuous_region=(0.88, 1.10, 58.5, 61.2),
)


@dataclass
class FrtState:
    status: str = "online"
    zone_timers: dict[str, float] = field(default_factory=dict)
    trip_time_s: float | None = None
    trip_cause: str | None = None

    @property
    def online(self) -> bool:
        return self.status == "online"


# --------------------------------------------------------------------------

def zip_injection(
    load: ZipLoad,
    v: complex,
    kva_base: float = 1.0,
    *,
    include_z: bool = True,
) -> complex:
    """Current drawn by a ZIP load at terminal voltage ``v`` (pu)."""
    mag = abs(v)
    if mag == 0.0:
        return 0j
    a_z, a_i, a_p = load.coeffs
    s = load.s_nominal_kva / kva_base
    ratio = mag / load.v_nominal_pu
    share = a_z * ratio * ratio if include_z else 0.0
    if mag >= V_FLOOR_PU:
        share += a_i * ratio + a_p
    else:
        # both non-impedance shares turn into the impedance they present at the floor
        low = (mag / V_FLOOR_PU) ** 2
        share += (a_i * V_FLOOR_PU / load.v_nominal_pu + a_p) * low
    return (s * share / v).conjugate()


def ibr_injection(
    ibr: Ibr,
    v_terminals,
    kva_base: float = 1.0,
    *,
    angle_ref: float | None = None,
) -> np.ndarray:
    """Currents injected by a grid-following inverter (generator convention).

    ``v_terminals`` holds one phasor per inverter phase. The magnitude follows
    ``|S_set| / |V_ctrl|`` clamped at ``i_limit_pu`` times rated current; the
    current leads ``angle_ref`` (default: the control voltage angle) by the
    power-factor angle of the setpoint. ``V_ctrl`` is the positive-sequence
    terminal voltage for three-phase units.
    """
    v = np.atleast_1d(np.asarray(v_terminals, dtype=complex))
    n_ph = len(ibr.phases)
    s_set = complex(ibr.p_set_kw, ibr.q_set_kvar) / n_ph / kva_base
    i_rated = ibr.s_rated_kva / n_ph / kva_base
    v_ctrl = to_sequence(v)[1] if n_ph == 3 else v[0]
    if angle_ref is None:
        angle_ref = cmath.phase(v_ctrl) if abs(v_ctrl) >= V_CTRL_MIN_PU else 0.0
    i_max = ibr.i_limit_pu * i_rated
    if abs(s_set) == 0.0:
        mag = 0.0
    elif abs(v_ctrl) < V_CTRL_MIN_PU:
        mag = i_max
    else:
        mag = min(abs(s_set) / abs(v_ctrl), i_max)
    # I = conj(S / V): angle(I) = angle(V) - angle(S)
    ang = angle_ref - (cmath.phase(s_set) if s_set else 0.0)
    i1 = cmath.rect(mag, ang)
    if n_ph == 3:
        return np.array([i1, i1 * cmath.rect(1, -2 * math.pi / 3), i1 * cmath.rect(1, 2 * math.pi / 3)])
    return np.array([i1])


def ibr_voltage_for_frt(ibr: Ibr, v_terminals) -> tuple[float, float]:
    """(undervoltage-applicable, overvoltage-applicable) magnitudes in pu.

    Three-phase units see the lowest phase for undervoltage and the highest
    for overvoltage; single-phase units see their own phase for both.
    """
    mags = np.abs(np.atleast_1d(np.asarray(v_terminals, dtype=complex)))
    return float(mags.min()), float(mags.max())


def frt_step(
    curve: FrtCurve,
    state: FrtState,
    v_pu,
    f_hz: float,
    dt_s: float,
    t_now_s: float,
) -> FrtState:
    """Advance one unit's ride-through timers by ``dt_s``.

    ``v_pu`` is either one magnitude or an ``(under, over)`` pair from
    :func:`ibr_voltage_for_frt`. Returns a new state; the input is untouched.
    """
    if not state.online:
        return state
    v_uv, v_ov = (v_pu, v_pu) if np.isscalar(v_pu) else v_pu
    v_min, v_max, f_min, f_max = curve.continuous_region
    timers = dict(state.zone_timers)
    if v_min <= v_uv and v_ov <= v_max and f_min <= f_hz <= f_max:
        return FrtState(zone_timers={k: 0.0 for k in timers})

    observed = {"under_voltage": v_uv, "over_voltage": v_ov,
                "under_frequency": f_hz, "over_frequency": f_hz}
    tripped = None
    for zone_id, kind, (low, high, max_dur) in curve.zones():
        x = observed[kind]
        if low <= x < high:
            timers[zone_id] = timers.get(zone_id, 0.0) + dt_s
            if tripped is None and timers[zone_id] >= max_dur - _EPS_T:
                unit = "Hz" if kind.endswith("frequency") else "pu"
                tripped = f"{zone_id} at {x:.4f} {unit}"
    if tripped is not None:
        return FrtState(status="tripped", zone_timers=timers, trip_time_s=t_now_s, trip_cause=tripped)
    return FrtState(zone_timers=timers)


def regulator_control(
    regulators,
    taps: dict[str, dict[str, int]],
    voltage_of,
) -> tuple[dict[str, dict[str, int]], bool]:
    """One tap sweep. ``voltage_of(bus, phase)`` returns |V| in pu."""
    new = {}
    changed = False
    for reg in regulators:
        cur = dict(taps.get(reg.name, reg.tap_map()))
        lo = reg.band_center_pu - reg.band_width_pu / 2
        hi = reg.band_center_pu + reg.band_width_pu / 2
        for ph in reg.phases:
            v = voltage_of(reg.to_bus, ph)
            tap = cur[ph]
            if v < lo:
                tap = min(tap + 1, reg.tap_range)
            elif v > hi:
                tap = max(tap - 1, -reg.tap_range)
            if tap != cur[ph]:
                changed = True
                cur[ph] = tap
        new[reg.name] = cur
    return new, changed


def phase_list(phases) -> tuple[str, ...]:
    """Normalize ``"ab"`` / ``["a", "b"]`` to an ordered phase tuple."""
    out = tuple(p.lower() for p in phases)
    return tuple(p for p in PHASES if p in out) if len(set(out)) == len(out) else out
