"""Fixed-point current-injection solver for the unbalanced phase network."""
from __future__ import annotations

import logging
import math
import warnings
from collections import deque
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse.linalg as spla

from .devices import V_CTRL_MIN_PU, V_FLOOR_PU, regulator_control
from .netmodel import ALPHA, PHASES, NetworkModel, YBus, build_ybus

logger = logging.getLogger(__name__)

_ROT = np.array([1, ALPHA**2, ALPHA])
MAX_RESTARTS = 3
STALL_ITERATIONS = 20


class SolverError(Exception):
    pass


class NotConverged(SolverError):
    def __init__(self, message, solution=None):
        super().__init__(message)
        self.solution = solution


class SingularMatrix(SolverError):
    pass


class TapOscillation(UserWarning):
    pass


@dataclass(frozen=True)
class SolveSettings:
    tol_pu: float = 1e-6
    max_iter: int = 100
    relaxation: float = 1.0

    def __post_init__(self):
        if not self.tol_pu > 0:
            raise ValueError("tol_pu must be positive")
        if self.max_iter < 1:
            raise ValueError("max_iter must be >= 1")
        if not 0 < self.relaxation <= 1:
            raise ValueError("relaxation must be in (0, 1]")


@dataclass
class NetworkSolution:
    v: np.ndarray
    index: dict[tuple[str, str], int]
    ibr_currents: dict[str, np.ndarray] = field(default_factory=dict)
    load_currents: np.ndarray | None = None
    iterations: int = 0
    residual: float = 0.0
    converged: bool = True

    def voltage(self, bus: str, phase: str) -> complex:
        return complex(self.v[self.index[(bus, phase)]])

    def bus_voltages(self, bus: str, phases=PHASES) -> np.ndarray:
        return np.array([self.v[self.index[(bus, p)]] for p in phases])


class DeviceSet:
    """Vectorized view of the voltage-dependent devices of a network.

    Built once per network; ``online`` masks are applied per solve.
    """

    def __init__(self, net: NetworkModel, index: dict[tuple[str, str], int]):
        self.kva_base = net.s_base_mva * 1000.0 / 3.0
        loads = net.loads
        self.load_rows = np.array([index[(l.bus, l.phase)] for l in loads], dtype=int)
        s = np.array([l.s_nominal_kva for l in loads], dtype=complex) / self.kva_base
        coeffs = np.array([l.coeffs for l in loads], dtype=float).reshape(-1, 3)
        vnom = np.array([l.v_nominal_pu for l in loads], dtype=float)
        self.load_si = s * coeffs[:, 1] / vnom
        self.load_sp = s * coeffs[:, 2]
        self.load_floor = self.load_si * V_FLOOR_PU + self.load_sp

        self.ibrs = net.ibrs
        self.ibr_pos = {ibr.id: k for k, ibr in enumerate(net.ibrs)}
        one = [k for k, ibr in enumerate(net.ibrs) if not ibr.three_phase]
        three = [k for k, ibr in enumerate(net.ibrs) if ibr.three_phase]
        self.one_idx = np.array(one, dtype=int)
        self.three_idx = np.array(three, dtype=int)
        self.one_rows = np.array(
            [index[(net.ibrs[k].bus, net.ibrs[k].phases[0])] for k in one], dtype=int)
        self.three_rows = np.array(
            [[index[(net.ibrs[k].bus, p)] for p in PHASES] for k in three], dtype=int).reshape(-1, 3)
        self.refresh(net.ibrs)

    def refresh(self, ibrs) -> None:
        """Re-read setpoints (after dispatch) without rebuilding indices."""
        s = np.array([complex(i.p_set_kw, i.q_set_kvar) / len(i.phases) for i in ibrs],
                     dtype=complex) / self.kva_base
        imax = np.array([i.i_limit_pu * i.s_rated_kva / len(i.phases) for i in ibrs],
                        dtype=float) / self.kva_base
        self.ibr_s = s
        self.ibr_imax = imax

    def load_current(self, v: np.ndarray) -> np.ndarray:
        """Per-load current of the I and P shares (Z share lives in Y)."""
        vl = v[self.load_rows]
        mag = np.abs(vl)
        safe = np.where(mag > 0, vl, 1.0)
        s = np.where(mag >= V_FLOOR_PU, self.load_si * mag + self.load_sp,
                     self.load_floor * (mag / V_FLOOR_PU) ** 2)
        return np.where(mag > 0, np.conj(s / safe), 0)

    def ibr_current(self, v: np.ndarray, online: np.ndarray, angle_ref=None):
        """Injected currents: (1-phase array, 3-phase (k,3) array)."""
        # single-phase units
        s = self.ibr_s[self.one_idx]
        imax = self.ibr_imax[self.one_idx]
        vc = v[self.one_rows]
        i1 = self._inject(vc, s, imax, None if angle_ref is None else angle_ref[self.one_idx])
        i1 = np.where(online[self.one_idx], i1, 0)
        # three-phase units, positive-sequence control voltage
        if len(self.three_idx):
            vt = v[self.three_rows]
            v1 = (vt @ np.conj(_ROT)) / 3.0
            s3 = self.ibr_s[self.three_idx]
            imax3 = self.ibr_imax[self.three_idx]
            ref3 = None if angle_ref is None else angle_ref[self.three_idx]
            ip = self._inject(v1, s3, imax3, ref3)
            ip = np.where(online[self.three_idx], ip, 0)
            i3 = ip[:, None] * _ROT[None, :]
        else:
            i3 = np.zeros((0, 3), dtype=complex)
        return i1, i3

    @staticmethod
    def _inject(vc, s, imax, ref):
        mag_v = np.abs(vc)
        ok = mag_v >= V_CTRL_MIN_PU
        mag = np.where(ok, np.abs(s) / np.where(ok, mag_v, 1.0), imax)
        mag = np.where(np.abs(s) == 0, 0.0, np.minimum(mag, imax))
        if ref is None:
            ref = np.where(ok, np.angle(vc), 0.0)
        ang = ref - np.angle(s)
        return mag * np.exp(1j * ang)

    def injections(self, v, online, angle_ref=None):
        """Total device current injected at every node."""
        inj = np.zeros_like(v)
        if len(self.load_rows):
            np.subtract.at(inj, self.load_rows, self.load_current(v))
        if len(self.ibrs):
            i1, i3 = self.ibr_current(v, online, angle_ref)
            np.add.at(inj, self.one_rows, i1)
            if len(i3):
                np.add.at(inj, self.three_rows.ravel(), i3.ravel())
        return inj

    def ibr_currents_by_id(self, v, online, angle_ref=None) -> dict[str, np.ndarray]:
        i1, i3 = self.ibr_current(v, online, angle_ref)
        out = {}
        for n, k in enumerate(self.one_idx):
            out[self.ibrs[k].id] = i1[n:n + 1]
        for n, k in enumerate(self.three_idx):
            out[self.ibrs[k].id] = i3[n]
        return out

    def control_magnitudes(self, v: np.ndarray) -> np.ndarray:
        mag = np.zeros(len(self.ibrs))
        if len(self.one_idx):
            mag[self.one_idx] = np.abs(v[self.one_rows])
        if len(self.three_idx):
            mag[self.three_idx] = np.abs((v[self.three_rows] @ np.conj(_ROT)) / 3.0)
        return mag

    def terminal_angles(self, v: np.ndarray) -> np.ndarray:
        """Angle each unit's controller would lock to at voltage ``v``."""
        ang = np.zeros(len(self.ibrs))
        if len(self.one_idx):
            ang[self.one_idx] = np.angle(v[self.one_rows])
        if len(self.three_idx):
            v1 = (v[self.three_rows] @ np.conj(_ROT)) / 3.0
            ang[self.three_idx] = np.angle(v1)
        return ang


def flat_start(net: NetworkModel, index) -> np.ndarray:
    """Balanced 1.0 pu start, rotated across phase-shifting transformers."""
    shift = {net.source.bus: math.radians(net.source.angle_deg)}
    adj: dict[str, list[tuple[str, float]]] = {}
    for l in net.line_branches:
        adj.setdefault(l.from_bus, []).append((l.to_bus, 0.0))
        adj.setdefault(l.to_bus, []).append((l.from_bus, 0.0))
    for r in net.regulators:
        adj.setdefault(r.from_bus, []).append((r.to_bus, 0.0))
        adj.setdefault(r.to_bus, []).append((r.from_bus, 0.0))
    for t in net.transformer_branches:
        d = -math.pi / 6 if t.connection == "delta_yg_lag30" else 0.0
        adj.setdefault(t.from_bus, []).append((t.to_bus, d))
        adj.setdefault(t.to_bus, []).append((t.from_bus, -d))
    queue = deque([net.source.bus])
    while queue:
        b = queue.popleft()
        for nb, d in adj.get(b, ()):
            if nb not in shift:
                shift[nb] = shift[b] + d
                queue.append(nb)
    v = np.ones(len(index), dtype=complex)
    for (bus, ph), r in index.items():
        v[r] = _ROT[PHASES.index(ph)] * np.exp(1j * shift.get(bus, 0.0))
    return v


class Factorized:
    """LU factors of a YBus, reused across iterations and timesteps."""

    def __init__(self, y: YBus):
        self.y = y
        try:
            self.lu = spla.splu(y.matrix.tocsc())
        except RuntimeError as exc:
            raise SingularMatrix(str(exc)) from exc

    def solve(self, rhs: np.ndarray) -> np.ndarray:
        return self.lu.solve(rhs)


def kcl_residual(y: YBus, v: np.ndarray, injections: np.ndarray) -> float:
    """max |Y V - I_source - I_devices| over all rows."""
    if y.n == 0:
        return 0.0
    r = y.matrix @ v - y.source_current - injections
    return float(np.max(np.abs(r)))


def solve(
    y: YBus,
    net: NetworkModel,
    online=None,
    settings: SolveSettings | None = None,
    *,
    v0: np.ndarray | None = None,
    devices: DeviceSet | None = None,
    factors: Factorized | None = None,
    angle_ref: np.ndarray | None = None,
    strict: bool = False,
) -> NetworkSolution:
    """Solve ``Y V = I_source + I_devices(V)`` by relaxed fixed-point iteration.

    ``online`` is a boolean mask over ``net.ibrs`` (or a dict id -> bool).
    With ``strict`` a non-converged solve raises :class:`NotConverged`;
    otherwise the best iterate comes back with ``converged=False``.
    """
    settings = settings or SolveSettings()
    devices = devices or DeviceSet(net, y.index)
    factors = factors or Factorized(y)
    online = _online_mask(net, online)
    start = flat_start(net, y.index) if v0 is None else np.array(v0, dtype=complex)

    rho = settings.relaxation
    sol = None
    for attempt in range(MAX_RESTARTS + 1):
        last = attempt == MAX_RESTARTS
        sol = _iterate(y, devices, factors, online, start, rho, settings, angle_ref,
                       allow_abort=not last)
        if sol is not None:
            break
        rho /= 2
        logger.debug("fixed point diverging or stalled, restarting with relaxation %.4g", rho)
    if not sol.converged and strict:
        raise NotConverged(f"no convergence after {sol.iterations} iterations "
                           f"(residual {sol.residual:.3e})", sol)
    return sol


def _online_mask(net, online) -> np.ndarray:
    if online is None:
        return np.ones(len(net.ibrs), dtype=bool)
    if isinstance(online, dict):
        return np.array([online.get(i.id, True) for i in net.ibrs], dtype=bool)
    return np.asarray(online, dtype=bool)


def _iterate(y, devices, factors, online, v, rho, settings, angle_ref, allow_abort=True):
    residuals = []
    best = None
    growth = 0
    it = 0
    converged = False
    for it in range(1, settings.max_iter + 1):
        inj = devices.injections(v, online, angle_ref)
        v_new = factors.solve(y.source_current + inj)
        v_next = (1 - rho) * v + rho * v_new
        dv = float(np.max(np.abs(v_next - v))) if len(v) else 0.0
        v = v_next
        res = kcl_residual(y, v, devices.injections(v, online, angle_ref))
        if best is None or res < best[1]:
            best = (v.copy(), res, it)
        if residuals and res > residuals[-1]:
            growth += 1
        else:
            growth = 0
        residuals.append(res)
        if dv < settings.tol_pu and res <= settings.tol_pu:
            converged = True
            break
        if allow_abort and (growth >= 3 or _stalled(residuals)):
            return None
    if not converged and allow_abort:
        return None
    if converged:
        v_out, res = v, residuals[-1]
    else:
        v_out, res = best[0], best[1]
    return NetworkSolution(
        v=v_out,
        index=y.index,
        ibr_currents=devices.ibr_currents_by_id(v_out, online, angle_ref),
        load_currents=devices.load_current(v_out) if len(devices.load_rows) else np.zeros(0),
        iterations=it,
        residual=res,
        converged=converged,
    )


def _stalled(residuals) -> bool:
    """Best residual failed to halve over the last STALL_ITERATIONS steps."""
    if len(residuals) <= STALL_ITERATIONS:
        return False
    return min(residuals[-STALL_ITERATIONS:]) > 0.5 * min(residuals[:-STALL_ITERATIONS])


@dataclass
class PrefaultResult:
    solution: NetworkSolution
    taps: dict[str, dict[str, int]]
    ybus: YBus
    sweeps: int = 0
    warnings: list[str] = field(default_factory=list)


def solve_prefault(
    net: NetworkModel,
    voltage_regulation: bool = False,
    settings: SolveSettings | None = None,
    online=None,
) -> PrefaultResult:
    """Pre-fault operating point, with tap control when regulation is on."""
    taps = {r.name: r.tap_map() for r in net.regulators}
    y = build_ybus(net, taps=taps, capacitors_on=voltage_regulation)
    sol = solve(y, net, online, settings)
    if not voltage_regulation or not net.regulators:
        return PrefaultResult(sol, taps, y)
    seen = {_tap_key(taps)}
    notes = []
    limit = 3 * max(r.tap_range for r in net.regulators)
    sweeps = 0
    for sweeps in range(1, limit + 1):
        new_taps, changed = regulator_control(net.regulators, taps, lambda b, p: abs(sol.voltage(b, p)))
        if not changed:
            break
        key = _tap_key(new_taps)
        if key in seen:
            msg = "regulator taps cycling; frozen at last state"
            warnings.warn(msg, TapOscillation, stacklevel=2)
            notes.append(msg)
            break
        seen.add(key)
        taps = new_taps
        y = build_ybus(net, taps=taps, capacitors_on=True)
        sol = solve(y, net, online, settings, v0=sol.v)
    return PrefaultResult(sol, taps, y, sweeps, notes)


def _tap_key(taps):
    return tuple(sorted((name, tuple(sorted(t.items()))) for name, t in taps.items()))
