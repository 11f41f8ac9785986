"""Phase-domain network representation.

Buses, branches and the source equivalent are plain dataclasses. All solver
math runs in per-unit on a single three-phase system base with phase-to-neutral
voltage bases (``base_kv_ll / sqrt(3)``), so a per-phase power in pu is the
physical per-phase power divided by ``s_base / 3``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import TYPE_CHECKING

import numpy as np
import scipy.sparse as sp

if TYPE_CHECKING:
    from .devices import Ibr, Regulator, ShuntCapacitor, ZipLoad

PHASES = ("a", "b", "c")
PHASE_INDEX = {"a": 0, "b": 1, "c": 2}

ALPHA = complex(-0.5, math.sqrt(3) / 2)  # 1 at 120 degrees
A_MATRIX = np.array(
    [[1, 1, 1], [1, ALPHA**2, ALPHA], [1, ALPHA, ALPHA**2]], dtype=complex
)
A_INV = np.linalg.inv(A_MATRIX)


class NetworkError(Exception):
    """Base class for network construction failures."""


class SingularNetwork(NetworkError):
    """Raised when some part of the network has no path to the source."""


class PhaseMismatch(NetworkError):
    """Raised when a fault or device names a phase the bus does not carry."""


@dataclass(frozen=True)
class Bus:
    id: str
    base_kv_ll: float
    phases: tuple[str, ...] = PHASES
    zone: str = "distribution"


@dataclass(frozen=True)
class LineBranch:
    from_bus: str
    to_bus: str
    length_km: float
    z1_per_km: complex
    z0_per_km: complex
    phases: tuple[str, ...] = PHASES
    name: str = ""


@dataclass(frozen=True)
class TransformerBranch:
    from_bus: str
    to_bus: str
    connection: str = "delta_yg_lag30"
    s_rated_mva: float = 10.0
    z_leak_pu: complex = 0.05j
    grounded: bool = True
    z_ground_pu: complex | None = None
    name: str = ""


@dataclass(frozen=True)
class SourceEquivalent:
    bus: str
    v_set_pu: float = 1.0
    angle_deg: float = 0.0
    z_internal_pu: complex = 0.001j

    def emf(self) -> np.ndarray:
        """Balanced positive-sequence internal EMF (a, b, c)."""
        base = self.v_set_pu * np.exp(1j * math.radians(self.angle_deg))
        return base * np.array([1, ALPHA**2, ALPHA])


@dataclass(frozen=True)
class FaultSpec:
    kind: str
    bus: str
    phases: tuple[str, ...]
    t_on_s: float = 0.5
    duration_s: float = 0.25
    y_fault_pu: float = 1e4

    @property
    def t_clear_s(self) -> float:
        return self.t_on_s + self.duration_s


FAULT_PHASE_COUNT = {"SL2G": 1, "DL2G": 2, "L2L": 2, "3L2G": 3}


@dataclass(frozen=True)
class NetworkModel:
    buses: tuple[Bus, ...]
    line_branches: tuple[LineBranch, ...] = ()
    transformer_branches: tuple[TransformerBranch, ...] = ()
    sources: tuple[SourceEquivalent, ...] = ()
    loads: tuple[ZipLoad, ...] = ()
    capacitors: tuple[ShuntCapacitor, ...] = ()
    regulators: tuple[Regulator, ...] = ()
    ibrs: tuple[Ibr, ...] = ()
    frt_curves: dict = field(default_factory=dict)
    s_base_mva: float = 10.0
    f_nominal_hz: float = 60.0
    name: str = ""
    feeder_head: str | None = None
    fault_locations: dict = field(default_factory=dict)

    def bus(self, bus_id: str) -> Bus:
        return self._bus_map()[bus_id]

    def _bus_map(self) -> dict[str, Bus]:
        # frozen dataclass: cache by hand
        cache = self.__dict__.get("_bus_cache")
        if cache is None:
            cache = {b.id: b for b in self.buses}
            object.__setattr__(self, "_bus_cache", cache)
        return cache

    def z_base(self, bus_id: str) -> float:
        return self.bus(bus_id).base_kv_ll**2 / self.s_base_mva

    @property
    def source(self) -> SourceEquivalent:
        return self.sources[0]

    def with_devices(self, **kwargs) -> NetworkModel:
        return replace(self, **kwargs)

    def node_index(self) -> dict[tuple[str, str], int]:
        index = {}
        for bus in self.buses:
            for ph in PHASES:
                if ph in bus.phases:
                    index[(bus.id, ph)] = len(index)
        return index


@dataclass
class YBus:
    """Sparse per-unit admittance matrix plus its (bus, phase) index map.

    ``source_current`` holds the Norton current of the source EMF, kept apart
    from the matrix so the passive part stays reciprocal.
    """

    matrix: sp.csc_matrix
    index: dict[tuple[str, str], int]
    source_current: np.ndarray
    passive: sp.csc_matrix | None = None

    @property
    def n(self) -> int:
        return self.matrix.shape[0]

    def nodes(self) -> list[tuple[str, str]]:
        return sorted(self.index, key=self.index.get)

    def rows(self, bus_id: str, phases) -> list[int]:
        return [self.index[(bus_id, ph)] for ph in phases]


# --------------------------------------------------------------------------
# symmetrical components

def to_sequence(v) -> np.ndarray:
    """(V_a, V_b, V_c) -> (V_0, V_1, V_2). Works on trailing axis of length 3."""
    v = np.asarray(v, dtype=complex)
    return v @ A_INV.T


def from_sequence(v012) -> np.ndarray:
    v012 = np.asarray(v012, dtype=complex)
    return v012 @ A_MATRIX.T


def seq_to_phase_impedance(z1: complex, z0: complex) -> np.ndarray:
    """Phase impedance matrix of a transposed line from its sequence values."""
    zs = (z0 + 2 * z1) / 3
    zm = (z0 - z1) / 3
    z = np.full((3, 3), zm, dtype=complex)
    np.fill_diagonal(z, zs)
    return z


# --------------------------------------------------------------------------
# admittance assembly

def line_admittance(net: NetworkModel, line: LineBranch) -> np.ndarray:
    z_abc = seq_to_phase_impedance(line.z1_per_km, line.z0_per_km) * line.length_km
    z_abc = z_abc / net.z_base(line.from_bus)
    sel = [PHASE_INDEX[p] for p in line.phases]
    return np.linalg.inv(z_abc[np.ix_(sel, sel)])


_SQ3 = math.sqrt(3)
# rows: LV windings a, b, c; columns: HV phases A, B, C.
# LV a sits across HV A-C so the LV set lags the HV set by 30 degrees.
_DELTA_LAG30 = np.array([[1, 0, -1], [-1, 1, 0], [0, -1, 1]]) / _SQ3


def transformer_admittance(net: NetworkModel, tr: TransformerBranch) -> np.ndarray:
    """6x6 nodal admittance [HV abc, LV abc] of a three-phase bank."""
    y = 1.0 / (tr.z_leak_pu * net.s_base_mva / tr.s_rated_mva)
    if tr.connection == "delta_yg_lag30":
        n_hv = _DELTA_LAG30
    elif tr.connection == "yg_yg":
        n_hv = np.eye(3)
    else:
        raise NetworkError(f"unknown transformer connection {tr.connection!r}")
    # winding voltage difference d = N_hv V_hv - (V_lv - V_n)
    n_full = np.hstack([n_hv, -np.eye(3), np.ones((3, 1))])
    y_full = y * (n_full.T @ n_full)
    if tr.grounded and tr.z_ground_pu is None:
        return y_full[:6, :6]
    y_g = 0.0 if not tr.grounded else 1.0 / (tr.z_ground_pu * net.s_base_mva / tr.s_rated_mva)
    y_full[6, 6] += y_g
    # Kron-reduce the LV neutral
    return y_full[:6, :6] - np.outer(y_full[:6, 6], y_full[6, :6]) / y_full[6, 6]


def regulator_admittance(net: NetworkModel, reg, taps: dict[str, int] | None = None) -> np.ndarray:
    """Per-phase wye-wye regulator: block diag over its phases, [from, to]."""
    k = len(reg.phases)
    y = 1.0 / reg.z_pu
    out = np.zeros((2 * k, 2 * k), dtype=complex)
    taps = taps if taps is not None else reg.tap_map()
    for i, ph in enumerate(reg.phases):
        r = reg.ratio(taps[ph])
        out[i, i] += r * r * y
        out[i, k + i] -= r * y
        out[k + i, i] -= r * y
        out[k + i, k + i] += y
    return out


def _check_connected(net: NetworkModel, index) -> None:
    adj: dict[str, set[str]] = {b.id: set() for b in net.buses}
    branches = [(l.from_bus, l.to_bus) for l in net.line_branches]
    branches += [(t.from_bus, t.to_bus) for t in net.transformer_branches]
    branches += [(r.from_bus, r.to_bus) for r in net.regulators]
    for f, t in branches:
        adj[f].add(t)
        adj[t].add(f)
    seen = set()
    stack = [s.bus for s in net.sources]
    while stack:
        b = stack.pop()
        if b in seen:
            continue
        seen.add(b)
        stack.extend(adj[b] - seen)
    missing = [b.id for b in net.buses if b.id not in seen]
    if missing:
        raise SingularNetwork(f"buses without a path to the source: {missing[:10]}")


def build_ybus(
    net: NetworkModel,
    *,
    taps: dict[str, dict[str, int]] | None = None,
    capacitors_on: bool = False,
    include_loads: bool = True,
) -> YBus:
    """Assemble the per-unit phase admittance matrix.

    ``taps`` maps regulator name to per-phase tap; when omitted the taps
    stored on each regulator are used. The constant-impedance share of every
    ZIP load is stamped on the diagonal; the rest is left to the solver.
    """
    if not net.sources:
        raise SingularNetwork("network has no source")
    index = net.node_index()
    _check_connected(net, index)
    n = len(index)
    rows: list[int] = []
    cols: list[int] = []
    vals: list[complex] = []

    def stamp(block, nodes):
        for i, ri in enumerate(nodes):
            for j, cj in enumerate(nodes):
                if block[i, j] != 0:
                    rows.append(ri)
                    cols.append(cj)
                    vals.append(block[i, j])

    for line in net.line_branches:
        y = line_admittance(net, line)
        k = len(line.phases)
        block = np.block([[y, -y], [-y, y]])
        nodes = [index[(line.from_bus, p)] for p in line.phases]
        nodes += [index[(line.to_bus, p)] for p in line.phases]
        assert block.shape == (2 * k, 2 * k)
        stamp(block, nodes)

    for tr in net.transformer_branches:
        block = transformer_admittance(net, tr)
        nodes = [index[(tr.from_bus, p)] for p in PHASES]
        nodes += [index[(tr.to_bus, p)] for p in PHASES]
        stamp(block, nodes)

    for reg in net.regulators:
        block = regulator_admittance(net, reg, None if taps is None else taps.get(reg.name))
        nodes = [index[(reg.from_bus, p)] for p in reg.phases]
        nodes += [index[(reg.to_bus, p)] for p in reg.phases]
        stamp(block, nodes)

    passive = sp.csc_matrix((vals, (rows, cols)), shape=(n, n), dtype=complex)

    src = net.source
    y_src = 1.0 / src.z_internal_pu
    src_rows = [index[(src.bus, p)] for p in PHASES]
    for r in src_rows:
        rows.append(r)
        cols.append(r)
        vals.append(y_src)
    source_current = np.zeros(n, dtype=complex)
    source_current[src_rows] = src.emf() * y_src

    s_phase = net.s_base_mva * 1000.0 / 3.0  # kVA per phase
    if include_loads:
        for load in net.loads:
            y_z = np.conj(load.s_nominal_kva) / s_phase * load.coeffs[0] / load.v_nominal_pu**2
            if y_z != 0:
                r = index[(load.bus, load.phase)]
                rows.append(r)
                cols.append(r)
                vals.append(y_z)
    if capacitors_on:
        for cap in net.capacitors:
            if not cap.enabled:
                continue
            for p in cap.phases:
                r = index[(cap.bus, p)]
                rows.append(r)
                cols.append(r)
                vals.append(1j * cap.q_rated_kvar / s_phase)

    matrix = sp.csc_matrix((vals, (rows, cols)), shape=(n, n), dtype=complex)
    return YBus(matrix=matrix, index=index, source_current=source_current, passive=passive)


def stamp_fault(y: YBus, f: FaultSpec, y_fault_pu: float | None = None) -> YBus:
    """Return a copy of ``y`` with the fault admittance added."""
    g = f.y_fault_pu if y_fault_pu is None else y_fault_pu
    try:
        rows = y.rows(f.bus, f.phases)
    except KeyError:
        raise PhaseMismatch(f"fault phases {f.phases} not all present at bus {f.bus!r}") from None
    add = sp.lil_matrix(y.matrix.shape, dtype=complex)
    if f.kind == "L2L":
        i, j = rows
        add[i, i] += g
        add[j, j] += g
        add[i, j] -= g
        add[j, i] -= g
    else:
        for r in rows:
            add[r, r] += g
    return replace(y, matrix=(y.matrix + add.tocsc()).tocsc())
