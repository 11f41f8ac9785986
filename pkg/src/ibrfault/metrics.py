"""Reported quantities: trip percentages, voltage unbalance, voltage profiles."""
from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass, field

import numpy as np

from .engine import CATEGORIES, SimulationResult
from .ingest import feeder_distances
from .netmodel import PHASES, to_sequence

VUF_LIMIT = 0.03
V1_MIN_PU = 1e-9


class TimeNotOnGrid(ValueError):
    pass


class UndefinedVuf(ArithmeticError):
    pass


def vuf(v) -> float:
    """Negative- to positive-sequence magnitude ratio of a phase triple."""
    _, v1, v2 = to_sequence(np.asarray(v, dtype=complex))
    if abs(v1) < V1_MIN_PU:
        raise UndefinedVuf(f"|V1| = {abs(v1):.3e} pu is too small for a VUF")
    return float(abs(v2) / abs(v1))


def vuf_array(v3: np.ndarray) -> np.ndarray:
    """Row-wise VUF of an (..., 3) array; NaN where |V1| is negligible."""
    seq = to_sequence(v3)
    v1 = np.abs(seq[..., 1])
    v2 = np.abs(seq[..., 2])
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.where(v1 >= V1_MIN_PU, v2 / v1, np.nan)


# --------------------------------------------------------------------------
# trip table

@dataclass(frozen=True)
class TripRow:
    scenario: str
    category: str
    n_total: int
    n_tripped: int

    @property
    def pct(self) -> float:
        return round(100.0 * self.n_tripped / self.n_total, 1) if self.n_total else 0.0


@dataclass
class TripTable:
    rows: list[TripRow] = field(default_factory=list)

    def get(self, scenario: str, category: str) -> TripRow:
        for r in self.rows:
            if r.scenario == scenario and r.category == category:
                return r
        raise KeyError((scenario, category))

    def pct(self, scenario: str, category: str) -> float:
        return self.get(scenario, category).pct

    def by_scenario(self, scenario: str) -> dict[str, float]:
        return {r.category: r.pct for r in self.rows if r.scenario == scenario}


def category_totals(network) -> Counter:
    totals = Counter({c: 0 for c in CATEGORIES})
    totals.update(i.category for i in network.ibrs)
    return totals


def trip_table(results) -> TripTable:
    """Count-based trip percentages per (scenario, category)."""
    if isinstance(results, SimulationResult):
        results = [results]
    table = TripTable()
    for res in results:
        totals = category_totals(res.network)
        tripped = Counter(t.category for t in res.trips)
        for cat in CATEGORIES:
            table.rows.append(TripRow(res.label, cat, totals[cat], tripped[cat]))
    return table


# --------------------------------------------------------------------------
# VUF

@dataclass
class VufReport:
    window_s: tuple[float, float]
    per_node: dict[str, float]  # NaN where undefined over the whole window
    limit: float = VUF_LIMIT

    @property
    def global_max(self) -> float:
        vals = [v for v in self.per_node.values() if not math.isnan(v)]
        return max(vals) if vals else math.nan

    @property
    def worst_node(self) -> str | None:
        vals = {k: v for k, v in self.per_node.items() if not math.isnan(v)}
        return max(vals, key=vals.get) if vals else None

    def exceeds_limit(self, node: str) -> bool:
        v = self.per_node[node]
        return not math.isnan(v) and v > self.limit


def three_phase_nodes(result: SimulationResult, include_transmission: bool = False) -> list[str]:
    net = result.network
    out = []
    for b in net.buses:
        if len(b.phases) != 3 or all((b.id, p) not in result.index for p in PHASES):
            continue
        if b.zone == "transmission" and not include_transmission:
            continue
        out.append(b.id)
    return out


def max_vuf_over_window(
    result: SimulationResult,
    window: tuple[float, float] | None = None,
    *,
    include_transmission: bool = False,
) -> VufReport:
    """Per-node maximum VUF over the grid steps inside ``window`` (inclusive).

    The default window is post-fault: from the first step after clearing (the
    step stamped at the clearing time still carries the fault) to the end.
    """
    times = result.times
    if window is None:
        window = (result.scenario.fault.t_clear_s + result.scenario.engine.dt_s, float(times[-1]))
    t1, t2 = window
    if t1 > t2:
        raise ValueError("window start after window end")
    eps = 1e-9
    steps = np.nonzero((times >= t1 - eps) & (times <= t2 + eps))[0]
    if len(steps) == 0:
        raise TimeNotOnGrid(f"window {window} contains no simulation steps")
    nodes = three_phase_nodes(result, include_transmission)
    rows = np.array([[result.index[(b, p)] for p in PHASES] for b in nodes], dtype=int).reshape(-1, 3)
    v = result.voltages[np.ix_(steps, rows.ravel())].reshape(len(steps), len(nodes), 3)
    vals = vuf_array(v)
    with np.errstate(all="ignore"):
        peak = np.where(np.all(np.isnan(vals), axis=0), np.nan, np.nanmax(np.nan_to_num(vals, nan=-1.0), axis=0))
    return VufReport((float(times[steps[0]]), float(times[steps[-1]])),
                     {b: float(x) for b, x in zip(nodes, peak)})


# --------------------------------------------------------------------------
# profiles

@dataclass(frozen=True)
class ProfilePoint:
    node: str
    phase: str
    v_pu: float
    angle_deg: float
    distance_km: float


@dataclass
class VoltageProfile:
    time_s: float
    points: list[ProfilePoint]

    def phase(self, phase: str) -> list[ProfilePoint]:
        return [p for p in self.points if p.phase == phase]

    def magnitude(self, node: str, phase: str) -> float:
        for p in self.points:
            if p.node == node and p.phase == phase:
                return p.v_pu
        raise KeyError((node, phase))


def node_order(network) -> list[tuple[str, float]]:
    """Distribution nodes sorted by line length from the feeder head."""
    dist = feeder_distances(network)
    nodes = [(b.id, dist[b.id]) for b in network.buses if b.zone == "distribution" and b.id in dist]
    return sorted(nodes, key=lambda x: (x[1], x[0]))


def profile(result: SimulationResult, t: float) -> VoltageProfile:
    k = result.step_of(t)
    pts = []
    for node, d in node_order(result.network):
        for ph in PHASES:
            row = result.index.get((node, ph))
            if row is None:
                continue
            v = complex(result.voltages[k, row])
            pts.append(ProfilePoint(node, ph, abs(v), math.degrees(math.atan2(v.imag, v.real)), d))
    return VoltageProfile(float(result.times[k]), pts)


def main_trunk(network, phase: str = "a") -> list[str]:
    """Longest three-phase path from the feeder head, by line length."""
    three = {b.id for b in network.buses if len(b.phases) == 3 and b.zone == "distribution"}
    adj: dict[str, list[tuple[str, float]]] = {}
    for l in network.line_branches:
        if l.from_bus in three and l.to_bus in three and len(l.phases) == 3:
            adj.setdefault(l.from_bus, []).append((l.to_bus, l.length_km))
            adj.setdefault(l.to_bus, []).append((l.from_bus, l.length_km))
    for r in network.regulators:
        if len(r.phases) == 3:
            adj.setdefault(r.from_bus, []).append((r.to_bus, 0.0))
            adj.setdefault(r.to_bus, []).append((r.from_bus, 0.0))
    head = network.feeder_head
    dist, parent = {head: 0.0}, {head: None}
    stack = [head]
    while stack:
        b = stack.pop()
        for nb, length in adj.get(b, ()):
            if nb not in dist:
                dist[nb] = dist[b] + length
                parent[nb] = b
                stack.append(nb)
    end = max(dist, key=lambda b: (dist[b], b))
    path = []
    while end is not None:
        path.append(end)
        end = parent[end]
    return path[::-1]


def feeder_end(network) -> str:
    """Three-phase node farthest from the feeder head."""
    return main_trunk(network)[-1]
