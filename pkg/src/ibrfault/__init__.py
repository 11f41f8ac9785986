"""Quasi-static unbalanced fault simulation of a transmission-distribution
network with inverter-based resources and ride-through trip logic."""

__version__ = "0.1.0"

from .devices import DEFAULT_FRT, FrtCurve, FrtState, Ibr, Regulator, ShuntCapacitor, ZipLoad  # noqa: E402
from .engine import Scenario, SimulationResult, SweepMatrix, apply_plr, run_scenario, run_sweep  # noqa: E402
from .ingest import load_network, load_scenario, reference_network_path  # noqa: E402
from .metrics import max_vuf_over_window, profile, trip_table, vuf  # noqa: E402
from .netmodel import FaultSpec, NetworkModel, build_ybus, stamp_fault  # noqa: E402
from .solver import SolveSettings, solve, solve_prefault  # noqa: E402

__all__ = [
    "DEFAULT_FRT", "FrtCurve", "FrtState", "Ibr", "Regulator", "ShuntCapacitor", "ZipLoad",
    "Scenario", "SimulationResult", "SweepMatrix", "apply_plr", "run_scenario", "run_sweep",
    "load_network", "load_scenario", "reference_network_path",
    "max_vuf_over_window", "profile", "trip_table", "vuf",
    "FaultSpec", "NetworkModel", "build_ybus", "stamp_fault",
    "SolveSettings", "solve", "solve_prefault",
]
