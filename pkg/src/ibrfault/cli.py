"""Command-line front end.

    ibrfault simulate --scenario sc.json --out results/
    ibrfault sweep --scenario sc.json --kinds all --locations all --plrs 0.5,0.5vr,1.0,3.0 --out sweep/
    ibrfault validate --network net.json

Exit codes: 0 success, 1 invalid input, 2 solver trouble (outputs still written).
"""
from __future__ import annotations

import argparse
import logging
import re
import sys
from dataclasses import replace
from pathlib import Path

from . import report
from .engine import (
    DEFAULT_FAULT_PHASES,
    SweepMatrix,
    cell_scenario,
    run_scenario,
    run_sweep,
)
from .ingest import IngestError, ParseDiagnostic, load_network, load_scenario, place_rooftops, validate_cross
from .solver import SolverError

logger = logging.getLogger("ibrfault")

EXIT_OK, EXIT_INVALID, EXIT_SOLVER = 0, 1, 2
ALL_KINDS = tuple(DEFAULT_FAULT_PHASES)
ALL_LOCATIONS = ("GTF", "PCC", "SHORT", "MEDIUM", "FAR")


def _print_diagnostics(diags, source="") -> None:
    for d in diags:
        prefix = f"{source}: " if source else ""
        print(f"{prefix}{d}", file=sys.stderr)


def _float_list(text: str) -> list[float]:
    return [float(x) for x in text.split(",") if x.strip()]


def parse_plrs(text: str, vr_default: bool = False) -> list[tuple[float, bool]]:
    """'0.5,0.5vr,1.0,3.0' -> [(0.5, False), (0.5, True), (1.0, False), (3.0, False)]."""
    out = []
    for tok in text.split(","):
        tok = tok.strip().lower()
        if not tok:
            continue
        m = re.fullmatch(r"([0-9]*\.?[0-9]+(?:e[-+]?\d+)?)(%?)(vr)?", tok)
        if not m:
            raise argparse.ArgumentTypeError(f"bad PLR entry {tok!r}")
        val = float(m.group(1)) / (100.0 if m.group(2) else 1.0)
        out.append((val, bool(m.group(3)) or vr_default))
    return out


def _choices(text: str, universe) -> tuple[str, ...]:
    if text.strip().lower() == "all":
        return tuple(universe)
    return tuple(x.strip() for x in text.split(",") if x.strip())


def _load(args):
    """Scenario with CLI overrides applied; raises IngestError."""
    network = load_network(args.network) if args.network else None
    sc = load_scenario(args.scenario, network=network)
    if args.network:
        sc = replace(sc, network_path=str(args.network))
    if args.seed is not None:
        roofs = [i for i in sc.network.ibrs if i.kind == "rooftop_pv"]
        if roofs:
            net = place_rooftops(sc.network, count=len(roofs), total_kva=sum(i.s_rated_kva for i in roofs),
                                 seed=args.seed, i_limit_pu=roofs[0].i_limit_pu)
            sc = replace(sc, network=net)
    if args.dt is not None:
        if not args.dt > 0:
            raise IngestError([ParseDiagnostic("error", "--dt", "must be > 0")])
        sc = replace(sc, engine=replace(sc.engine, dt_s=args.dt))
    if getattr(args, "vr", False):
        sc = replace(sc, voltage_regulation=True)
    if args.profile_times:
        sc = replace(sc, profile_times_s=tuple(_float_list(args.profile_times)))
    return sc


def _snap(times, sc):
    dt = sc.engine.dt_s
    return [round(t / dt) * dt for t in times]


def cmd_simulate(args) -> int:
    try:
        sc = _load(args)
    except IngestError as exc:
        _print_diagnostics(exc.diagnostics, exc.source)
        return EXIT_INVALID
    out = Path(args.out or sc.output_dir or "results")
    try:
        result = run_scenario(sc)
    except (SolverError, RuntimeError) as exc:
        print(f"error: simulation failed: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    times = _snap(sc.profile_times_s, sc) if sc.profile_times_s else None
    try:
        paths = report.write_result(result, out, times)
    except Exception as exc:  # e.g. profile time off the grid
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    if args.plots:
        paths += _plots(result, out, times)
    inputs = [args.scenario, sc.network_path]
    paths.append(report.write_manifest(out / "manifest.json", inputs, [result.label], paths,
                                       {result.label: round(result.wall_time_s, 3)}))
    for w in result.warnings:
        print(f"warning: {w}", file=sys.stderr)
    if not result.converged:
        print(f"error: {result.label}: some steps did not converge (see summary.json)", file=sys.stderr)
        return EXIT_SOLVER
    print(f"{result.label}: {len(result.trips)} trips, outputs in {out}")
    return EXIT_OK


def _plots(result, out: Path, times) -> list[Path]:
    from . import plotting

    times = times or report.default_profile_times(result)
    return [plotting.plot_profiles(result, times, out / "profile.png"),
            plotting.plot_vuf(result, out / "vuf.png")]


def _cell_dir(label: str) -> str:
    return re.sub(r"[^A-Za-z0-9_.-]", "", label.replace("%", "pct"))


def cmd_sweep(args) -> int:
    try:
        base = _load(args)
        plrs = parse_plrs(args.plrs, vr_default=args.vr)
    except IngestError as exc:
        _print_diagnostics(exc.diagnostics, exc.source)
        return EXIT_INVALID
    except argparse.ArgumentTypeError as exc:
        print(f"error: --plrs: {exc}", file=sys.stderr)
        return EXIT_INVALID
    kinds = _choices(args.kinds, ALL_KINDS)
    locations = _choices(args.locations, ALL_LOCATIONS)
    diags = []
    for k in kinds:
        if k not in ALL_KINDS:
            diags.append(ParseDiagnostic("error", "--kinds", f"unknown fault kind {k!r}"))
    for loc in locations:
        probe = cell_scenario(base, kinds[0] if kinds and kinds[0] in ALL_KINDS else "3L2G", loc, 0.0, False)
        diags += [d for d in validate_cross(base.network, probe)
                  if d.severity == "error" and d.path == "fault.bus"]
    if diags:
        _print_diagnostics(diags)
        return EXIT_INVALID
    for plr, vr in plrs:
        probe = replace(base, plr=plr)
        for d in validate_cross(base.network, probe):
            if d.severity == "warning" and d.path == "plr":
                print(f"warning: plr {plr:g}: {d.message}", file=sys.stderr)

    matrix = SweepMatrix(kinds, locations, tuple(plrs))
    out = Path(args.out or base.output_dir or "sweep")
    out.mkdir(parents=True, exist_ok=True)
    cells = run_sweep(base, matrix, jobs=args.jobs)
    outputs, wall, labels = [], {}, []
    for c in cells:
        if c.result is None:
            print(f"error: {c.kind}/{c.location}/{c.plr:g}: {c.error}", file=sys.stderr)
            continue
        cdir = out / _cell_dir(c.result.label)
        times = _snap(base.profile_times_s, base) if base.profile_times_s else None
        outputs += report.write_result(c.result, cdir, times)
        if args.plots:
            outputs += _plots(c.result, cdir, times)
        labels.append(c.result.label)
        wall[c.result.label] = round(c.result.wall_time_s, 3)
    outputs.append(report.write_trip_table(cells, out / "trip_table.csv"))
    if args.plots and labels:
        from . import plotting

        outputs.append(plotting.plot_trip_table(cells, out / "trip_table.png"))
    inputs = [args.scenario, base.network_path]
    report.write_manifest(out / "manifest.json", inputs, labels, outputs, wall)
    failed = [c for c in cells if not c.ok]
    print(f"{len(cells)} cells, {len(failed)} failed, outputs in {out}")
    return EXIT_OK if not failed else EXIT_SOLVER


def cmd_validate(args) -> int:
    path = args.network or args.path
    if path is None:
        print("error: validate needs --network", file=sys.stderr)
        return EXIT_INVALID
    try:
        net = load_network(path)
    except IngestError as exc:
        _print_diagnostics(exc.diagnostics, exc.source)
        return EXIT_INVALID
    roofs = sum(1 for i in net.ibrs if not i.three_phase)
    print(f"{path}: ok ({len(net.buses)} buses, {len(net.ibrs)} inverters, {roofs} single-phase)")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="ibrfault", description="Quasi-static T&D fault and inverter ride-through simulator")
    ap.add_argument("-v", "--verbose", action="count", default=0)
    sub = ap.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--scenario", required=True, help="scenario JSON file")
        p.add_argument("--network", help="network JSON file (overrides the scenario's network_path)")
        p.add_argument("--out", help="output directory")
        p.add_argument("--dt", type=float, help="time step in seconds")
        p.add_argument("--seed", type=int, help="re-place rooftop PV with this seed")
        p.add_argument("--profile-times", help="comma-separated snapshot times in seconds")
        p.add_argument("--plots", action="store_true", help="also render PNG figures next to the CSVs")

    p = sub.add_parser("simulate", help="run one scenario")
    common(p)
    p.add_argument("--vr", action="store_true", help="enable voltage regulation")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("sweep", help="run a fault kind x location x PLR matrix")
    common(p)
    p.add_argument("--kinds", default="all", help="fault kinds or 'all'")
    p.add_argument("--locations", default="all", help="location names / bus ids or 'all'")
    p.add_argument("--plrs", default="0.5,0.5vr,1.0,3.0", help="PLR cases; suffix 'vr' enables regulation")
    p.add_argument("--vr", action="store_true", help="enable regulation for every PLR case")
    p.add_argument("--jobs", type=int, default=1, help="parallel worker processes")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("validate", help="check a network file")
    p.add_argument("path", nargs="?", help="network JSON file")
    p.add_argument("--network", help="network JSON file")
    p.set_defaults(func=cmd_validate)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    return args.func(args)


if __name__ == "__main__":
    raise SystemExit(main())
