"""Command line entry point: run scenarios, list presets, emit oracle curves.

Exit codes: 0 on success, 1 when the engine fails (partial outputs are
kept and a TRUNCATED marker is written), 2 for invalid input.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import sys
import time
from pathlib import Path

from . import __version__
from .config import ConfigError, ScenarioConfig, load_config, parse_config, serialize_config
from .dynamics import RunResult, SimulationError, run
from .geometry import write_contours_csv, write_contours_json
from .oracle import solve_circle
from .physchem import PRESETS as DRUG_PRESETS
from .physchem import get_preset
from .presets import PRESETS, get_scenario
from .sampling import write_radii_csv

SCHEMA_VERSION = 1
EXIT_OK, EXIT_FAILED, EXIT_USAGE = 0, 1, 2

log = logging.getLogger("lsdissolve")


def _cell(value) -> str:
    if isinstance(value, float):
        return repr(value)
    return str(value)


def write_csv(path: Path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_cell(x) for x in row])


def write_outputs(result: RunResult, config: ScenarioConfig, out: Path) -> list[str]:
    """Write the CSV and contour files of a (possibly partial) run."""
    out.mkdir(parents=True, exist_ok=True)
    write_csv(out / "timeseries.csv", RunResult.TIMESERIES_HEADER, result.timeseries)
    write_csv(out / "particles.csv", RunResult.PARTICLE_HEADER, result.particles)
    write_csv(out / "trajectory.csv", RunResult.TRAJECTORY_HEADER, result.trajectory)
    files = ["timeseries.csv", "particles.csv", "trajectory.csv"]
    if result.snapshots:
        write_contours_csv(out / "contours.csv", result.snapshots)
        write_contours_json(out / "contours.json", result.snapshots)
        files += ["contours.csv", "contours.json"]
    if config.sampler is not None:
        write_radii_csv(out / "radii.csv", [r * 1e6 for r in config.sampler.radii()])
        files.append("radii.csv")
    return files


def run_scenario(config: ScenarioConfig, out: str | Path, jobs: int = 1) -> int:
    """Run ``config`` and write every artifact under ``out``; returns the exit code."""
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    marker = out / "TRUNCATED"
    if marker.exists():
        marker.unlink()
    manifest = {
        "schema_version": SCHEMA_VERSION,
        "version": __version__,
        "name": config.name,
        "config": serialize_config(config),
        "seed": config.sampler.seed if config.sampler is not None else None,
        "jobs": jobs,
        "columns": {
            "timeseries.csv": list(RunResult.TIMESERIES_HEADER),
            "particles.csv": list(RunResult.PARTICLE_HEADER),
            "trajectory.csv": list(RunResult.TRAJECTORY_HEADER),
        },
    }
    log.info("running %s to t = %g s", config.name, config.t_end)
    start = time.perf_counter()
    code = EXIT_OK
    try:
        result = run(config, jobs=jobs)
        manifest["status"] = "complete"
    except SimulationError as exc:
        log.error("simulation failed: %s", exc)
        result = exc.partial if exc.partial is not None else RunResult()
        manifest["status"] = "truncated"
        manifest["error"] = str(exc)
        marker.write_text(f"{exc}\n")
        code = EXIT_FAILED
    manifest["wall_time_s"] = time.perf_counter() - start
    manifest["steps"] = result.steps
    manifest["max_mass_residual"] = result.max_mass_residual
    manifest["regime_switches"] = [{"t": t, "regime": r} for t, r in result.switches]
    manifest["files"] = write_outputs(result, config, out)
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2) + "\n")
    log.info("%s: %d steps in %.1f s, outputs in %s", manifest["status"], result.steps,
             manifest["wall_time_s"], out)
    return code


def config_from_manifest(path: str | Path) -> ScenarioConfig:
    data = json.loads(Path(path).read_text())
    return parse_config(data["config"], source=str(path))


# ---------------------------------------------------------------------------
# argument handling


def _positive_float(text: str) -> float:
    value = float(text)
    if not (math.isfinite(value) and value > 0):
        raise argparse.ArgumentTypeError(f"expected a positive number, got {text!r}")
    return value


def _seed(text: str) -> int:
    value = int(text)
    if not 0 <= value < 2**64:
        raise argparse.ArgumentTypeError(f"seed must be an unsigned 64-bit integer, got {text!r}")
    return value


def _jobs(text: str) -> int:
    value = int(text)
    if value < 1:
        raise argparse.ArgumentTypeError(f"--jobs must be >= 1, got {text!r}")
    return value


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="lsdissolve", description="Level-set drug particle dissolution simulator.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="run a scenario")
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--config", help="scenario file")
    src.add_argument("--preset", help="built-in scenario name (see 'presets list')")
    src.add_argument("--manifest", help="rerun the scenario recorded in a manifest.json")
    p.add_argument("--out", help="output directory (default: config 'out' or ./runs/<name>)")
    p.add_argument("--dx", type=_positive_float, help="grid spacing in micrometres")
    p.add_argument("--cfl", type=_positive_float, help="CFL ratio in (0, 1]")
    p.add_argument("--t-end", type=_positive_float, help="final time in seconds")
    p.add_argument("--seed", type=_seed, help="sampler seed")
    p.add_argument("--jobs", type=_jobs, default=1, help="parallel particle workers")
    p.add_argument("--snapshot-every", type=_positive_float, help="contour snapshot interval in seconds")

    p = sub.add_parser("presets", help="list or show built-in scenarios")
    psub = p.add_subparsers(dest="action", required=True)
    psub.add_parser("list", help="names and descriptions")
    show = psub.add_parser("show", help="print a preset in config-file form")
    show.add_argument("name")

    p = sub.add_parser("oracle", help="reference trajectory of one circle (RK3)")
    p.add_argument("--drug", required=True, choices=sorted(DRUG_PRESETS))
    p.add_argument("--r0", type=_positive_float, required=True, help="initial radius in micrometres")
    p.add_argument("--vplus", type=_positive_float, required=True, help="V_ext over the initial particle area")
    p.add_argument("--t-end", type=_positive_float, default=1000.0, help="final time in seconds")
    p.add_argument("--dt", type=_positive_float, default=0.01, help="RK3 step in seconds")
    p.add_argument("--out", help="CSV path (default: stdout)")
    return parser


def _cmd_run(args) -> int:
    try:
        if args.config:
            config = load_config(args.config)
        elif args.manifest:
            config = config_from_manifest(args.manifest)
        else:
            config = get_scenario(args.preset)
        config = config.with_overrides(
            dx=args.dx * 1e-6 if args.dx is not None else None,
            cfl=args.cfl, t_end=args.t_end, seed=args.seed, snapshot_every=args.snapshot_every,
        )
    except (ConfigError, KeyError, ValueError, OSError) as exc:
        print(f"lsdissolve: {exc}", file=sys.stderr)
        return EXIT_USAGE
    out = args.out or config.out or str(Path("runs") / config.name)
    return run_scenario(config, out, jobs=args.jobs)


def _cmd_presets(args) -> int:
    if args.action == "list":
        width = max(len(n) for n in PRESETS)
        for name, preset in PRESETS.items():
            print(f"{name:<{width}}  {preset.description}")
        return EXIT_OK
    try:
        print(serialize_config(get_scenario(args.name)), end="")
    except KeyError as exc:
        print(f"lsdissolve: {exc.args[0]}", file=sys.stderr)
        return EXIT_USAGE
    return EXIT_OK


def _cmd_oracle(args) -> int:
    drug = get_preset(args.drug)
    R0 = args.r0 * 1e-6
    traj = solve_circle(R0, drug, args.vplus * math.pi * R0**2, args.t_end, args.dt)
    if args.out:
        traj.write_csv(args.out)
    else:
        w = csv.writer(sys.stdout, lineterminator="\n")
        w.writerow(RunResult.TRAJECTORY_HEADER)
        for row in zip(traj.t, traj.R, traj.C_b, traj.C_s, traj.regime):
            w.writerow([_cell(float(x)) for x in row[:4]] + [row[4]])
    return EXIT_OK


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    if args.command == "run":
        return _cmd_run(args)
    if args.command == "presets":
        return _cmd_presets(args)
    return _cmd_oracle(args)


if __name__ == "__main__":
    sys.exit(main())
