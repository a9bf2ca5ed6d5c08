"""Command line entry point: simulate, track, evaluate, sweep and replay.

Every command writes ``manifest.json`` next to its outputs. ``replay`` re-runs
a command from such a manifest and reproduces its data files byte for byte.

Exit codes: 0 success, 2 usage or input error, 3 tracking failed on more than
half of the frames, 4 numerical failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
import time
from importlib import metadata
from pathlib import Path

import numpy as np

from .errors import EvtrackError, NumericalFailure
from .evaluation import LAMBDA_GRID, SweepRow, Trajectory, ate, write_sweep_csv
from .events import EventStream, parse_events, write_events
from .geometry import CameraIntrinsics
from .representations import RepresentationConfig, TimeSurfaceState, render_time_surface, write_pgm
from .simulator import SCENES, SequenceConfig, simulate_sequence
from .tracker import FrameRecord, Representation, SequenceResult, TrackerConfig, track_sequence, trigger_times

logger = logging.getLogger("evtrack")

EXIT_OK = 0
EXIT_INPUT = 2
EXIT_TRACKING = 3
EXIT_NUMERICAL = 4


class InputError(Exception):
    """Bad user input detected by the CLI itself."""


def _version() -> str:
    try:
        return metadata.version("artifact")
    except metadata.PackageNotFoundError:
        return "unknown"


# ---------------------------------------------------------------- file helpers

def write_map(points: np.ndarray, path: Path) -> None:
    np.savetxt(path, np.asarray(points).reshape(-1, 3), fmt="%.9f", header="X Y Z (world frame, m)")


def read_map(path: Path) -> np.ndarray:
    try:
        pts = np.loadtxt(path, ndmin=2, comments="#")
    except ValueError as exc:
        raise InputError(f"{path}: {exc}") from None
    if pts.size == 0:
        raise InputError(f"{path}: map is empty")
    if pts.shape[1] != 3 or not np.all(np.isfinite(pts)):
        raise InputError(f"{path}: expected finite 'X Y Z' rows")
    return pts


def write_manifest(out: Path, command: str, config: dict, artifacts: list[str], timings: dict) -> None:
    manifest = {
        "command": command,
        "version": _version(),
        "config": config,
        "seeds": {k: v for k, v in config.items() if "seed" in k},
        "artifacts": sorted(artifacts),
        "timings_s": {k: round(v, 6) for k, v in timings.items()},
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")


def _config_of(args: argparse.Namespace) -> dict:
    skip = {"func", "config", "verbose"}
    return {k: v for k, v in vars(args).items() if k not in skip}


# ---------------------------------------------------------------- commands

def cmd_simulate(args) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    pauses = tuple(_parse_pause(p) for p in args.pause or ())
    cfg = SequenceConfig(
        scene=args.scene, motion=args.motion, duration=args.duration, seed=args.seed,
        pauses=pauses, plane_depth=args.plane_depth, contrast=args.contrast,
    )
    t0 = time.perf_counter()
    seq = simulate_sequence(cfg)
    t1 = time.perf_counter()
    write_events(seq.events, out / "events.txt")
    Trajectory(seq.ground_truth.times, tuple(seq.ground_truth.poses_wc)).write(out / "gt_poses.txt")
    write_map(seq.map_points, out / "map.txt")
    seq.camera.to_file(out / "calib.txt")
    t2 = time.perf_counter()
    write_manifest(out, "simulate", _config_of(args), ["events.txt", "gt_poses.txt", "map.txt", "calib.txt"],
                   {"simulate": t1 - t0, "write": t2 - t1})
    print(f"{len(seq.events)} events, {len(seq.map_points)} map points -> {out}")
    return EXIT_OK


def _parse_pause(text: str) -> tuple[float, float]:
    try:
        a, b = (float(v) for v in text.split(":"))
    except ValueError:
        raise InputError(f"pause must be 'start:end' in seconds, got {text!r}") from None
    if not 0 <= a < b:
        raise InputError(f"pause interval {text!r} is empty or negative")
    return a, b


def _load_inputs(args):
    for name in ("events", "map", "calib"):
        if not Path(getattr(args, name)).is_file():
            raise InputError(f"--{name}: no such file {getattr(args, name)}")
    K = CameraIntrinsics.from_file(args.calib)
    stream = parse_events(args.events, K.resolution)
    if len(stream) == 0:
        raise InputError(f"{args.events}: no events")
    return stream, read_map(Path(args.map)), K


def _configs(args, repr_name: str | None = None, lambda_th: float | None = None):
    rep_cfg = RepresentationConfig(delta_ms=args.delta, em_event_count=args.em_events, ts_period_ms=args.ts_period)
    cfg = TrackerConfig(
        representation=Representation((repr_name or args.repr).upper()),
        lambda_th=args.lambda_th if lambda_th is None else lambda_th,
        em_event_count=args.em_events,
    )
    return cfg, rep_cfg


def _track(stream: EventStream, points, K, cfg, rep_cfg) -> SequenceResult:
    times = trigger_times(stream, rep_cfg.ts_period_us, warmup_us=int(round(rep_cfg.delta_us)))
    if len(times) == 0:
        raise InputError("event stream shorter than one tracking period")
    return track_sequence(stream, points, K, cfg, rep_cfg, times=times)


def write_metrics(records: list[FrameRecord], path: Path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(FrameRecord.CSV_HEADER)
        for rec in records:
            w.writerow(rec.csv_row())


def dump_frames(stream: EventStream, times, rep_cfg: RepresentationConfig, directory: Path) -> None:
    directory.mkdir(parents=True, exist_ok=True)
    state = TimeSurfaceState(stream.width, stream.height)
    t_prev = int(stream.t[0]) - 1
    for t in times:
        state.update(stream.events_in_window(t_prev, int(t)))
        t_prev = int(t)
        write_pgm(render_time_surface(state, int(t), rep_cfg), directory / f"ts_{int(t):012d}.pgm")


def cmd_track(args) -> int:
    out = Path(args.out)
    t0 = time.perf_counter()
    stream, points, K = _load_inputs(args)
    cfg, rep_cfg = _configs(args)
    t1 = time.perf_counter()
    result = _track(stream, points, K, cfg, rep_cfg)
    t2 = time.perf_counter()
    out.mkdir(parents=True, exist_ok=True)
    Trajectory.from_result(result).write(out / "trajectory.txt")
    write_metrics(result.records, out / "metrics.csv")
    artifacts = ["trajectory.txt", "metrics.csv"]
    if args.dump_frames:
        dump_frames(stream, result.times, rep_cfg, out / "frames")
        artifacts.append("frames/")
    write_manifest(out, "track", _config_of(args), artifacts, {"load": t1 - t0, "track": t2 - t1})
    print(f"{len(result.records)} frames, failed {result.failure_fraction:.1%}, EM used {result.em_fraction:.1%}")
    if result.failure_fraction > 0.5:
        print("error: tracking failed on more than half of the frames", file=sys.stderr)
        return EXIT_TRACKING
    return EXIT_OK


def cmd_evaluate(args) -> int:
    for name in ("est", "gt"):
        if not Path(getattr(args, name)).is_file():
            raise InputError(f"--{name}: no such file {getattr(args, name)}")
    est = Trajectory.read(args.est)
    gt = Trajectory.read(args.gt)
    report = ate(est, gt, int(round(args.max_dt * 1e3)))
    print(f"mean ATE translation: {report.mean_cm:.4f} cm over {report.matched} pairs ({report.dropped} dropped)")
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        with open(out / "ate.csv", "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(("mean_ate_cm", "matched", "dropped"))
            w.writerow((f"{report.mean_cm:.6f}", report.matched, report.dropped))
        write_manifest(out, "evaluate", _config_of(args), ["ate.csv"], {})
    return EXIT_OK


def _parse_grid(text: str) -> list[float]:
    try:
        grid = [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise InputError(f"--grid must be a comma-separated list of numbers, got {text!r}") from None
    if not grid or any(v < 0 for v in grid):
        raise InputError("--grid needs at least one non-negative threshold")
    return grid


def cmd_sweep(args) -> int:
    out = Path(args.out)
    grid = _parse_grid(args.grid)
    stream, points, K = _load_inputs(args)
    if not Path(args.gt).is_file():
        raise InputError(f"--gt: no such file {args.gt}")
    gt = Trajectory.read(args.gt)
    rows, timings = [], {}
    for lam in grid:
        cfg, rep_cfg = _configs(args, "tsem", lam)
        t0 = time.perf_counter()
        result = _track(stream, points, K, cfg, rep_cfg)
        timings[f"lambda_{lam:g}"] = time.perf_counter() - t0
        report = ate(Trajectory.from_result(result), gt, int(round(args.max_dt * 1e3)))
        rows.append(SweepRow(lam, report.mean_cm, result.em_fraction, 1))
        print(",".join(rows[-1].csv_row()))
    out.mkdir(parents=True, exist_ok=True)
    write_sweep_csv(rows, out / "sweep.csv")
    write_manifest(out, "sweep", _config_of(args), ["sweep.csv"], timings)
    return EXIT_OK


def cmd_replay(args) -> int:
    path = Path(args.manifest)
    if path.is_dir():
        path = path / "manifest.json"
    try:
        manifest = json.loads(path.read_text())
        command = manifest["command"]
        config = dict(manifest["config"])
    except (OSError, ValueError, KeyError) as exc:
        raise InputError(f"{path}: not a readable manifest ({exc})") from None
    if command not in COMMANDS or command == "replay":
        raise InputError(f"{path}: cannot replay command {command!r}")
    if args.out:
        config["out"] = args.out
    ns = argparse.Namespace(**config)
    return COMMANDS[command](ns)


COMMANDS = {
    "simulate": cmd_simulate,
    "track": cmd_track,
    "evaluate": cmd_evaluate,
    "sweep": cmd_sweep,
    "replay": cmd_replay,
}


# ---------------------------------------------------------------- parser

def _add_track_flags(p: argparse.ArgumentParser, with_repr: bool = True) -> None:
    p.add_argument("--events", required=True, help="event file 't_sec x y p'")
    p.add_argument("--map", required=True, help="map file 'X Y Z' per line")
    p.add_argument("--calib", required=True, help="intrinsics 'fx fy cx cy width height'")
    if with_repr:
        p.add_argument("--repr", choices=("ts", "em", "tsem"), default="ts")
    p.add_argument("--em-events", type=int, default=4000, help="events per event map")
    p.add_argument("--lambda-th", type=float, default=31.0, help="TSEM switching threshold")
    p.add_argument("--ts-period", type=float, default=10.0, help="tracking period (ms)")
    p.add_argument("--delta", type=float, default=30.0, help="time-surface decay (ms)")
    p.add_argument("--out", required=True)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="evtrack", description="Event-camera pose tracking against a known map.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="generate a synthetic sequence")
    p.add_argument("--scene", choices=SCENES, default="checkerboard")
    p.add_argument("--motion", choices=("planar", "6dof"), default="planar")
    p.add_argument("--duration", type=float, default=2.0, help="seconds")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--plane-depth", type=float, default=SequenceConfig.plane_depth)
    p.add_argument("--contrast", type=float, default=SequenceConfig.contrast, help="contrast threshold C")
    p.add_argument("--pause", action="append", metavar="START:END", help="static interval, seconds (repeatable)")
    p.add_argument("--out", required=True)

    p = sub.add_parser("track", help="track a recorded or simulated sequence")
    _add_track_flags(p)
    p.add_argument("--dump-frames", action="store_true", help="also write time surfaces as PGM")

    p = sub.add_parser("evaluate", help="mean ATE of an estimated trajectory")
    p.add_argument("--est", required=True)
    p.add_argument("--gt", required=True)
    p.add_argument("--max-dt", type=float, default=5.0, help="association tolerance (ms)")
    p.add_argument("--out", help="directory for ate.csv and a manifest")

    p = sub.add_parser("sweep", help="TSEM over a grid of switching thresholds")
    p.add_argument("--grid", default=",".join(f"{v:g}" for v in LAMBDA_GRID))
    p.add_argument("--gt", required=True, help="ground-truth trajectory for the ATE column")
    p.add_argument("--max-dt", type=float, default=5.0, help="association tolerance (ms)")
    _add_track_flags(p, with_repr=False)

    p = sub.add_parser("replay", help="re-run a command from its manifest")
    p.add_argument("manifest", help="manifest.json or the directory holding it")
    p.add_argument("--out", help="write to this directory instead of the recorded one")

    for name, sp in sub.choices.items():
        sp.add_argument("--config", help="flat key=value file; flags take precedence")
        sp.set_defaults(func=COMMANDS[name])
    return parser


def read_config_file(path: str) -> dict[str, str]:
    values = {}
    try:
        lines = Path(path).read_text().splitlines()
    except OSError as exc:
        raise InputError(f"--config: {exc}") from None
    for lineno, raw in enumerate(lines, start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise InputError(f"{path}:{lineno}: expected key=value")
        key, value = (s.strip() for s in line.split("=", 1))
        values[key.replace("-", "_")] = value
    return values


def _prescan(argv: list[str]) -> tuple[str | None, str | None]:
    """Command name and ``--config`` value, found before argparse runs."""
    command = next((a for a in argv if not a.startswith("-")), None)
    config = None
    for i, a in enumerate(argv):
        if a == "--config" and i + 1 < len(argv):
            config = argv[i + 1]
        elif a.startswith("--config="):
            config = a.split("=", 1)[1]
    return command, config


def _apply_config(parser: argparse.ArgumentParser, argv: list[str]) -> argparse.Namespace:
    """Parse ``argv``; values from ``--config`` fill in whatever flags left unset."""
    command, config = _prescan(argv)
    subs = parser._subparsers._group_actions[0].choices  # noqa: SLF001
    if config and command in subs:
        sub = subs[command]
        actions = {a.dest: a for a in sub._actions}  # noqa: SLF001
        defaults = {}
        for key, text in read_config_file(config).items():
            action = actions.get(key)
            if action is None or key in ("help", "config"):
                raise InputError(f"--config: unknown key {key!r} for '{command}'")
            if isinstance(action, argparse._StoreTrueAction):  # noqa: SLF001
                value = text.lower() in ("1", "true", "yes", "on")
            elif isinstance(action, argparse._AppendAction):  # noqa: SLF001
                value = [v.strip() for v in text.split(",") if v.strip()]
            else:
                try:
                    value = action.type(text) if action.type else text
                except ValueError:
                    raise InputError(f"--config: bad value for {key}: {text!r}") from None
                if action.choices is not None and value not in action.choices:
                    raise InputError(f"--config: {key} must be one of {sorted(action.choices)}")
            defaults[key] = value
            action.required = False
        sub.set_defaults(**defaults)
    return parser.parse_args(argv)


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    argv = list(sys.argv[1:] if argv is None else argv)
    try:
        args = _apply_config(parser, argv)
    except SystemExit as exc:  # argparse usage errors
        return EXIT_INPUT if exc.code else EXIT_OK
    except InputError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except NumericalFailure as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except (InputError, EvtrackError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
