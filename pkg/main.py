#!/usr/bin/env python3
"""
Event-based 6D object pose tracking toolkit
Command-line entry point: simulate, track, evaluate and debug commands
"""

import argparse
import contextlib
import logging
import os
import sys
from typing import List, Optional, Tuple

import numpy as np

from config import TrackerConfig
from core import Pose, TrackingError
from data_io import (read_events, read_intrinsics, read_mesh, read_trajectory, write_events,
                     write_intrinsics, write_mesh, write_pgm, write_trajectory)
from eros import ErosSurface
from evaluate import evaluate, write_series
from flow import RoiGrid
from render import dog_margin, render_depth, render_template, template_roi
from simulator import SCENES, SimConfig, build_scene, simulate
from tracker import run_detailed, write_debug_files

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2


class UsageError(Exception):
    """Bad command-line usage; maps to exit code 1"""


class CliParser(argparse.ArgumentParser):
    """ArgumentParser reporting usage errors with exit code 1"""

    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


@contextlib.contextmanager
def staged_outputs(*paths: str):
    """
    Yield temporary paths that replace the real ones only if the block succeeds

    Temporary names keep the extension so image writers pick the right format.
    """
    staged = []
    for path in paths:
        directory, name = os.path.split(os.path.abspath(path))
        staged.append(os.path.join(directory, f".partial-{name}"))
    try:
        yield staged
    except BaseException:
        for temp in staged:
            if os.path.exists(temp):
                os.remove(temp)
        raise
    for temp, path in zip(staged, paths):
        os.replace(temp, path)


def load_config(path: Optional[str]) -> TrackerConfig:
    return TrackerConfig.from_file(path) if path else TrackerConfig()


def parse_init_pose(value: str) -> Tuple[float, Pose, Optional[float]]:
    """
    Initial pose from `t,tx,ty,tz,qw,qx,qy,qz` or a ground-truth trajectory file

    Returns:
        (t0, pose, last ground-truth time or None)
    """
    if os.path.isfile(value):
        trajectory = read_trajectory(value)
        if not trajectory:
            raise TrackingError(f"{value}: trajectory is empty")
        return trajectory[0].t, trajectory[0].pose, trajectory[-1].t
    try:
        numbers = [float(part) for part in value.split(',')]
    except ValueError:
        raise UsageError(f"--init-pose expects 8 comma-separated numbers or a file, got {value!r}") from None
    if len(numbers) != 8:
        raise UsageError(f"--init-pose expects 8 numbers (t,tx,ty,tz,qw,qx,qy,qz), got {len(numbers)}")
    if abs(np.linalg.norm(numbers[4:]) - 1.0) > 0.01:
        raise UsageError("--init-pose quaternion is not unit")
    return numbers[0], Pose.from_array(numbers[1:]), None


def parse_pose(value: str) -> Pose:
    try:
        numbers = [float(part) for part in value.split(',')]
    except ValueError:
        raise UsageError(f"--pose expects 7 comma-separated numbers, got {value!r}") from None
    if len(numbers) != 7:
        raise UsageError(f"--pose expects 7 numbers (tx,ty,tz,qw,qx,qy,qz), got {len(numbers)}")
    return Pose.from_array(numbers)


def cmd_simulate(args) -> int:
    mesh = read_mesh(args.mesh)
    trajectory = read_trajectory(args.trajectory)
    K = read_intrinsics(args.intrinsics)
    sim_config = SimConfig(dt=args.dt, noise_rate=args.noise_rate, jitter=args.jitter, seed=args.seed)
    events, ground_truth = simulate(mesh, trajectory, K, sim_config)
    with staged_outputs(args.out_events, args.out_gt) as (events_path, gt_path):
        write_events(events, events_path)
        write_trajectory(ground_truth, gt_path)
    print(f"[SUCCESS] Simulated {len(events)} events and {len(ground_truth)} ground-truth poses")
    return EXIT_OK


def cmd_track(args) -> int:
    config = load_config(args.config)
    t0, initial_pose, gt_end = parse_init_pose(args.init_pose)
    K = read_intrinsics(args.intrinsics)
    mesh = read_mesh(args.mesh)
    events = read_events(args.events, K.width, K.height, microseconds=args.microseconds)
    end_time = args.end_time if args.end_time is not None else gt_end
    poses, records = run_detailed(events, mesh, K, initial_pose, config, t0, end_time)
    with staged_outputs(args.out) as (out_path,):
        write_trajectory(poses, out_path)
    if args.debug_dir:
        write_debug_files(records, args.debug_dir)
    blind = sum(r.blind for r in records)
    print(f"[SUCCESS] Tracked {len(records)} cycles ({blind} blind), wrote {args.out}")
    return EXIT_OK


def cmd_evaluate(args) -> int:
    estimate = read_trajectory(args.est)
    ground_truth = read_trajectory(args.gt)
    report = evaluate(estimate, ground_truth, args.period, args.track_log)
    with staged_outputs(args.out) as (out_path,):
        write_series(report, out_path)
    sys.stdout.write(report.summary())
    print(f"[SUCCESS] Wrote per-cycle errors to {args.out}")
    return EXIT_OK


def cmd_flow(args) -> int:
    config = load_config(args.config)
    K = read_intrinsics(args.intrinsics)
    events = read_events(args.events, K.width, K.height, microseconds=args.microseconds)
    grid = RoiGrid.from_config(config, K.width, K.height)
    rows: List[str] = []
    if len(events):
        t = float(events.t[0])
        previous = t - config.period
        while previous < events.t[-1]:
            for flow in grid.step(events.between(previous, t), t):
                rows.append(f"{flow.t:.9g},{flow.u:.4f},{flow.v:.4f},{flow.fu:.6g},{flow.fv:.6g},{flow.support}")
            previous, t = t, t + config.period
    with staged_outputs(args.out) as (out_path,):
        with open(out_path, 'w') as handle:
            handle.write("t,u,v,fu,fv,support\n")
            handle.writelines(row + "\n" for row in rows)
    print(f"[SUCCESS] Wrote {len(rows)} flow vectors to {args.out}")
    return EXIT_OK


def cmd_render(args) -> int:
    config = load_config(args.config)
    pose = parse_pose(args.pose)
    K = read_intrinsics(args.intrinsics)
    mesh = read_mesh(args.mesh)
    depth = render_depth(mesh, pose, K).depth
    surface = np.isfinite(depth)
    image = np.zeros(depth.shape)
    if surface.any():
        near, far = float(depth[surface].min()), float(depth[surface].max())
        # nearest surface white, farthest 20% gray, background black
        image[surface] = 1.0 - 0.8 * (depth[surface] - near) / max(far - near, 1e-9)
    roi = template_roi(mesh, pose, K, config.roi_dilation, dog_margin(config.dog_sigma2))
    template = render_template(mesh, pose, K, roi, config.dog_sigma1, config.dog_sigma2,
                               config.crease_angle_deg, config.depth_jump)
    with staged_outputs(args.out_depth, args.out_template) as (depth_path, template_path):
        write_pgm(depth_path, image, 0.0, 1.0)
        write_pgm(template_path, template.values, -1.0, 1.0)
    print(f"[SUCCESS] Rendered depth ({int(surface.sum())} surface pixels) "
          f"and template {template.values.shape[1]}x{template.values.shape[0]}")
    return EXIT_OK


def cmd_eros(args) -> int:
    config = load_config(args.config)
    K = read_intrinsics(args.intrinsics)
    events = read_events(args.events, K.width, K.height, microseconds=args.microseconds)
    surface = ErosSurface(K.width, K.height, config.eros_kernel, config.eros_lambda)
    upto = int(np.searchsorted(events.t, args.time, side='right')) if args.time is not None else len(events)
    surface.update_batch(events.select(slice(0, upto)))
    with staged_outputs(args.out) as (out_path,):
        write_pgm(out_path, surface.values, 0.0, 1.0)
    print(f"[SUCCESS] Wrote EROS surface after {upto} events to {args.out}")
    return EXIT_OK


def cmd_scene(args) -> int:
    mesh, trajectory, K = build_scene(args.name, args.duration)
    os.makedirs(args.out_dir, exist_ok=True)
    paths = [os.path.join(args.out_dir, name) for name in ('mesh.obj', 'intrinsics.txt', 'trajectory.csv')]
    with staged_outputs(*paths) as (mesh_path, intrinsics_path, trajectory_path):
        write_mesh(mesh, mesh_path)
        write_intrinsics(K, intrinsics_path)
        write_trajectory(trajectory, trajectory_path)
    print(f"[SUCCESS] Wrote scene '{args.name}' to {args.out_dir}")
    return EXIT_OK


def build_parser() -> CliParser:
    parser = CliParser(prog="main.py", description="Event-based 6D object pose tracking")
    parser.add_argument('--verbose', action='store_true', help='Log per-cycle detail')
    commands = parser.add_subparsers(dest='command', required=True)

    p = commands.add_parser('simulate', help='Generate synthetic events and ground truth')
    p.add_argument('--mesh', required=True, help='OBJ mesh (triangles)')
    p.add_argument('--trajectory', required=True, help='Object trajectory CSV')
    p.add_argument('--intrinsics', required=True, help='Intrinsics key = value file')
    p.add_argument('--out-events', required=True, help='Event CSV to write')
    p.add_argument('--out-gt', required=True, help='Ground-truth trajectory CSV to write')
    p.add_argument('--noise-rate', type=float, default=0.0, help='Noise events per second')
    p.add_argument('--jitter', type=float, default=0.0, help='Timestamp jitter std in seconds')
    p.add_argument('--seed', type=int, default=0, help='Random seed')
    p.add_argument('--dt', type=float, default=0.0005, help='Frame step in seconds')
    p.set_defaults(handler=cmd_simulate)

    p = commands.add_parser('track', help='Track an object through an event stream')
    p.add_argument('--events', required=True, help='Event CSV')
    p.add_argument('--mesh', required=True, help='OBJ mesh (triangles)')
    p.add_argument('--intrinsics', required=True, help='Intrinsics key = value file')
    p.add_argument('--init-pose', required=True, help='t,tx,ty,tz,qw,qx,qy,qz or a ground-truth CSV')
    p.add_argument('--out', required=True, help='Estimated trajectory CSV to write')
    p.add_argument('--config', help='Tracker configuration file')
    p.add_argument('--debug-dir', help='Directory for per-cycle debug CSVs')
    p.add_argument('--end-time', type=float, help='Track until this time')
    p.add_argument('--microseconds', action='store_true', help='Events are `t_us x y {0,1}`')
    p.set_defaults(handler=cmd_track)

    p = commands.add_parser('evaluate', help='Compare a trajectory against ground truth')
    p.add_argument('--est', required=True, help='Estimated trajectory CSV')
    p.add_argument('--gt', required=True, help='Ground-truth trajectory CSV')
    p.add_argument('--out', required=True, help='Per-cycle error CSV to write')
    p.add_argument('--period', type=float, default=0.002, help='Tracker period in seconds')
    p.add_argument('--track-log', help='cycles.csv from track --debug-dir')
    p.set_defaults(handler=cmd_evaluate)

    p = commands.add_parser('flow', help='Dump event optical flow vectors')
    p.add_argument('--events', required=True, help='Event CSV')
    p.add_argument('--intrinsics', required=True, help='Intrinsics key = value file')
    p.add_argument('--out', required=True, help='Flow CSV to write')
    p.add_argument('--config', help='Tracker configuration file')
    p.add_argument('--microseconds', action='store_true', help='Events are `t_us x y {0,1}`')
    p.set_defaults(handler=cmd_flow)

    p = commands.add_parser('render', help='Render depth and template images at a pose')
    p.add_argument('--mesh', required=True, help='OBJ mesh (triangles)')
    p.add_argument('--intrinsics', required=True, help='Intrinsics key = value file')
    p.add_argument('--pose', required=True, help='tx,ty,tz,qw,qx,qy,qz')
    p.add_argument('--out-depth', required=True, help='Depth PGM to write')
    p.add_argument('--out-template', required=True, help='Template PGM to write')
    p.add_argument('--config', help='Tracker configuration file')
    p.set_defaults(handler=cmd_render)

    p = commands.add_parser('eros', help='Dump the EROS surface at a time')
    p.add_argument('--events', required=True, help='Event CSV')
    p.add_argument('--intrinsics', required=True, help='Intrinsics key = value file')
    p.add_argument('--out', required=True, help='PGM to write')
    p.add_argument('--time', type=float, help='Apply events up to this time (default: all)')
    p.add_argument('--config', help='Tracker configuration file')
    p.add_argument('--microseconds', action='store_true', help='Events are `t_us x y {0,1}`')
    p.set_defaults(handler=cmd_eros)

    p = commands.add_parser('scene', help='Write a desk-scale cube scene')
    p.add_argument('--name', required=True, choices=SCENES, help='Scene motion')
    p.add_argument('--out-dir', required=True, help='Directory for mesh, intrinsics and trajectory')
    p.add_argument('--duration', type=float, default=2.0, help='Scene length in seconds')
    p.set_defaults(handler=cmd_scene)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    """Run one command and return its exit code"""
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as e:
        print(e, file=sys.stderr)
        return EXIT_USAGE
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO)
    try:
        return args.handler(args)
    except UsageError as e:
        print(f"[FAILED] {e}", file=sys.stderr)
        return EXIT_USAGE
    except (TrackingError, OSError, ValueError) as e:
        logger.error(f"{args.command} failed: {e}")
        print(f"[FAILED] {e}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    exit(main())
