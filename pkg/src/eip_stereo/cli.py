"""Command-line driver: simulate, calibrate, solve, baseline, eval, profile."""
from __future__ import annotations

import argparse
import os
import sys

import numpy as np

from . import calib, io
from .circuit import simulate_stream
from .errors import ConfigurationError, EIPError
from .normal_solver import eventps_frame, pixel_profile, solve_pixelwise
from .scene import make_sphere_scene


def _load_config(path) -> io.RunConfig:
    return io.RunConfig.load(path)


def _base_dir(path) -> str:
    return os.path.dirname(os.path.abspath(path))


def cmd_default_config(args) -> int:
    text = io.RunConfig().to_text()
    if args.out:
        with open(args.out, "w") as f:
            f.write(text)
    else:
        sys.stdout.write(text)
    return 0


def cmd_simulate(args) -> int:
    cfg = _load_config(args.config)
    n = cfg.resolution
    th = cfg.pixel_thresholds(n, n, _base_dir(args.config))
    circuit = cfg.circuit_config(th)
    if args.ramp is not None:
        stream = calib.simulate_ramp_stream(n, n, args.ramp, cfg.cycles, circuit, period=cfg.period)
    else:
        scene = make_sphere_scene(n, cfg.scene, offset_light=cfg.offset_ratio)
        stream = simulate_stream(scene, cfg.trajectory(), cfg.cycles, circuit)
        if args.truth:
            io.write_pfm(args.truth, scene.normal_map)
    io.write_events(args.out, stream)
    print(f"wrote {len(stream)} events to {args.out}")
    return 0


def cmd_calibrate(args) -> int:
    stream = io.read_events(args.events)
    th = calib.estimate_thresholds(stream, args.k, args.cycles)
    io.write_thresholds(args.out, th)
    with open(f"{args.out}.calib", "w") as f:
        f.write(f"k = {args.k!r}\ncycles = {args.cycles}\n")
    ok = th.valid
    if ok.any():
        print(f"h_p median {np.median(th.h_p[ok]):.6f}, h_n median {np.median(th.h_n[ok]):.6f}, "
              f"{int((~ok).sum())} pixels without an estimate")
    else:
        print("no pixel produced events of both polarities")
    return 0


def _stream_and_thresholds(args):
    cfg = _load_config(args.config)
    stream = io.read_events(args.events)
    if args.thresholds:
        th = io.read_thresholds(args.thresholds)
    else:
        th = cfg.pixel_thresholds(stream.width, stream.height, _base_dir(args.config))
    if th.shape != (stream.height, stream.width):
        raise ConfigurationError("threshold maps do not match the event sensor size")
    return cfg, stream, th


def cmd_solve(args) -> int:
    cfg, stream, th = _stream_and_thresholds(args)
    res = solve_pixelwise(stream, th, cfg.trajectory(), cfg.solver_config(), cfg.average_cycles)
    os.makedirs(args.out_dir, exist_ok=True)
    io.write_pfm(os.path.join(args.out_dir, "normals.pfm"), res.normals)
    io.write_pfm(os.path.join(args.out_dir, "cost.pfm"), res.costs)
    io.write_pfm(os.path.join(args.out_dir, "labels.pfm"), res.labels.astype(np.float64))
    solved = int((res.labels >= 0).sum())
    print(f"solved {solved} pixels, {int((res.labels == -1).sum())} unsolved")
    return 0


def cmd_baseline(args) -> int:
    cfg, stream, th = _stream_and_thresholds(args)
    io.write_pfm(args.out, eventps_frame(stream, th, cfg.trajectory()))
    return 0


def cmd_eval(args) -> int:
    result = io.read_pfm(args.result)
    truth = io.read_pfm(args.truth)
    fg = (io.read_pfm(args.mask) > 0.5) if args.mask else np.linalg.norm(truth, axis=-1) > 0.5
    rep = io.evaluate_mae(result, truth, fg)
    os.makedirs(args.out_dir, exist_ok=True)
    io.write_pfm(os.path.join(args.out_dir, "error.pfm"), rep.error_map)
    with open(os.path.join(args.out_dir, "summary.txt"), "w") as f:
        f.write(rep.summary())
    sys.stdout.write(rep.summary())
    return 0


def cmd_profile(args) -> int:
    cfg, stream, th = _stream_and_thresholds(args)
    if not (0 <= args.x < stream.width and 0 <= args.y < stream.height):
        raise ConfigurationError(f"pixel ({args.x}, {args.y}) is outside the sensor")
    K = cfg.average_cycles
    if stream.n_cycles < K + 2:
        raise ConfigurationError(f"stream has {stream.n_cycles} cycles, need {K + 2}")
    hp, hn = th.at(args.x, args.y)
    if not (np.isfinite(hp) and np.isfinite(hn)):
        raise ConfigurationError(f"pixel ({args.x}, {args.y}) has no valid threshold")
    times, pols = stream.pixel_events().get((args.x, args.y), (np.zeros(0), np.zeros(0)))
    prof = pixel_profile(times, pols, hp, hn, cfg.period, stream.cycle_syncs[1:K + 1],
                         cfg.n_samples)
    text = prof.to_csv()
    if args.out:
        with open(args.out, "w") as f:
            f.write(text)
    else:
        sys.stdout.write(text)
    return 0


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="eip-stereo", description=__doc__)
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("default-config", help="print or write the default run config")
    p.add_argument("--out")
    p.set_defaults(func=cmd_default_config)

    p = sub.add_parser("simulate", help="render a scene preset (or a power ramp) to events")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True, help="event file (.txt text, .bin binary)")
    p.add_argument("--truth", help="write the ground-truth normal map here (PFM)")
    p.add_argument("--ramp", type=float, metavar="K",
                   help="simulate a flat target under a power ramp of ratio K instead")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("calibrate", help="estimate per-pixel thresholds from ramp events")
    p.add_argument("--events", required=True)
    p.add_argument("--k", type=float, required=True, help="power ratio of the ramp")
    p.add_argument("--cycles", type=int, required=True)
    p.add_argument("--out", required=True, help="output prefix for _hp.pfm/_hn.pfm")
    p.set_defaults(func=cmd_calibrate)

    for name, func, helptext in (("solve", cmd_solve, "recover normals from events"),
                                 ("baseline", cmd_baseline, "null-space baseline normals")):
        p = sub.add_parser(name, help=helptext)
        p.add_argument("--config", required=True)
        p.add_argument("--events", required=True)
        p.add_argument("--thresholds", help="threshold PFM prefix (overrides the config)")
        if name == "solve":
            p.add_argument("--out-dir", required=True)
        else:
            p.add_argument("--out", required=True)
        p.set_defaults(func=func)

    p = sub.add_parser("eval", help="angular error of a normal map against ground truth")
    p.add_argument("--result", required=True)
    p.add_argument("--truth", required=True)
    p.add_argument("--mask", help="foreground PFM (default: non-zero truth normals)")
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("profile", help="dump one pixel's averaged profile as CSV")
    p.add_argument("--config", required=True)
    p.add_argument("--events", required=True)
    p.add_argument("--x", type=int, required=True)
    p.add_argument("--y", type=int, required=True)
    p.add_argument("--thresholds")
    p.add_argument("--out")
    p.set_defaults(func=cmd_profile)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (EIPError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
