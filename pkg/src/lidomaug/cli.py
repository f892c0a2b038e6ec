"""Command-line surface: build world models, render and augment frames,
benchmark throughput, and inspect artifacts.

Diagnostics go to stderr; data and machine-readable reports (key=value
lines) go to stdout.  Exit codes: 0 success, 1 usage error, 2 data error.
Every command echoes enough of its sampled state (notably the seed) to be
reproduced exactly.
"""

from __future__ import annotations

import argparse
import os
import sys
from pathlib import Path

import numpy as np

from . import dataset_io, pipeline
from .distortion import MotionParams, distort
from .errors import DataFormatError, EngineError, SpecValidationError
from .mixer import mix, sample_sectors
from .renderer import extract_cloud, render
from .sensor_model import LidarConfig, load_sensor_config, preset, preset_names
from .world_model import LabeledFrame, build_world_model

SEED_ENV_VAR = "LIDOMAUG_SEED"


class _Parser(argparse.ArgumentParser):
    """argparse, but usage errors exit with status 1 (2 is for data errors)."""

    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(1)


def _range_pair(text):
    parts = [p for p in text.split(",") if p.strip()]
    if len(parts) != 2:
        raise argparse.ArgumentTypeError(f"expected low,high, got {text!r}")
    return (float(parts[0]), float(parts[1]))


def _int_list(text):
    return tuple(int(p) for p in text.split(",") if p.strip())


def _float_list(text):
    return tuple(float(p) for p in text.split(",") if p.strip())


def resolve_seed(explicit: int | None) -> int:
    """Explicit seed, else LIDOMAUG_SEED, else an entropy-derived one."""
    if explicit is not None:
        return explicit
    env = os.environ.get(SEED_ENV_VAR)
    if env is not None:
        try:
            return int(env)
        except ValueError:
            raise SpecValidationError(
                f"{SEED_ENV_VAR}={env!r} is not an integer", fields=["seed"])
    return int(np.random.SeedSequence().entropy % (1 << 63))


def _sensor_from_args(args) -> LidarConfig:
    if getattr(args, "sensor_file", None):
        return load_sensor_config(args.sensor_file)
    return preset(args.preset)


def _load_sequence(seq_dir: Path):
    scans_dir = seq_dir / "velodyne"
    labels_dir = seq_dir / "labels"
    poses_file = seq_dir / "poses.txt"
    problems = [str(p) for p in (scans_dir, poses_file) if not p.exists()]
    if problems:
        raise DataFormatError("missing sequence inputs: " + ", ".join(problems))
    scan_files = sorted(scans_dir.glob("*.bin"))
    if not scan_files:
        raise DataFormatError(f"no .bin scans under {scans_dir}")
    poses = dataset_io.read_poses(poses_file)
    if len(poses) < len(scan_files):
        raise DataFormatError(
            f"{len(scan_files)} scans but only {len(poses)} poses")
    frames = []
    for i, scan_path in enumerate(scan_files):
        cloud = dataset_io.read_scan(scan_path)
        label_path = labels_dir / (scan_path.stem + ".label")
        if label_path.exists():
            raw = dataset_io.read_labels(label_path, expected_count=len(cloud))
            labels = dataset_io.semantic_classes(raw)
        else:
            labels = np.zeros(len(cloud), np.uint16)
        frames.append(LabeledFrame(cloud, labels, poses[i], time_index=i))
    return frames


def _spec_from_args(args) -> pipeline.AugmentSpec:
    values = {}
    if getattr(args, "spec_file", None):
        values = pipeline.spec_from_text(
            Path(args.spec_file).read_text()).as_dict()
    flag_fields = (
        "horiz_res_choices", "channel_range", "f_up_range", "f_down_range",
        "yaw_range", "tx_range", "ty_range", "tz_range", "speed_kmh_range",
        "yaw_rate_range", "n_mix", "max_range_m", "spin_hz", "distort_mode",
        "workers",
    )
    for name in flag_fields:
        val = getattr(args, name, None)
        if val is not None:
            values[name] = val
    if getattr(args, "channel_range", None) is not None:
        values["channel_range"] = tuple(int(c) for c in args.channel_range)
    if getattr(args, "preset", None):
        values["fixed_preset"] = args.preset
    if getattr(args, "no_random_config", False) and not values.get("fixed_preset"):
        raise SpecValidationError(
            "--no-random-config requires --preset", fields=["fixed_preset"])
    if getattr(args, "no_resample_first", False):
        values["resample_first"] = False
    if getattr(args, "identity", False):
        for name in ("yaw_range", "tx_range", "ty_range", "tz_range",
                     "speed_kmh_range", "yaw_rate_range"):
            values[name] = (0.0, 0.0)
    values["seed"] = resolve_seed(getattr(args, "seed", None))
    return pipeline.spec_from_dict(values)


def _add_spec_flags(p):
    p.add_argument("--seed", type=int, default=None,
                   help=f"master seed (default: ${SEED_ENV_VAR} or random)")
    p.add_argument("--spec-file", help="key=value spec file setting defaults")
    p.add_argument("--horiz-res-choices", type=_int_list, dest="horiz_res_choices",
                   metavar="W1,W2,...")
    p.add_argument("--channel-range", type=_int_list, dest="channel_range",
                   metavar="LO,HI")
    p.add_argument("--f-up-range", type=_range_pair, dest="f_up_range",
                   metavar="LO,HI")
    p.add_argument("--f-down-range", type=_range_pair, dest="f_down_range",
                   metavar="LO,HI")
    p.add_argument("--yaw-range", type=_range_pair, dest="yaw_range",
                   metavar="LO,HI")
    p.add_argument("--tx-range", type=_range_pair, dest="tx_range",
                   metavar="LO,HI")
    p.add_argument("--ty-range", type=_range_pair, dest="ty_range",
                   metavar="LO,HI")
    p.add_argument("--tz-range", type=_range_pair, dest="tz_range",
                   metavar="LO,HI")
    p.add_argument("--speed-kmh-range", type=_range_pair,
                   dest="speed_kmh_range", metavar="LO,HI")
    p.add_argument("--yaw-rate-range", type=_range_pair,
                   dest="yaw_rate_range", metavar="LO,HI")
    p.add_argument("--n-mix", type=int, dest="n_mix")
    p.add_argument("--max-range-m", type=float, dest="max_range_m")
    p.add_argument("--spin-hz", type=float, dest="spin_hz")
    p.add_argument("--preset", choices=preset_names(),
                   help="fix the target sensor to this preset")
    p.add_argument("--no-random-config", action="store_true",
                   help="disable config sampling (requires --preset)")
    p.add_argument("--distort-mode", choices=("reproject", "range-shift"),
                   dest="distort_mode")
    p.add_argument("--no-resample-first", action="store_true",
                   help="apply travel adjustment before azimuth resampling")
    p.add_argument("--identity", action="store_true",
                   help="pin pose and motion sampling to zero")
    p.add_argument("--workers", type=int,
                   help="render worker threads (results identical to 1)")


def cmd_build_world(args) -> int:
    frames = _load_sequence(Path(args.sequence))
    tracks = dataset_io.read_box_tracks(args.tracks) if args.tracks else ()
    n = min(args.aggregate, len(frames))
    ref_frames = (list(range(0, len(frames), args.stride))
                  if args.stride else [args.frame])
    out_dir = Path(args.out)
    multi = len(ref_frames) > 1
    if multi:
        out_dir.mkdir(parents=True, exist_ok=True)
    for t in ref_frames:
        if not 0 <= t < len(frames):
            raise DataFormatError(f"reference frame {t} outside sequence")
        world = build_world_model(
            frames, t, n, tracks=tracks,
            dynamic_window=args.dynamic_window,
            dynamic_classes=frozenset(args.dynamic_classes or ()),
            vote=not args.no_vote,
        )
        path = out_dir / f"{t:06d}.lwmc" if multi else Path(args.out)
        dataset_io.cache_world(world, path)
        print(f"frame={t} frames_used={n} points={len(world)} "
              f"labeled_voxel_density={world.label_density():.3f} "
              f"cache={path}")
    return 0


def _load_worlds(paths):
    return [dataset_io.load_world(p) for p in paths]


def _out_base(prefix) -> Path:
    """Normalize --out to an extensionless path the suffixes hang off."""
    base = Path(prefix)
    return base.with_suffix("") if base.suffix else base


def _write_outputs(args, result) -> None:
    base = _out_base(args.out)
    base.parent.mkdir(parents=True, exist_ok=True)
    dataset_io.write_scan(result.cloud, base.with_suffix(".bin"))
    dataset_io.write_labels(result.cloud.labels.astype(np.uint32),
                            base.with_suffix(".label"))
    dataset_io.write_range_png(result.range_map, base.with_suffix(".png"))
    if args.ply:
        dataset_io.write_ply(result.cloud, base.with_suffix(".ply"))


def cmd_augment(args) -> int:
    if args.n_mix is None:
        args.n_mix = len(args.world)
    spec = _spec_from_args(args)
    worlds = _load_worlds(args.world)
    result = pipeline.augment(worlds, spec)
    _write_outputs(args, result)
    cfg = result.config
    print(f"seed={spec.seed}")
    print(f"config={cfg.channels_h}x{cfg.horiz_res_w} "
          f"points={len(result.cloud)} latency_ms={result.latency_ms:.3f}")
    return 0


def cmd_render(args) -> int:
    world = dataset_io.load_world(args.world)
    rmap = render(world, _sensor_from_args(args), workers=args.workers or 1)
    base = _out_base(args.out)
    dataset_io.write_range_png(rmap, base.with_suffix(".png"))
    if args.ply:
        dataset_io.write_ply(extract_cloud(rmap), base.with_suffix(".ply"))
    print(f"valid_pixels={rmap.num_valid} out={base.with_suffix('.png')}")
    return 0


def cmd_distort(args) -> int:
    world = dataset_io.load_world(args.world)
    config = _sensor_from_args(args)
    motion = MotionParams.from_kmh(args.speed_kmh, args.yaw_rate,
                                   config.spin_omega)
    rmap = distort(render(world, config), motion, mode=args.mode)
    base = _out_base(args.out)
    dataset_io.write_range_png(rmap, base.with_suffix(".png"))
    if args.ply:
        dataset_io.write_ply(extract_cloud(rmap), base.with_suffix(".ply"))
    print(f"speed_mps={motion.speed:.6g} yaw_rate={motion.yaw_rate:.6g} "
          f"valid_pixels={rmap.num_valid}")
    return 0


def cmd_mix(args) -> int:
    worlds = _load_worlds(args.world)
    if len(worlds) < 2:
        raise SpecValidationError("mix needs at least two --world caches")
    config = _sensor_from_args(args)
    maps = [render(w, config) for w in worlds]
    if args.cuts:
        bounds = [0.0, *sorted(args.cuts), 2.0 * np.pi]
        sectors = [(bounds[i], bounds[i + 1], i % len(maps))
                   for i in range(len(bounds) - 1)]
        seed = None
    else:
        seed = resolve_seed(args.seed)
        sectors = sample_sectors(
            pipeline.make_stream(seed, pipeline.STREAM_SECTORS), len(maps))
    mixed = mix(maps, sectors)
    base = _out_base(args.out)
    dataset_io.write_range_png(mixed, base.with_suffix(".png"))
    if args.ply:
        dataset_io.write_ply(extract_cloud(mixed), base.with_suffix(".ply"))
    if seed is not None:
        print(f"seed={seed}")
    print("sectors=" + ";".join(f"{s:.6f}:{e:.6f}:{i}" for s, e, i in sectors))
    return 0


def cmd_bench(args) -> int:
    if args.iters < 1:
        raise SpecValidationError("--iters must be >= 1")
    if args.n_mix is None:
        args.n_mix = len(args.world)
    spec = _spec_from_args(args)
    worlds = _load_worlds(args.world)
    pipeline.augment(worlds, spec)  # warm caches outside the timed loop
    lat = []
    for i in range(args.iters):
        result = pipeline.augment(worlds, spec.with_seed(spec.seed + i))
        lat.append(result.latency_ms)
    lat = np.array(lat)
    med = float(np.median(lat))
    cfg = result.config
    print(f"seed={spec.seed}")
    print(f"iters={args.iters} workers={spec.workers} n_mix={spec.n_mix}")
    print(f"world_points={sum(len(w) for w in worlds[:spec.n_mix])} "
          f"config={cfg.channels_h}x{cfg.horiz_res_w}")
    print(f"latency_ms_min={lat.min():.3f} latency_ms_median={med:.3f} "
          f"latency_ms_p99={np.percentile(lat, 99):.3f}")
    print(f"fps={1000.0 / med:.1f}")
    return 0


def cmd_inspect(args) -> int:
    path = Path(args.path)
    suffix = path.suffix.lower()
    if suffix == ".lwmc":
        world = dataset_io.load_world(path)
        labeled = int((world.labels != 0).sum())
        print(f"kind=world_cache points={len(world)} labeled={labeled} "
              f"voxels={len(world.voxel_uniq)} "
              f"reference_index={world.reference_index} "
              f"labeled_voxel_density={world.label_density():.3f}")
    elif suffix == ".bin":
        cloud = dataset_io.read_scan(path)
        r = np.linalg.norm(cloud.xyz, axis=1)
        print(f"kind=scan points={len(cloud)} "
              f"range_min={r.min(initial=0):.3f} range_max={r.max(initial=0):.3f}")
    elif suffix == ".label":
        raw = dataset_io.read_labels(path)
        classes = np.unique(dataset_io.semantic_classes(raw))
        print(f"kind=labels count={len(raw)} "
              f"classes={','.join(str(c) for c in classes)}")
    elif suffix == ".png":
        meters = dataset_io.read_range_png(path)
        valid = meters > 0
        print(f"kind=range_png shape={meters.shape[0]}x{meters.shape[1]} "
              f"valid={int(valid.sum())} "
              f"range_max={meters.max(initial=0):.3f}")
    elif suffix == ".ply":
        cloud = dataset_io.read_ply(path)
        print(f"kind=ply points={len(cloud)}")
    else:
        raise SpecValidationError(f"cannot inspect {suffix!r} files")
    return 0


def build_parser() -> _Parser:
    parser = _Parser(prog="lidomaug", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("build-world", help="aggregate a sequence into cached world models")
    p.add_argument("sequence", help="directory with velodyne/, labels/, poses.txt")
    p.add_argument("--out", required=True, help="cache file (or directory with --stride)")
    p.add_argument("--frame", type=int, default=0, help="reference frame index")
    p.add_argument("--stride", type=int, help="build a model every STRIDE frames")
    p.add_argument("--aggregate", type=int, default=40,
                   help="frames aggregated per model (default 40)")
    p.add_argument("--dynamic-tracks", dest="tracks",
                   help="dynamic object track file")
    p.add_argument("--dynamic-window", type=int, dest="dynamic_window",
                   nargs="?", const=5,
                   help="temporal window for dynamic classes when no tracks "
                        "exist (bare flag means 5 frames)")
    p.add_argument("--dynamic-classes", type=_int_list, dest="dynamic_classes",
                   metavar="ID1,ID2,...")
    p.add_argument("--no-vote", action="store_true",
                   help="skip label voting/propagation")
    p.set_defaults(func=cmd_build_world)

    p = sub.add_parser("augment", help="run the seeded augmentation pipeline")
    p.add_argument("--world", action="append", required=True,
                   help="world cache (repeat for n_mix sources)")
    p.add_argument("--out", required=True, help="output path prefix")
    p.add_argument("--ply", action="store_true", help="also write a PLY cloud")
    _add_spec_flags(p)
    p.set_defaults(func=cmd_augment)

    p = sub.add_parser("render", help="plain range-map render of a world cache")
    p.add_argument("--world", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--preset", choices=preset_names(), default="V64")
    p.add_argument("--sensor-file", help="key=value sensor description file")
    p.add_argument("--workers", type=int)
    p.add_argument("--ply", action="store_true")
    p.set_defaults(func=cmd_render)

    p = sub.add_parser("distort", help="render then apply motion distortion")
    p.add_argument("--world", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--preset", choices=preset_names(), default="V64")
    p.add_argument("--sensor-file")
    p.add_argument("--speed-kmh", type=float, default=0.0)
    p.add_argument("--yaw-rate", type=float, default=0.0)
    p.add_argument("--mode", choices=("reproject", "range-shift"),
                   default="reproject")
    p.add_argument("--ply", action="store_true")
    p.set_defaults(func=cmd_distort)

    p = sub.add_parser("mix", help="mix renders of several worlds by azimuth sector")
    p.add_argument("--world", action="append", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--preset", choices=preset_names(), default="V64")
    p.add_argument("--sensor-file")
    p.add_argument("--cuts", type=_float_list,
                   help="explicit cut angles in radians (else sampled)")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--ply", action="store_true")
    p.set_defaults(func=cmd_mix)

    p = sub.add_parser("bench", help="measure augmentation latency")
    p.add_argument("--world", action="append", required=True)
    p.add_argument("--iters", type=int, default=20)
    _add_spec_flags(p)
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("inspect", help="summarize a cache/scan/label/png/ply file")
    p.add_argument("path")
    p.set_defaults(func=cmd_inspect)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except SpecValidationError as exc:
        print(f"lidomaug: usage error: {exc}", file=sys.stderr)
        return 1
    except (DataFormatError, FileNotFoundError, PermissionError) as exc:
        print(f"lidomaug: data error: {exc}", file=sys.stderr)
        return 2
    except EngineError as exc:
        print(f"lidomaug: error: {exc}", file=sys.stderr)
        return 2
    except ValueError as exc:
        print(f"lidomaug: usage error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
