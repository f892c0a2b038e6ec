"""On-demand augmentation: sample a sensor, poses and motions, render,
distort, mix, and extract — all deterministically from one 64-bit seed.

Randomness uses the counter-based Philox generator with one independent
stream per sampled quantity (target config, per-source pose, per-source
motion, mix sectors), each derived from the master seed through a
SeedSequence spawn key.  Adding a sampler therefore never perturbs the
draws of existing ones, and identical seeds give byte-identical outputs.
"""

from __future__ import annotations

import math
import numbers
import time
from dataclasses import dataclass, fields, replace

import numpy as np

from .distortion import distort, sample_motion
from .errors import SpecValidationError
from .mixer import mix, sample_sectors
from .renderer import extract_cloud, render
from .sensor_model import LidarConfig, RangeMap, preset, preset_names
from .world_model import Pose, PointCloud

# Spawn-key ids of the per-quantity generator streams.
STREAM_CONFIG = 0
STREAM_POSE = 1
STREAM_MOTION = 2
STREAM_SECTORS = 3


def make_stream(seed: int, stream: int, source: int | None = None):
    """Philox generator for one named sampling stream of a master seed."""
    key = (stream,) if source is None else (stream, source)
    return np.random.Generator(
        np.random.Philox(np.random.SeedSequence(seed, spawn_key=key))
    )


@dataclass(frozen=True)
class AugmentSpec:
    """All sampling ranges and engine knobs of one augmentation policy.

    Defaults give horizontal resolution drawn from {1024, 2048}, channel
    count uniform on [16, 128], vertical field of view sampled with the top
    in [0, pi/12) and the bottom in [-pi/6, 0), yaw in ±pi/6, translation
    within ±1 m / ±0.5 m / ±0.1 m (x/y/z), speed 0-60 km/h and yaw rate
    ±pi/8 rad/s, mixing two sources.  A zero-width range pins its quantity.
    """

    seed: int = 0
    horiz_res_choices: tuple = (1024, 2048)
    channel_range: tuple = (16, 128)
    f_up_range: tuple = (0.0, math.pi / 12)
    f_down_range: tuple = (-math.pi / 6, 0.0)
    yaw_range: tuple = (-math.pi / 6, math.pi / 6)
    tx_range: tuple = (-1.0, 1.0)
    ty_range: tuple = (-0.5, 0.5)
    tz_range: tuple = (-0.1, 0.1)
    speed_kmh_range: tuple = (0.0, 60.0)
    yaw_rate_range: tuple = (-math.pi / 8, math.pi / 8)
    n_mix: int = 2
    max_range_m: float = 120.0
    spin_hz: float = 20.0
    fixed_preset: str | None = None
    distort_mode: str = "reproject"
    resample_first: bool = True
    workers: int = 1

    def __post_init__(self):
        problems = validate_spec_fields(self.as_dict())
        if problems:
            raise SpecValidationError(
                "; ".join(f"{k}: {v}" for k, v in problems.items()),
                fields=sorted(problems),
            )

    def as_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}

    def with_seed(self, seed: int) -> "AugmentSpec":
        return replace(self, seed=seed)


_RANGE_FIELDS = (
    "channel_range", "f_up_range", "f_down_range", "yaw_range", "tx_range",
    "ty_range", "tz_range", "speed_kmh_range", "yaw_rate_range",
)


def validate_spec_fields(values: dict) -> dict:
    """Map of field name -> problem description; empty when valid."""
    known = {f.name for f in fields(AugmentSpec)}
    problems = {k: "unknown field" for k in values if k not in known}
    for name in _RANGE_FIELDS:
        if name not in values:
            continue
        rng = values[name]
        if (not isinstance(rng, (tuple, list)) or len(rng) != 2
                or not all(isinstance(x, numbers.Real) for x in rng)):
            problems[name] = "expected a (low, high) pair"
        elif rng[0] > rng[1]:
            problems[name] = "low bound exceeds high bound"
    choices = values.get("horiz_res_choices")
    if choices is not None and (
            not isinstance(choices, (tuple, list)) or len(choices) == 0
            or not all(isinstance(c, numbers.Integral) and c >= 1
                       for c in choices)):
        problems["horiz_res_choices"] = "expected non-empty positive integers"
    cr = values.get("channel_range")
    if "channel_range" not in problems and cr is not None and (
            not all(isinstance(c, numbers.Integral) for c in cr) or cr[0] < 1):
        problems["channel_range"] = "expected integer bounds >= 1"
    if not isinstance(values.get("seed", 0), numbers.Integral):
        problems["seed"] = "expected an integer"
    if values.get("n_mix", 1) < 1:
        problems["n_mix"] = "must be >= 1"
    if values.get("max_range_m", 1.0) <= 0:
        problems["max_range_m"] = "must be positive"
    if values.get("spin_hz", 1.0) <= 0:
        problems["spin_hz"] = "must be positive"
    fp = values.get("fixed_preset")
    if fp is not None and fp not in preset_names():
        problems["fixed_preset"] = f"unknown preset (choices: {preset_names()})"
    if values.get("distort_mode", "reproject") not in ("reproject", "range-shift"):
        problems["distort_mode"] = "expected 'reproject' or 'range-shift'"
    if values.get("workers", 1) < 1:
        problems["workers"] = "must be >= 1"
    return problems


def spec_from_dict(values: dict) -> AugmentSpec:
    """Build a spec from a plain mapping, rejecting invalid fields."""
    values = dict(values)
    for name in _RANGE_FIELDS + ("horiz_res_choices",):
        if name in values and isinstance(values[name], list):
            values[name] = tuple(values[name])
    problems = validate_spec_fields(values)
    if problems:
        raise SpecValidationError(
            "; ".join(f"{k}: {v}" for k, v in sorted(problems.items())),
            fields=sorted(problems),
        )
    return AugmentSpec(**values)


def spec_to_text(spec: AugmentSpec) -> str:
    """Serialize to the key=value grammar (one field per line)."""
    lines = []
    for f in fields(AugmentSpec):
        val = getattr(spec, f.name)
        if isinstance(val, (tuple, list)):
            val = ",".join(repr(x) for x in val)
        elif isinstance(val, bool):
            val = "true" if val else "false"
        elif val is None:
            val = ""
        lines.append(f"{f.name}={val}")
    return "\n".join(lines) + "\n"


def spec_from_text(text: str) -> AugmentSpec:
    """Parse the key=value grammar produced by spec_to_text."""
    by_name = {f.name: f for f in fields(AugmentSpec)}
    values = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise SpecValidationError(f"line {lineno}: expected key=value")
        key, _, val = line.partition("=")
        key, val = key.strip(), val.strip()
        if key not in by_name:
            raise SpecValidationError(f"line {lineno}: unknown field {key!r}",
                                      fields=[key])
        values[key] = _parse_field(key, val)
    return spec_from_dict(values)


def _parse_field(name: str, val: str):
    if name in _RANGE_FIELDS:
        parts = [p for p in val.split(",") if p.strip()]
        typ = int if name == "channel_range" else float
        return tuple(typ(p) for p in parts)
    if name == "horiz_res_choices":
        return tuple(int(p) for p in val.split(",") if p.strip())
    if name in ("seed", "n_mix", "workers"):
        return int(val)
    if name in ("max_range_m", "spin_hz"):
        return float(val)
    if name == "resample_first":
        return val.lower() in ("true", "1", "yes")
    if name == "fixed_preset":
        return val or None
    return val


def sample_config(spec: AugmentSpec, rng) -> LidarConfig:
    """Draw a sensor configuration from the spec's ranges.

    Horizontal resolution picks uniformly from the (ascending) choice set,
    channel count uniformly over its integer interval, and the field-of-view
    bounds uniformly over theirs; range and spin rate come from the spec.
    """
    choices = sorted(spec.horiz_res_choices)
    w = choices[int(rng.integers(0, len(choices)))]
    h = int(rng.integers(spec.channel_range[0], spec.channel_range[1] + 1))
    f_up = float(rng.uniform(*spec.f_up_range))
    f_down = float(rng.uniform(*spec.f_down_range))
    return LidarConfig(h, w, f_up, f_down, spec.max_range_m, spec.spin_hz)


def sample_pose(spec: AugmentSpec, rng) -> Pose:
    """Draw the augmentation pose: yaw about z plus a translation."""
    yaw = float(rng.uniform(*spec.yaw_range))
    t = (float(rng.uniform(*spec.tx_range)),
         float(rng.uniform(*spec.ty_range)),
         float(rng.uniform(*spec.tz_range)))
    return Pose.rot_z(yaw, t)


@dataclass
class AugmentResult:
    """One augmented frame plus the provenance needed to reproduce it."""

    cloud: PointCloud
    range_map: RangeMap
    config: LidarConfig
    seed: int
    latency_ms: float


def target_config(spec: AugmentSpec) -> LidarConfig:
    """The output sensor for this spec: fixed preset or freshly sampled."""
    if spec.fixed_preset is not None:
        return preset(spec.fixed_preset)
    return sample_config(spec, make_stream(spec.seed, STREAM_CONFIG))


def augment(worlds, spec: AugmentSpec) -> AugmentResult:
    """Run the full on-demand augmentation for one seed.

    Samples one target configuration, then renders each of the first n_mix
    worlds under its own sampled pose and motion distortion, mixes the maps
    by sampled azimuth sectors, and back-projects the result to a labeled
    point cloud.  Output is a pure function of (worlds, spec).
    """
    if len(worlds) < spec.n_mix:
        raise ValueError(f"need {spec.n_mix} worlds, got {len(worlds)}")
    for i, wm in enumerate(worlds[: spec.n_mix]):
        if len(wm) == 0:
            raise ValueError(f"world {i} is empty")
    t0 = time.perf_counter()
    cfg = target_config(spec)
    maps = []
    for i in range(spec.n_mix):
        pose = sample_pose(spec, make_stream(spec.seed, STREAM_POSE, i))
        motion = sample_motion(make_stream(spec.seed, STREAM_MOTION, i), cfg,
                               spec.speed_kmh_range, spec.yaw_rate_range)
        rmap = render(worlds[i], cfg, pose, workers=spec.workers)
        rmap = distort(rmap, motion, mode=spec.distort_mode,
                       resample_first=spec.resample_first)
        maps.append(rmap)
    if spec.n_mix >= 2:
        sectors = sample_sectors(make_stream(spec.seed, STREAM_SECTORS),
                                 spec.n_mix)
        out_map = mix(maps, sectors)
    else:
        out_map = maps[0]
    cloud = extract_cloud(out_map)
    latency_ms = (time.perf_counter() - t0) * 1e3
    return AugmentResult(cloud, out_map, cfg, spec.seed, latency_ms)
