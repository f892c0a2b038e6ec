"""Cylindrical LiDAR sensor model: configurations and range-map projection.

Axis convention: x forward, y left, z up.  A range map is an H x W grid
indexed by (row v, column u); u sweeps azimuth clockwise from +pi (column 0)
through 0 (column W/2) to -pi, v sweeps elevation from fov_up (row 0) down
to fov_down.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import DataFormatError

TWO_PI = 2.0 * math.pi


@dataclass(frozen=True)
class LidarConfig:
    """Cylindrical sensor description.

    channels_h    vertical rows of the range map (beam count)
    horiz_res_w   columns of the range map (azimuth steps per revolution)
    fov_up        top of the vertical field of view, radians, >= 0
    fov_down      bottom of the vertical field of view, radians, <= 0
    max_range     maximum usable range in meters
    spin_rate_hz  sensor rotation rate (one sweep takes 1/spin_rate_hz s)
    """

    channels_h: int
    horiz_res_w: int
    fov_up: float
    fov_down: float
    max_range: float
    spin_rate_hz: float = 20.0

    def __post_init__(self):
        if self.channels_h < 1 or self.horiz_res_w < 1:
            raise ValueError("channels_h and horiz_res_w must be >= 1")
        if not (self.fov_up >= 0.0 >= self.fov_down):
            raise ValueError("expected fov_up >= 0 >= fov_down (radians)")
        if not self.fov_up > self.fov_down:
            raise ValueError("fov_up must exceed fov_down")
        if self.max_range <= 0.0:
            raise ValueError("max_range must be positive")
        if self.spin_rate_hz <= 0.0:
            raise ValueError("spin_rate_hz must be positive")

    @property
    def fov(self) -> float:
        """Total vertical field of view |fov_up| + |fov_down| in radians."""
        return self.fov_up - self.fov_down

    @property
    def shape(self) -> tuple[int, int]:
        return (self.channels_h, self.horiz_res_w)

    @property
    def spin_omega(self) -> float:
        """Spin angular speed in rad/s."""
        return TWO_PI * self.spin_rate_hz


# Factory-spec presets: (H, W, fov_up deg, fov_down deg, max range m, spin Hz).
_PRESETS = {
    "V64": (64, 2048, 2.0, -24.9, 120.0, 20.0),
    "V32": (32, 2048, 10.67, -30.67, 100.0, 20.0),
    "V16": (16, 2048, 15.0, -15.0, 100.0, 20.0),
    "O64": (64, 1024, 22.5, -22.5, 120.0, 20.0),
    "O128": (128, 1024, 22.5, -22.5, 120.0, 20.0),
}


def preset(name: str) -> LidarConfig:
    """Return the configuration of a known sensor model.

    Known names: V64, V32, V16 (Velodyne HDL-64E / HDL-32E / VLP-16) and
    O64, O128 (Ouster OS-1 64 / 128).
    """
    try:
        h, w, up, down, rng, hz = _PRESETS[name]
    except KeyError:
        raise ValueError(
            f"unknown preset {name!r}; choices: {sorted(_PRESETS)}"
        ) from None
    return LidarConfig(h, w, math.radians(up), math.radians(down), rng, hz)


def preset_names() -> list[str]:
    return sorted(_PRESETS)


_SENSOR_FILE_KEYS = (
    "channels", "width", "fov_up_deg", "fov_down_deg", "max_range_m", "spin_hz",
)


def load_sensor_config(path) -> LidarConfig:
    """Read a sensor description from a key=value text file.

    Grammar: one `key=value` pair per line; blank lines and lines starting
    with `#` are ignored.  Required keys: channels, width, fov_up_deg,
    fov_down_deg, max_range_m, spin_hz.
    """
    values = {}
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise DataFormatError(f"{path}:{lineno}: expected key=value, got {line!r}")
            key, _, val = line.partition("=")
            key = key.strip()
            if key not in _SENSOR_FILE_KEYS:
                raise DataFormatError(f"{path}:{lineno}: unknown key {key!r}")
            values[key] = val.strip()
    missing = [k for k in _SENSOR_FILE_KEYS if k not in values]
    if missing:
        raise DataFormatError(f"{path}: missing keys: {', '.join(missing)}")
    try:
        return LidarConfig(
            channels_h=int(values["channels"]),
            horiz_res_w=int(values["width"]),
            fov_up=math.radians(float(values["fov_up_deg"])),
            fov_down=math.radians(float(values["fov_down_deg"])),
            max_range=float(values["max_range_m"]),
            spin_rate_hz=float(values["spin_hz"]),
        )
    except ValueError as exc:
        raise DataFormatError(f"{path}: {exc}") from exc


def project_arrays(x, y, z, r, config: LidarConfig, out_u=None, out_v=None):
    """Map Cartesian coordinates to continuous range-map coordinates (u, v).

    Computes u = (1/2)(1 - atan2(y, x)/pi) W and
    v = (1 - (asin(z/r) - fov_down)/fov) H in affine form.  Shared by the
    scalar API, the renderer and the test oracles so all paths are
    bit-identical; preserves the input dtype (float32 stays float32) and
    writes into `out_u`/`out_v` when given.  `r` is the Euclidean norm of
    (x, y, z); the caller guarantees r > 0.
    """
    w, h = config.horiz_res_w, config.channels_h
    u = np.arctan2(y, x, out=out_u) if out_u is not None else np.arctan2(y, x)
    np.multiply(u, -w / TWO_PI, out=u)
    np.add(u, 0.5 * w, out=u)
    v = np.divide(z, r, out=out_v) if out_v is not None else np.divide(z, r)
    # Guard against |z/r| straying past 1 by one ulp of the accumulated norm.
    np.clip(v, -1.0, 1.0, out=v)
    np.arcsin(v, out=v)
    np.multiply(v, -h / config.fov, out=v)
    np.add(v, h * config.fov_up / config.fov, out=v)
    return u, v


def project(point, config: LidarConfig):
    """Project 3D point(s) to continuous (u, v, r) range-map coordinates.

    Accepts a single 3-vector or an (N, 3) array.  u wraps modulo W; pixel
    indices are the floor of the continuous coordinates; v outside [0, H)
    means the point is outside the vertical field of view.
    """
    p = np.asarray(point, dtype=np.float64)
    single = p.ndim == 1
    p = np.atleast_2d(p)
    if p.shape[-1] != 3:
        raise ValueError("expected 3-vector point(s)")
    r = np.sqrt(np.einsum("ij,ij->i", p, p))
    if np.any(r <= 0.0):
        raise ValueError("cannot project a zero-norm point")
    u, v = project_arrays(p[:, 0], p[:, 1], p[:, 2], r, config)
    if single:
        return float(u[0]), float(v[0]), float(r[0])
    return u, v, r


def back_project(u, v, r, config: LidarConfig):
    """Invert the projection at continuous coordinates (u, v) and range r.

    Exact inverse of `project` when passed unquantized coordinates.  For a
    quantized pixel (iu, iv) pass the pixel center (iu + 0.5, iv + 0.5) so
    the angular quantization error is symmetric.
    """
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    r = np.asarray(r, dtype=np.float64)
    single = u.ndim == 0
    if np.any(r <= 0.0):
        raise ValueError("range must be positive")
    if np.any(v < 0.0) or np.any(v > config.channels_h):
        raise ValueError("row coordinate outside [0, H]")
    az = np.pi * (1.0 - 2.0 * u / config.horiz_res_w)
    el = config.fov_up - (v / config.channels_h) * config.fov
    cos_el = np.cos(el)
    out = np.stack(
        [r * cos_el * np.cos(az), r * cos_el * np.sin(az), r * np.sin(el)],
        axis=-1,
    )
    return out[()] if not single else out


@dataclass
class RangeMap:
    """H x W range image with per-pixel label/intensity/source channels.

    Pixels with no measurement carry range 0 and valid False; the label,
    intensity and source channels are meaningful only where valid is True.
    """

    config: LidarConfig
    range: np.ndarray          # (H, W) float32, meters, 0 where invalid
    label: np.ndarray          # (H, W) uint16
    intensity: np.ndarray      # (H, W) float32
    source: np.ndarray         # (H, W) int32, origin frame index
    valid: np.ndarray          # (H, W) bool

    @classmethod
    def empty(cls, config: LidarConfig) -> "RangeMap":
        h, w = config.shape
        return cls(
            config=config,
            range=np.zeros((h, w), np.float32),
            label=np.zeros((h, w), np.uint16),
            intensity=np.zeros((h, w), np.float32),
            source=np.zeros((h, w), np.int32),
            valid=np.zeros((h, w), bool),
        )

    def copy(self) -> "RangeMap":
        return RangeMap(
            config=self.config,
            range=self.range.copy(),
            label=self.label.copy(),
            intensity=self.intensity.copy(),
            source=self.source.copy(),
            valid=self.valid.copy(),
        )

    @property
    def num_valid(self) -> int:
        return int(self.valid.sum())

    def same_content(self, other: "RangeMap") -> bool:
        """Bitwise channel equality (configs must match)."""
        return (
            self.config == other.config
            and np.array_equal(self.range, other.range)
            and np.array_equal(self.label, other.label)
            and np.array_equal(self.intensity, other.intensity)
            and np.array_equal(self.source, other.source)
            and np.array_equal(self.valid, other.valid)
        )


def column_azimuths(config: LidarConfig, centers: bool = True) -> np.ndarray:
    """Azimuth swept from scan start (column 0) for each column, radians."""
    cols = np.arange(config.horiz_res_w, dtype=np.float64)
    if centers:
        cols = cols + 0.5
    return cols * (TWO_PI / config.horiz_res_w)
