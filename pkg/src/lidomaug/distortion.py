"""Spin/ego-motion entangled distortion of range maps.

Two effects are modeled under a constant-velocity assumption: platform yaw
rotation changes the effective sweep rate, stretching or compressing the
azimuth axis (column resampling), and forward travel displaces each column's
measurement by the distance covered since scan start (depth adjustment).
Azimuth is measured from scan start at column 0.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .sensor_model import LidarConfig, RangeMap, TWO_PI
from .world_model import WorldModel
from . import renderer

KMH_TO_MPS = 1.0 / 3.6


@dataclass(frozen=True)
class MotionParams:
    """Platform motion during one sweep.

    speed       forward speed along +x, m/s
    yaw_rate    platform rotation rate, rad/s
    spin_omega  sensor spin angular speed, rad/s (2*pi*spin_rate_hz)
    """

    speed: float
    yaw_rate: float
    spin_omega: float

    def __post_init__(self):
        if self.spin_omega <= 0.0:
            raise ValueError("spin_omega must be positive")
        if self.spin_omega + self.yaw_rate == 0.0:
            raise ValueError("spin_omega + yaw_rate must not vanish")

    @classmethod
    def from_kmh(cls, speed_kmh: float, yaw_rate: float, spin_omega: float):
        return cls(speed_kmh * KMH_TO_MPS, yaw_rate, spin_omega)


def sample_motion(rng, config: LidarConfig,
                  speed_kmh_range=(0.0, 60.0),
                  yaw_rate_range=(-math.pi / 8, math.pi / 8)) -> MotionParams:
    """Draw motion parameters: speed uniform in km/h, yaw rate uniform rad/s."""
    speed_kmh = rng.uniform(*speed_kmh_range)
    yaw_rate = rng.uniform(*yaw_rate_range)
    return MotionParams(speed_kmh * KMH_TO_MPS, yaw_rate, config.spin_omega)


def travel_displacement(u, speed: float, spin_omega: float, width: int):
    """Forward travel distance accrued when the sweep reaches column u.

    Equals speed * elapsed time, with elapsed time = swept azimuth over spin
    speed; the swept azimuth of column u is u * 2*pi / width.  Column 0 is
    the scan start and is never displaced.
    """
    return speed * (np.asarray(u, np.float64) * (TWO_PI / width)) / spin_omega


def resample_columns(rmap: RangeMap, motion: MotionParams) -> RangeMap:
    """Stretch/compress the azimuth axis by the effective sweep rate.

    Column u moves to floor(u * (spin + yaw) / spin).  Destinations past the
    map width are dropped (the sweep re-covers its start); when several
    source columns land on one destination the later-scanned column wins.
    Unreached destination columns are left invalid (the gap case).
    """
    scale = (motion.spin_omega + motion.yaw_rate) / motion.spin_omega
    if scale == 1.0:
        return rmap.copy()
    w = rmap.config.horiz_res_w
    src = np.arange(w)
    dest = np.floor(src * scale).astype(np.int64)
    ok = (dest >= 0) & (dest < w)
    # Destination -> source gather map; ascending source order == temporal
    # order, so the last write per duplicate destination is "later wins".
    gather = np.full(w, -1, np.int64)
    gather[dest[ok]] = src[ok]
    filled = gather >= 0
    gsafe = np.where(filled, gather, 0)
    fm = filled[None, :]
    out = RangeMap.empty(rmap.config)
    out.range[:] = np.where(fm, np.take(rmap.range, gsafe, axis=1), 0)
    out.label[:] = np.where(fm, np.take(rmap.label, gsafe, axis=1), 0)
    out.intensity[:] = np.where(fm, np.take(rmap.intensity, gsafe, axis=1), 0)
    out.source[:] = np.where(fm, np.take(rmap.source, gsafe, axis=1), 0)
    out.valid[:] = np.where(fm, np.take(rmap.valid, gsafe, axis=1), False)
    return out


def _adjust_travel_reproject(rmap: RangeMap, motion: MotionParams) -> RangeMap:
    """Translate each pixel's 3D point forward by its travel distance and
    re-render through the z-buffer (points may change pixel, leave the field
    of view, or newly occlude each other)."""
    iv, iu, xyz = renderer.pixel_points(rmap)
    if len(iv) == 0:
        return rmap.copy()
    xyz[:, 0] += travel_displacement(iu, motion.speed, motion.spin_omega,
                                     rmap.config.horiz_res_w)
    moved = WorldModel(points=xyz, intensity=rmap.intensity[iv, iu],
                       labels=rmap.label[iv, iu], sources=rmap.source[iv, iu])
    return renderer.render(moved, rmap.config)


def _adjust_travel_range_shift(rmap: RangeMap, motion: MotionParams) -> RangeMap:
    """Literal per-column addition of the travel distance to the stored range
    (exact only for points on the motion axis); ranges pushed past max_range
    become invalid."""
    out = rmap.copy()
    d = travel_displacement(np.arange(rmap.config.horiz_res_w), motion.speed,
                            motion.spin_omega, rmap.config.horiz_res_w)
    shifted = out.range + d.astype(np.float32)[None, :]
    drop = out.valid & (shifted > rmap.config.max_range)
    out.range = np.where(out.valid, shifted, np.float32(0.0))
    out.range[drop] = 0.0
    out.label[drop] = 0
    out.intensity[drop] = 0.0
    out.source[drop] = 0
    out.valid[drop] = False
    return out


def distort(rmap: RangeMap, motion: MotionParams, mode: str = "reproject",
            resample_first: bool = True) -> RangeMap:
    """Apply spin/ego-motion distortion to a range map.

    Zero motion returns a bit-identical copy.  `mode` selects the travel
    adjustment: "reproject" (3D forward translation, physically exact) or
    "range-shift" (scalar range addition, on-axis approximation).
    `resample_first` orders the azimuth resampling before the travel
    adjustment; pass False to swap.
    """
    if mode not in ("reproject", "range-shift"):
        raise ValueError(f"unknown distortion mode {mode!r}")
    steps = []
    if motion.yaw_rate != 0.0:
        steps.append(lambda m: resample_columns(m, motion))
    if motion.speed != 0.0:
        adjust = (_adjust_travel_reproject if mode == "reproject"
                  else _adjust_travel_range_shift)
        steps.append(lambda m: adjust(m, motion))
    if not resample_first:
        steps.reverse()
    if not steps:
        return rmap.copy()
    for step in steps:
        rmap = step(rmap)
    return rmap
