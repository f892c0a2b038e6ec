"""Scene-level and sensor-level mixing of rendered range maps.

A mixed frame copies whole azimuth sectors from different source maps that
share one sensor configuration, so every output pixel is bit-identical to
the corresponding pixel of exactly one input.  Sources may come from
different scenes; rendering them to a common configuration first is the
sensor-level part of the mix.
"""

from __future__ import annotations

import numpy as np

from .sensor_model import RangeMap, TWO_PI, column_azimuths

_PARTITION_TOL = 1e-12


def sample_sectors(rng, n_sources: int = 2):
    """Random azimuth sectors partitioning [0, 2*pi) over the sources.

    Draws n_sources - 1 uniform cut angles, sorts them, and assigns the
    resulting arcs to sources round-robin.  Returns a list of
    (start, end, source index) triples ordered by start angle.
    """
    if n_sources < 2:
        raise ValueError("need at least two sources to mix")
    cuts = np.sort(rng.uniform(0.0, TWO_PI, size=n_sources - 1))
    bounds = np.concatenate(([0.0], cuts, [TWO_PI]))
    return [
        (float(bounds[i]), float(bounds[i + 1]), i % n_sources)
        for i in range(len(bounds) - 1)
    ]


def _check_partition(sectors):
    ordered = sorted(sectors, key=lambda s: s[0])
    cursor = 0.0
    for start, end, _ in ordered:
        if abs(start - cursor) > _PARTITION_TOL:
            raise ValueError("sectors do not partition [0, 2*pi): "
                             f"gap or overlap at angle {cursor}")
        if end < start:
            raise ValueError("sector end precedes its start")
        cursor = end
    if abs(cursor - TWO_PI) > _PARTITION_TOL:
        raise ValueError("sectors do not cover the full turn")
    return ordered


def mix(maps, sectors) -> RangeMap:
    """Compose one range map from azimuth sectors of several maps.

    All maps must share an identical configuration and `sectors` must be
    (start, end, source index) triples partitioning [0, 2*pi) of azimuth
    measured from scan start.  A column belongs to the sector containing its
    center azimuth; the owning map's pixels are copied verbatim across all
    channels.
    """
    if len(maps) == 0:
        raise ValueError("no maps to mix")
    config = maps[0].config
    for i, m in enumerate(maps[1:], start=1):
        if m.config != config:
            raise ValueError(f"map {i} configuration differs from map 0")
    ordered = _check_partition(sectors)
    for _, _, src in ordered:
        if not 0 <= src < len(maps):
            raise ValueError(f"sector references missing source {src}")

    centers = column_azimuths(config)
    starts = np.array([s[0] for s in ordered])
    owner_of_sector = np.array([s[2] for s in ordered])
    owner = owner_of_sector[
        np.clip(np.searchsorted(starts, centers, side="right") - 1,
                0, len(ordered) - 1)
    ]
    out = RangeMap.empty(config)
    for src in np.unique(owner):
        cols = owner == src
        m = maps[src]
        out.range[:, cols] = m.range[:, cols]
        out.label[:, cols] = m.label[:, cols]
        out.intensity[:, cols] = m.intensity[:, cols]
        out.source[:, cols] = m.source[:, cols]
        out.valid[:, cols] = m.valid[:, cols]
    return out
