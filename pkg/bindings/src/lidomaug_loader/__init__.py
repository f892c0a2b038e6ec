"""Array-level bindings for plugging the augmentation engine into ML data
loaders without file round-trips.

The surface is four names: `open_world` maps a cache file to a shared,
immutable world handle; `augment_arrays` runs one seeded augmentation and
returns plain numpy arrays; `presets` lists the built-in sensor
configurations; `version` identifies the engine.

Handles are plain reference-counted objects over a process-wide registry, so
opening the same cache twice shares one in-memory model.  All calls are
thread-safe: the engine is pure, its scratch space is thread-local, and the
heavy numpy kernels release the interpreter lock, so loader workers overlap.
Outputs reference the engine's freshly built arrays directly (no extra
copy beyond assembling the N x 4 point block).

Errors are typed: a cache from an incompatible layout raises
`lidomaug.errors.CacheVersionError`, corrupt bytes raise
`lidomaug.errors.DataFormatError`, and an invalid spec mapping raises
`lidomaug.errors.SpecValidationError` whose `.fields` names the offending
entries.
"""

from __future__ import annotations

import os
import threading
import weakref

import numpy as np

import lidomaug
from lidomaug import dataset_io, pipeline

__all__ = ["open_world", "augment_arrays", "presets", "version"]

version = lidomaug.__version__

_registry: dict = {}
_registry_lock = threading.Lock()


class WorldHandle:
    """Shared, immutable view of one cached world model."""

    __slots__ = ("model", "path", "__weakref__")

    def __init__(self, model, path):
        self.model = model
        self.path = path

    def __len__(self):
        return len(self.model)

    def __repr__(self):
        return f"WorldHandle({self.path!r}, {len(self)} points)"


def open_world(cache_path) -> WorldHandle:
    """Open a world-model cache, sharing the in-memory model across handles.

    Repeated opens of the same file return distinct handles over one
    immutable model; the model is dropped once the last handle dies.
    """
    key = os.path.realpath(cache_path)
    with _registry_lock:
        ref = _registry.get(key)
        model = ref() if ref is not None else None
        if model is None:
            model = dataset_io.load_world(cache_path)
            _registry[key] = weakref.ref(model)
    return WorldHandle(model, key)


def presets() -> dict:
    """Built-in sensor configurations as plain field dictionaries."""
    out = {}
    for name in lidomaug.preset_names():
        cfg = lidomaug.preset(name)
        out[name] = {
            "channels": cfg.channels_h,
            "width": cfg.horiz_res_w,
            "fov_up_rad": cfg.fov_up,
            "fov_down_rad": cfg.fov_down,
            "max_range_m": cfg.max_range,
            "spin_hz": cfg.spin_rate_hz,
        }
    return out


def augment_arrays(handles, spec_dict=None, seed: int = 0):
    """Run one seeded augmentation over the handles' worlds.

    `handles` is a WorldHandle or a sequence of them; `spec_dict` is a plain
    mapping of AugmentSpec fields (n_mix defaults to the number of handles).
    Returns (points, labels, range_map): float32 (N, 4) x/y/z/intensity,
    uint16 (N,) semantic classes, and the float32 (H, W) range image —
    bit-identical to what the command-line `augment` writes for the same
    worlds, spec and seed.
    """
    if isinstance(handles, WorldHandle):
        handles = [handles]
    values = dict(spec_dict or {})
    values.setdefault("n_mix", len(handles))
    values["seed"] = seed
    spec = pipeline.spec_from_dict(values)
    result = pipeline.augment([h.model for h in handles], spec)
    cloud = result.cloud
    points = np.empty((len(cloud), 4), np.float32)
    points[:, :3] = cloud.xyz
    points[:, 3] = cloud.intensity
    return points, cloud.labels, result.range_map.range
