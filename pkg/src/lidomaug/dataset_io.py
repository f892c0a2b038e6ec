"""Readers and writers for every on-disk format the engine touches.

Scans are packed little-endian float32 (x, y, z, intensity) records; labels
are little-endian uint32 with the semantic class in the low 16 bits and the
instance id in the high 16; pose files carry one row-major 3x4 [R|t] per
line; box tracks are line-oriented text.  Range images are written as
16-bit grayscale PNG in millimeters (0 = no return, values clip at
65.535 m); point clouds as binary little-endian PLY; world models in a
versioned binary cache container.  Readers reject malformed input instead
of truncating, and every writer/reader pair is an exact inverse on its
domain.
"""

from __future__ import annotations

import hashlib
import json
import struct
import sys

import numpy as np
from PIL import Image

from .errors import CacheVersionError, DataFormatError
from .world_model import Box, BoxTrack, Pose, PointCloud, WorldModel

SCAN_RECORD_BYTES = 16
LABEL_RECORD_BYTES = 4
PNG_MM_MAX = 65535          # 16-bit ceiling: ranges clip at 65.535 m

CACHE_MAGIC = b"LWMC"
CACHE_VERSION = 1


def read_scan(path) -> PointCloud:
    """Read a packed float32 (x, y, z, intensity) scan file."""
    raw = np.fromfile(path, dtype=np.uint8)
    if len(raw) % SCAN_RECORD_BYTES != 0:
        raise DataFormatError(
            f"{path}: size {len(raw)} is not a multiple of "
            f"{SCAN_RECORD_BYTES}-byte records"
        )
    data = raw.view("<f4").reshape(-1, 4)
    return PointCloud(data[:, :3], intensity=data[:, 3])


def write_scan(cloud: PointCloud, path) -> None:
    data = np.empty((len(cloud), 4), dtype="<f4")
    data[:, :3] = cloud.xyz
    data[:, 3] = cloud.intensity
    data.tofile(path)


def read_labels(path, expected_count: int | None = None) -> np.ndarray:
    """Read per-point uint32 labels (class = low 16 bits, instance = high).

    Returns the raw uint32 array; use `semantic_classes` to extract the
    class ids.  With `expected_count`, a mismatch against the companion
    scan is rejected.
    """
    raw = np.fromfile(path, dtype=np.uint8)
    if len(raw) % LABEL_RECORD_BYTES != 0:
        raise DataFormatError(
            f"{path}: size {len(raw)} is not a multiple of 4-byte records")
    labels = raw.view("<u4")
    if expected_count is not None and len(labels) != expected_count:
        raise DataFormatError(
            f"{path}: {len(labels)} labels but companion scan has "
            f"{expected_count} points"
        )
    return labels


def write_labels(labels: np.ndarray, path) -> None:
    np.asarray(labels).astype("<u4").tofile(path)


def semantic_classes(raw_labels: np.ndarray) -> np.ndarray:
    """Low 16 bits of raw label words, as uint16 class ids."""
    return (np.asarray(raw_labels) & np.uint32(0xFFFF)).astype(np.uint16)


def instance_ids(raw_labels: np.ndarray) -> np.ndarray:
    """High 16 bits of raw label words."""
    return (np.asarray(raw_labels) >> np.uint32(16)).astype(np.uint16)


def nearest_rotation(m: np.ndarray) -> np.ndarray:
    """Closest proper rotation to m (orthogonal Procrustes via SVD)."""
    u, _, vt = np.linalg.svd(m)
    r = u @ vt
    if np.linalg.det(r) < 0:
        u[:, -1] = -u[:, -1]
        r = u @ vt
    return r


def read_poses(path, ortho_tol: float = 1e-4, report=None) -> list[Pose]:
    """Read an odometry pose file: 12 whitespace-separated values per line.

    Each line is a row-major 3x4 [R|t] mapping sensor to world coordinates.
    Rotations are validated against `ortho_tol`: drift beyond it is projected
    to the nearest proper rotation and reported (via `report`, default
    stderr); smaller drift is projected silently.  Malformed lines are errors
    carrying the line number.
    """
    if report is None:
        report = lambda msg: print(msg, file=sys.stderr)
    poses = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line:
                continue
            parts = line.split()
            if len(parts) != 12:
                raise DataFormatError(
                    f"{path}:{lineno}: expected 12 fields, found {len(parts)}")
            try:
                vals = np.array([float(p) for p in parts])
            except ValueError as exc:
                raise DataFormatError(f"{path}:{lineno}: {exc}") from exc
            mat = vals.reshape(3, 4)
            r, t = mat[:, :3], mat[:, 3]
            drift = float(np.abs(r.T @ r - np.eye(3)).max())
            if drift > 1e-6:
                r = nearest_rotation(r)
                if drift > ortho_tol:
                    report(f"{path}:{lineno}: re-orthonormalized rotation "
                           f"(drift {drift:.2e})")
            try:
                poses.append(Pose(r, t))
            except ValueError as exc:
                raise DataFormatError(f"{path}:{lineno}: {exc}") from exc
    return poses


def write_poses(poses, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for pose in poses:
            vals = np.hstack([pose.R, pose.t[:, None]]).reshape(-1)
            fh.write(" ".join(format(v, ".12g") for v in vals) + "\n")


def read_box_tracks(path) -> list[BoxTrack]:
    """Read object tracks from line-oriented text.

    Line grammar (whitespace separated):
        object_id frame cx cy cz length width height yaw  r11 ... r33 tx ty tz
    i.e. 21 fields: the box center/size/yaw in the frame's sensor
    coordinates and the 12-value row-major frame-to-frame rigid transform
    moving the object from the previous frame to this one (identity on the
    first line of a track).
    """
    entries: dict[str, list] = {}
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split()
            if len(parts) != 21:
                raise DataFormatError(
                    f"{path}:{lineno}: expected 21 fields, found {len(parts)}")
            oid = parts[0]
            try:
                frame = int(parts[1])
                nums = [float(p) for p in parts[2:]]
            except ValueError as exc:
                raise DataFormatError(f"{path}:{lineno}: {exc}") from exc
            center = nums[0:3]
            size = nums[3:6]
            yaw = nums[6]
            mat = np.array(nums[7:]).reshape(3, 4)
            try:
                motion = Pose(mat[:, :3], mat[:, 3])
            except ValueError as exc:
                raise DataFormatError(f"{path}:{lineno}: {exc}") from exc
            box = Box(center, np.asarray(size) / 2.0, yaw)
            entries.setdefault(oid, []).append((frame, box, motion))
    tracks = []
    for oid, rows in entries.items():
        rows.sort(key=lambda r: r[0])
        tracks.append(BoxTrack(
            object_id=oid,
            time_indices=[r[0] for r in rows],
            boxes=[r[1] for r in rows],
            motions=[r[2] for r in rows],
        ))
    return tracks


def write_box_tracks(tracks, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for track in tracks:
            for idx, box, motion in zip(track.time_indices, track.boxes,
                                        track.motions):
                vals = [*box.center, *(2.0 * box.half_extents), box.yaw,
                        *np.hstack([motion.R, motion.t[:, None]]).reshape(-1)]
                fh.write(track.object_id + f" {idx} "
                         + " ".join(format(v, ".12g") for v in vals) + "\n")


def write_range_png(rmap, path) -> None:
    """Write the range channel as 16-bit grayscale PNG in millimeters.

    0 marks pixels without a return; ranges beyond 65.535 m clip to the
    16-bit ceiling.
    """
    mm = np.where(rmap.valid,
                  np.minimum(np.rint(rmap.range * 1000.0), PNG_MM_MAX),
                  0.0).astype(np.uint16)
    Image.fromarray(mm).save(path, format="PNG")


def read_range_png(path) -> np.ndarray:
    """Read a range PNG back to meters (float32, 0 where invalid)."""
    img = Image.open(path)
    arr = np.asarray(img)
    if arr.dtype not in (np.uint16, np.int32):
        raise DataFormatError(f"{path}: expected a 16-bit grayscale PNG")
    return arr.astype(np.float32) / 1000.0


_PLY_HEADER = """ply
format binary_little_endian 1.0
element vertex {count}
property float x
property float y
property float z
property float intensity
property ushort label
end_header
"""


def write_ply(cloud: PointCloud, path) -> None:
    """Write a labeled point cloud as binary little-endian PLY."""
    n = len(cloud)
    rec = np.zeros(n, dtype=[("x", "<f4"), ("y", "<f4"), ("z", "<f4"),
                             ("intensity", "<f4"), ("label", "<u2")])
    rec["x"], rec["y"], rec["z"] = (cloud.xyz[:, i].astype("<f4")
                                    for i in range(3))
    rec["intensity"] = cloud.intensity
    if cloud.labels is not None:
        rec["label"] = cloud.labels
    with open(path, "wb") as fh:
        fh.write(_PLY_HEADER.format(count=n).encode("ascii"))
        fh.write(rec.tobytes())


def read_ply(path) -> PointCloud:
    """Read a PLY written by write_ply."""
    with open(path, "rb") as fh:
        header = b""
        while not header.endswith(b"end_header\n"):
            chunk = fh.readline()
            if not chunk:
                raise DataFormatError(f"{path}: unterminated PLY header")
            header += chunk
        lines = header.decode("ascii").splitlines()
        if lines[0] != "ply" or "format binary_little_endian 1.0" not in lines[1]:
            raise DataFormatError(f"{path}: not a binary little-endian PLY")
        count = None
        for line in lines:
            if line.startswith("element vertex"):
                count = int(line.split()[-1])
        if count is None:
            raise DataFormatError(f"{path}: missing vertex element")
        rec = np.fromfile(fh, dtype=[("x", "<f4"), ("y", "<f4"), ("z", "<f4"),
                                     ("intensity", "<f4"), ("label", "<u2")],
                          count=count)
    if len(rec) != count:
        raise DataFormatError(f"{path}: truncated vertex data")
    xyz = np.stack([rec["x"], rec["y"], rec["z"]], axis=1)
    return PointCloud(xyz, intensity=rec["intensity"], labels=rec["label"])


def world_content_hash(world: WorldModel) -> str:
    """Hex digest over the world's point, label, source and voxel arrays."""
    world.ensure_voxels()
    h = hashlib.sha256()
    for arr in (world.points, world.intensity, world.labels, world.sources,
                world.voxel_uniq):
        h.update(np.ascontiguousarray(arr).tobytes())
    h.update(struct.pack("<q", world.reference_index))
    return h.hexdigest()


def cache_world(world: WorldModel, path) -> None:
    """Write a world model to the versioned binary cache container.

    Layout: magic, u16 version, u32 header length, JSON header (array
    shapes/dtypes, reference index, content hash), then the raw
    little-endian arrays in header order.
    """
    world.ensure_voxels()
    arrays = {
        "points": np.ascontiguousarray(world.points, "<f8"),
        "intensity": np.ascontiguousarray(world.intensity, "<f4"),
        "labels": np.ascontiguousarray(world.labels, "<u2"),
        "sources": np.ascontiguousarray(world.sources, "<i4"),
        "voxel_keys": np.ascontiguousarray(world.voxel_keys, "<i8"),
        "voxel_uniq": np.ascontiguousarray(world.voxel_uniq, "<i8"),
    }
    if world.voxel_rep_labels is not None:
        arrays["voxel_rep_labels"] = np.ascontiguousarray(
            world.voxel_rep_labels, "<u2")
    header = {
        "reference_index": world.reference_index,
        "content_hash": world_content_hash(world),
        "arrays": [
            {"name": k, "dtype": str(a.dtype), "shape": list(a.shape)}
            for k, a in arrays.items()
        ],
    }
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(CACHE_MAGIC)
        fh.write(struct.pack("<HI", CACHE_VERSION, len(blob)))
        fh.write(blob)
        for a in arrays.values():
            fh.write(a.tobytes())


def load_world(path) -> WorldModel:
    """Read a world-model cache, verifying magic, version and content hash."""
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != CACHE_MAGIC:
            raise DataFormatError(f"{path}: bad magic {magic!r}")
        version, blob_len = struct.unpack("<HI", fh.read(6))
        if version != CACHE_VERSION:
            raise CacheVersionError(
                f"{path}: cache version {version}, expected {CACHE_VERSION}")
        try:
            header = json.loads(fh.read(blob_len).decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as exc:
            raise DataFormatError(f"{path}: corrupt header: {exc}") from exc
        arrays = {}
        for spec in header["arrays"]:
            count = int(np.prod(spec["shape"])) if spec["shape"] else 1
            arr = np.fromfile(fh, dtype=spec["dtype"], count=count)
            if arr.size != count:
                raise DataFormatError(f"{path}: truncated array {spec['name']}")
            arrays[spec["name"]] = arr.reshape(spec["shape"])
    world = WorldModel(
        points=arrays["points"],
        intensity=arrays["intensity"],
        labels=arrays["labels"],
        sources=arrays["sources"],
        reference_index=header["reference_index"],
        voxel_keys=arrays["voxel_keys"],
        voxel_uniq=arrays["voxel_uniq"],
        voxel_rep_labels=arrays.get("voxel_rep_labels"),
    )
    if world_content_hash(world) != header["content_hash"]:
        raise DataFormatError(f"{path}: content hash mismatch")
    return world
