"""Dense labeled 3D world models built from LiDAR sequences.

A world model aggregates geometrically adjacent frames around a reference
frame, expressed in that frame's sensor coordinates, with per-point labels
and origin-frame tags.  Labels are cleaned by per-voxel majority voting and
propagated to unlabeled points sharing a voxel with labeled ones.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

UNLABELED = 0          # sentinel class id for points without a semantic label
VOXEL_SIZE = 0.1       # meters, label-voting grid pitch

_VOX_BITS = 21         # signed voxel indices packed into an int64 key
_VOX_OFF = 1 << (_VOX_BITS - 1)
_VOX_MASK = (1 << _VOX_BITS) - 1


@dataclass(frozen=True)
class Pose:
    """Rigid transform T(x) = R x + t from sensor coordinates to world."""

    R: np.ndarray
    t: np.ndarray

    def __post_init__(self):
        R = np.asarray(self.R, dtype=np.float64).reshape(3, 3)
        t = np.asarray(self.t, dtype=np.float64).reshape(3)
        object.__setattr__(self, "R", R)
        object.__setattr__(self, "t", t)
        if not np.allclose(R.T @ R, np.eye(3), atol=1e-6):
            raise ValueError("rotation is not orthonormal (tolerance 1e-6)")
        if abs(np.linalg.det(R) - 1.0) > 1e-6:
            raise ValueError("rotation determinant must be +1")

    @classmethod
    def identity(cls) -> "Pose":
        return cls(np.eye(3), np.zeros(3))

    @classmethod
    def rot_z(cls, yaw: float, t=(0.0, 0.0, 0.0)) -> "Pose":
        c, s = np.cos(yaw), np.sin(yaw)
        return cls(np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]]), t)

    @classmethod
    def from_matrix(cls, m) -> "Pose":
        m = np.asarray(m, dtype=np.float64)
        return cls(m[:3, :3], m[:3, 3])

    def matrix(self) -> np.ndarray:
        """4x4 homogeneous matrix."""
        m = np.eye(4)
        m[:3, :3] = self.R
        m[:3, 3] = self.t
        return m

    def apply(self, points: np.ndarray) -> np.ndarray:
        pts = np.asarray(points)
        return pts @ self.R.T + self.t

    def inverse(self) -> "Pose":
        return Pose(self.R.T, -(self.R.T @ self.t))

    def compose(self, other: "Pose") -> "Pose":
        """self o other: apply `other` first, then `self`."""
        return Pose(self.R @ other.R, self.R @ other.t + self.t)

    def center(self) -> np.ndarray:
        """Frame-center expression R^T t used for geometric adjacency."""
        return self.R.T @ self.t


@dataclass
class PointCloud:
    """Unordered 3D points with intensity and optional label/source tags."""

    xyz: np.ndarray                       # (N, 3)
    intensity: np.ndarray | None = None   # (N,) float32
    labels: np.ndarray | None = None      # (N,) uint16
    sources: np.ndarray | None = None     # (N,) int32, origin frame index

    def __post_init__(self):
        self.xyz = np.asarray(self.xyz).reshape(-1, 3)
        n = len(self.xyz)
        if self.intensity is None:
            self.intensity = np.zeros(n, np.float32)
        else:
            self.intensity = np.asarray(self.intensity, np.float32).reshape(n)
        if self.labels is not None:
            self.labels = np.asarray(self.labels, np.uint16).reshape(n)
        if self.sources is not None:
            self.sources = np.asarray(self.sources, np.int32).reshape(n)

    def __len__(self) -> int:
        return len(self.xyz)


@dataclass
class LabeledFrame:
    """One captured LiDAR frame: points, per-point labels, and its pose."""

    points: PointCloud
    labels: np.ndarray
    pose: Pose
    time_index: int

    def __post_init__(self):
        self.labels = np.asarray(self.labels, np.uint16).reshape(-1)
        if len(self.labels) != len(self.points):
            raise ValueError(
                f"frame {self.time_index}: {len(self.labels)} labels for "
                f"{len(self.points)} points"
            )


@dataclass(frozen=True)
class Box:
    """Oriented 3D box: center, half-extents along its axes, yaw about z."""

    center: np.ndarray
    half_extents: np.ndarray
    yaw: float

    def __post_init__(self):
        object.__setattr__(self, "center", np.asarray(self.center, np.float64).reshape(3))
        object.__setattr__(self, "half_extents",
                           np.asarray(self.half_extents, np.float64).reshape(3))

    @property
    def volume(self) -> float:
        return float(np.prod(2.0 * self.half_extents))

    def contains(self, points: np.ndarray) -> np.ndarray:
        """Boolean mask of points inside the box (boundary inclusive)."""
        q = np.asarray(points, np.float64) - self.center
        c, s = np.cos(-self.yaw), np.sin(-self.yaw)
        local = np.empty_like(q)
        local[:, 0] = c * q[:, 0] - s * q[:, 1]
        local[:, 1] = s * q[:, 0] + c * q[:, 1]
        local[:, 2] = q[:, 2]
        return np.all(np.abs(local) <= self.half_extents, axis=1)


@dataclass
class BoxTrack:
    """Trajectory of one dynamic object: per-frame box and rigid step motion.

    `motions[i]` moves a material point of the object from its coordinates in
    frame `time_indices[i] - 1` to its coordinates in frame `time_indices[i]`
    (ego motion folded in when frames are given in sensor coordinates).  The
    first motion is conventionally the identity.
    """

    object_id: str
    time_indices: list[int]
    boxes: list[Box]
    motions: list[Pose]

    def __post_init__(self):
        n = len(self.time_indices)
        if not (len(self.boxes) == len(self.motions) == n):
            raise ValueError("time_indices, boxes and motions must align")
        diffs = np.diff(self.time_indices)
        if n > 1 and not np.all(diffs > 0):
            raise ValueError("track time indices must be strictly increasing")

    @property
    def is_contiguous(self) -> bool:
        return len(self.time_indices) <= 1 or bool(
            np.all(np.diff(self.time_indices) == 1)
        )


@dataclass
class WorldModel:
    """Aggregated labeled point set in reference-frame sensor coordinates."""

    points: np.ndarray             # (N, 3) float64
    intensity: np.ndarray          # (N,) float32
    labels: np.ndarray             # (N,) uint16
    sources: np.ndarray            # (N,) int32
    reference_index: int = 0
    voxel_keys: np.ndarray | None = None       # (N,) int64, filled lazily
    voxel_uniq: np.ndarray | None = None       # (V,) int64 unique keys
    voxel_rep_labels: np.ndarray | None = None  # (V,) uint16 majority labels
    _points_f32: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        self.points = np.asarray(self.points, np.float64).reshape(-1, 3)
        n = len(self.points)
        self.intensity = np.asarray(self.intensity, np.float32).reshape(n)
        self.labels = np.asarray(self.labels, np.uint16).reshape(n)
        self.sources = np.asarray(self.sources, np.int32).reshape(n)

    def __len__(self) -> int:
        return len(self.points)

    @property
    def points_f32(self) -> np.ndarray:
        """float32 view of the points, cached for the render hot path."""
        if self._points_f32 is None:
            self._points_f32 = self.points.astype(np.float32)
        return self._points_f32

    def ensure_voxels(self) -> None:
        if self.voxel_keys is None:
            self.voxel_keys = voxel_keys(self.points)
            self.voxel_uniq = np.unique(self.voxel_keys)

    def label_density(self) -> float:
        """Average labeled points per voxel that holds at least one label."""
        self.ensure_voxels()
        labeled = self.labels != UNLABELED
        if not labeled.any():
            return 0.0
        occupied = np.unique(self.voxel_keys[labeled])
        return float(labeled.sum()) / len(occupied)


def voxel_keys(points: np.ndarray, voxel_size: float = VOXEL_SIZE) -> np.ndarray:
    """Pack floor(coordinate / voxel_size) per axis into one int64 key."""
    idx = np.floor(np.asarray(points, np.float64) / voxel_size).astype(np.int64)
    if np.any(np.abs(idx) >= _VOX_OFF):
        raise ValueError("coordinates exceed the packable voxel index range")
    return (
        ((idx[:, 0] + _VOX_OFF) << (2 * _VOX_BITS))
        | ((idx[:, 1] + _VOX_OFF) << _VOX_BITS)
        | (idx[:, 2] + _VOX_OFF)
    )


def unpack_voxel_key(key: int) -> tuple[int, int, int]:
    return (
        int((key >> (2 * _VOX_BITS)) & _VOX_MASK) - _VOX_OFF,
        int((key >> _VOX_BITS) & _VOX_MASK) - _VOX_OFF,
        int(key & _VOX_MASK) - _VOX_OFF,
    )


def select_adjacent(poses, t: int, n: int):
    """Offsets of the n frames whose centers are nearest frame t's center.

    Adjacency is geometric (distance between the pose-center expressions
    R^T t), not temporal; ties break toward smaller |offset|, then smaller
    offset.  Returns offsets sorted ascending.
    """
    if len(poses) == 0:
        raise ValueError("empty pose sequence")
    if not 0 <= t < len(poses):
        raise IndexError(f"reference index {t} outside sequence")
    if n > len(poses):
        raise ValueError(f"cannot select {n} frames from {len(poses)}")
    centers = np.stack([p.center() for p in poses])
    d = np.linalg.norm(centers - centers[t], axis=1)
    offsets = np.arange(len(poses)) - t
    order = sorted(range(len(poses)), key=lambda i: (d[i], abs(offsets[i]), offsets[i]))
    return sorted(int(offsets[i]) for i in order[:n])


def aggregate_static(frames, t: int, offsets) -> WorldModel:
    """Union of motion-compensated frames, in frame t's sensor coordinates.

    Each selected frame's points are mapped through the relative transform
    (pose of frame t)^-1 o (pose of frame t+k); labels, intensity and the
    origin frame index ride along per point.
    """
    ref = frames[t]
    if ref.pose is None:
        raise ValueError(f"frame {t} has no pose")
    ref_inv = ref.pose.inverse()
    xyz, inten, labels, sources = [], [], [], []
    for k in offsets:
        i = t + k
        if not 0 <= i < len(frames):
            raise IndexError(f"offset {k} selects frame {i} outside sequence")
        frame = frames[i]
        if frame.pose is None:
            raise ValueError(f"frame {i} has no pose")
        rel = ref_inv.compose(frame.pose)
        xyz.append(rel.apply(frame.points.xyz))
        inten.append(frame.points.intensity)
        labels.append(frame.labels)
        sources.append(np.full(len(frame.points), frame.time_index, np.int32))
    return WorldModel(
        points=np.concatenate(xyz) if xyz else np.zeros((0, 3)),
        intensity=np.concatenate(inten) if inten else np.zeros(0, np.float32),
        labels=np.concatenate(labels) if labels else np.zeros(0, np.uint16),
        sources=np.concatenate(sources) if sources else np.zeros(0, np.int32),
        reference_index=t,
    )


def accumulate_dynamic(frames, track: BoxTrack) -> PointCloud:
    """Accumulate one object's points across frames, canceling its motion.

    Walks the track in time order keeping a running transform that chains the
    inverse per-frame motions; each frame contributes its in-box points mapped
    by the running transform, so the output is expressed at the object's pose
    in the track's first frame.  Frames not covered by the track contribute
    nothing.
    """
    if not track.is_contiguous:
        raise ValueError(f"track {track.object_id} skips frame indices")
    by_index = {f.time_index: f for f in frames}
    running = Pose.identity()
    xyz, inten, labels, sources = [], [], [], []
    for idx, box, motion in zip(track.time_indices, track.boxes, track.motions):
        if box.volume <= 0.0:
            raise ValueError(f"track {track.object_id}: zero-volume box at frame {idx}")
        running = running.compose(motion.inverse())
        frame = by_index.get(idx)
        if frame is None:
            raise KeyError(f"track {track.object_id} references missing frame {idx}")
        mask = box.contains(frame.points.xyz)
        if not mask.any():
            continue
        xyz.append(running.apply(frame.points.xyz[mask]))
        inten.append(frame.points.intensity[mask])
        labels.append(frame.labels[mask])
        sources.append(np.full(int(mask.sum()), idx, np.int32))
    if not xyz:
        return PointCloud(np.zeros((0, 3)), labels=np.zeros(0, np.uint16),
                          sources=np.zeros(0, np.int32))
    return PointCloud(
        np.concatenate(xyz),
        intensity=np.concatenate(inten),
        labels=np.concatenate(labels),
        sources=np.concatenate(sources),
    )


def _majority_per_voxel(keys: np.ndarray, labels: np.ndarray):
    """Modal label per voxel key; ties go to the smaller class id.

    Returns (unique keys, winning labels), considering only the given
    (key, label) pairs.
    """
    if len(keys) == 0:
        return np.zeros(0, np.int64), np.zeros(0, np.uint16)
    order = np.lexsort((labels, keys))
    k, l = keys[order], labels[order]
    # Run lengths of identical (key, label) pairs.
    pair_change = np.empty(len(k), bool)
    pair_change[0] = True
    pair_change[1:] = (k[1:] != k[:-1]) | (l[1:] != l[:-1])
    starts = np.flatnonzero(pair_change)
    counts = np.diff(np.append(starts, len(k)))
    pk, pl = k[starts], l[starts]
    # Within each key, pick the largest count; lexsort already ordered equal
    # counts by ascending label, and a stable sort keeps that order.
    sel = np.lexsort((-counts, pk))
    pk, pl, counts = pk[sel], pl[sel], counts[sel]
    first = np.empty(len(pk), bool)
    first[0] = True
    first[1:] = pk[1:] != pk[:-1]
    return pk[first], pl[first]


def vote_and_propagate(world: WorldModel, unlabeled: PointCloud | None = None,
                       voxel_size: float = VOXEL_SIZE):
    """Per-voxel majority voting with label propagation.

    Voxelizes at `voxel_size`; in each voxel the modal label over labeled
    members (ties to the smaller class id) overwrites every labeled member
    and is assigned to unlabeled points sharing the voxel.  Unlabeled points
    in voxels without any labeled member keep the sentinel.  Returns
    (world labels, labels for `unlabeled`); the second element is None when
    no extra cloud was given.  Updates the world's voxel index in place.
    """
    if len(world) == 0:
        raise ValueError("cannot vote on an empty world model")
    keys = voxel_keys(world.points, voxel_size)
    labeled = world.labels != UNLABELED
    uniq_keys, rep = _majority_per_voxel(keys[labeled], world.labels[labeled])

    def lookup(target_keys):
        pos = np.searchsorted(uniq_keys, target_keys)
        pos_c = np.minimum(pos, len(uniq_keys) - 1) if len(uniq_keys) else pos
        hit = np.zeros(len(target_keys), bool)
        if len(uniq_keys):
            hit = uniq_keys[pos_c] == target_keys
        out = np.full(len(target_keys), UNLABELED, np.uint16)
        out[hit] = rep[pos_c[hit]]
        return out

    world_labels = lookup(keys)
    world.voxel_keys = keys
    world.voxel_uniq = np.unique(keys)
    world.voxel_rep_labels = lookup(world.voxel_uniq)
    if unlabeled is None:
        return world_labels, None
    if len(unlabeled) == 0:
        return world_labels, np.zeros(0, np.uint16)
    return world_labels, lookup(voxel_keys(unlabeled.xyz, voxel_size))


def _place_track(xyz: np.ndarray, track: BoxTrack, t: int, by_index, ref_inv):
    """Map accumulated object points to the object's pose in frame t."""
    if t in track.time_indices:
        stop = track.time_indices.index(t)
        running = Pose.identity()
        for motion in track.motions[: stop + 1]:
            running = running.compose(motion.inverse())
        return running.inverse().apply(xyz)
    # Object unseen at the reference time: freeze it at its first observed
    # pose, ego-compensated into frame-t coordinates.
    ego = ref_inv.compose(by_index[track.time_indices[0]].pose)
    return ego.apply(xyz)


def build_world_model(frames, t: int, n: int, tracks=(),
                      dynamic_window: int | None = None,
                      dynamic_classes: frozenset = frozenset(),
                      vote: bool = True) -> WorldModel:
    """Full construction at reference frame t: select, aggregate, vote.

    With `tracks`, each object's points are cut from the static aggregation
    by its per-frame boxes, accumulated with motion canceled, and composited
    back at the object's pose in frame t.  Without tracks, `dynamic_window`
    optionally restricts points of the given dynamic classes to frames within
    that temporal distance of t (dynamic content handled as static otherwise).
    """
    offsets = select_adjacent([f.pose for f in frames], t, n)
    world = aggregate_static(frames, t, offsets)

    if tracks:
        by_index = {f.time_index: f for f in frames}
        contributed = {frames[t + k].time_index for k in offsets}
        ref_inv = frames[t].pose.inverse()
        keep = np.ones(len(world), bool)
        parts = []
        for track in tracks:
            # Cut the object's raw points out of the static union.
            for idx, box in zip(track.time_indices, track.boxes):
                if idx not in contributed:
                    continue
                rel = ref_inv.compose(by_index[idx].pose)
                sel = np.flatnonzero(world.sources == idx)
                if len(sel):
                    inside = box.contains(rel.inverse().apply(world.points[sel]))
                    keep[sel[inside]] = False
            acc = accumulate_dynamic(frames, track)
            if len(acc):
                pts = _place_track(acc.xyz, track, t, by_index, ref_inv)
                parts.append((pts, acc.intensity, acc.labels, acc.sources))
        world = WorldModel(
            points=np.concatenate([world.points[keep]] + [p[0] for p in parts]),
            intensity=np.concatenate([world.intensity[keep]] + [p[1] for p in parts]),
            labels=np.concatenate([world.labels[keep]] + [p[2] for p in parts]),
            sources=np.concatenate([world.sources[keep]] + [p[3] for p in parts]),
            reference_index=t,
        )
    elif dynamic_window is not None and dynamic_classes:
        dyn = np.isin(world.labels, np.fromiter(dynamic_classes, np.uint16))
        far = np.abs(world.sources - frames[t].time_index) > dynamic_window
        keep = ~(dyn & far)
        world = WorldModel(world.points[keep], world.intensity[keep],
                           world.labels[keep], world.sources[keep],
                           reference_index=t)

    if vote and len(world):
        world.labels, _ = vote_and_propagate(world)
    return world
