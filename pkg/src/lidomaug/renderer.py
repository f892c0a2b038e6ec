"""Range-map rendering of world models with z-buffer occlusion handling.

The hot path runs in float32 over a transposed (3, N) point layout so every
elementwise pass is contiguous.  Each point's range and tie-break rank are
packed into one uint64 key (positive IEEE-754 floats compare like their bit
patterns), so a single scatter-min resolves both occlusion and winner
identity: ties on the exact range value go to the lower source frame index,
then the lower original point index.  Rows outside the field of view land in
two trash rows bordering the image, which avoids per-point masking.  A
brute-force nearest-per-pixel scan over the same projected coordinates
reproduces renders bit for bit.
"""

from __future__ import annotations

import threading
from concurrent.futures import ThreadPoolExecutor

import numpy as np

from .sensor_model import LidarConfig, RangeMap, project_arrays
from .world_model import Pose, PointCloud, WorldModel

NO_KEY = np.uint64(0xFFFFFFFFFFFFFFFF)

_scratch = threading.local()


def _fresh_buffers(n: int) -> dict:
    return {
        "n": n,
        "q": np.empty((3, n), np.float32),
        "r": np.empty(n, np.float32),
        "tmp": np.empty(n, np.float32),
        "u": np.empty(n, np.float32),
        "v": np.empty(n, np.float32),
        "iu": np.empty(n, np.int32),
        "iv": np.empty(n, np.int32),
        "mask": np.empty(n, bool),
        "key": np.empty(n, np.uint64),
    }


def _buffers(n: int) -> dict:
    """Per-thread reusable scratch arrays for an n-point projection pass.

    Keyed by point count so a pipeline alternating between the world render
    and the much smaller distortion re-render keeps both workspaces warm.
    """
    store = getattr(_scratch, "store", None)
    if store is None:
        store = {}
        _scratch.store = store
    buf = store.get(n)
    if buf is None:
        if len(store) >= 4:
            store.clear()
        buf = _fresh_buffers(n)
        store[n] = buf
    return buf


def _project_f32(pts_t: np.ndarray, pose: Pose | None, config: LidarConfig,
                 buf: dict):
    """Transform and project a (3, n) float32 point block.

    Fills the buffer's u, v, r arrays; the exact op sequence here defines the
    renderer's geometry, and the brute-force oracle consumes it unchanged so
    bitwise comparison is meaningful.
    """
    if pose is not None:
        q = buf["q"]
        np.matmul(pose.R.astype(np.float32), pts_t, out=q)
        t32 = pose.t.astype(np.float32)
        for axis in range(3):
            np.add(q[axis], t32[axis], out=q[axis])
    else:
        q = pts_t
    x, y, z = q[0], q[1], q[2]

    r, tmp = buf["r"], buf["tmp"]
    np.multiply(x, x, out=r)
    np.multiply(y, y, out=tmp)
    np.add(r, tmp, out=r)
    np.multiply(z, z, out=tmp)
    np.add(r, tmp, out=r)
    np.sqrt(r, out=r)

    with np.errstate(invalid="ignore", divide="ignore"):
        project_arrays(x, y, z, r, config, out_u=buf["u"], out_v=buf["v"])
    return buf["u"], buf["v"], r


def project_points_f32(world: WorldModel, config: LidarConfig,
                       pose: Pose | None = None):
    """Continuous float32 (u, v, r) of every world point, hot-path semantics.

    Support surface for verification: same transform, norm and projection op
    sequence as `render`, without the scatter machinery.
    """
    pts_t = _world_render_state(world)[0]
    u, v, r = _project_f32(pts_t, pose, config, _fresh_buffers(pts_t.shape[1]))
    return u, v, r


def tie_ranks(sources: np.ndarray) -> tuple[np.ndarray, np.ndarray | None]:
    """uint64 ranks ordering points by (source, index), packed for the key.

    Returns (ranks, perm).  When the packed form `source << bits | index`
    fits in 32 bits, perm is None and the low bits of a rank are the point
    index; otherwise ranks come from a lexicographic sort and `perm` maps a
    rank back to its point index.
    """
    n = len(sources)
    bits = max(int(n - 1).bit_length(), 1)
    max_src = int(sources.max(initial=0))
    if max_src < (1 << (32 - bits)):
        ranks = (sources.astype(np.uint64) << np.uint64(bits)) \
            | np.arange(n, dtype=np.uint64)
        return ranks, None
    perm = np.lexsort((np.arange(n), sources))
    ranks = np.empty(n, np.uint64)
    ranks[perm] = np.arange(n, dtype=np.uint64)
    return ranks, perm


def _world_render_state(world: WorldModel):
    """Cached per-world arrays the renderer consumes: transposed float32
    points, packed tie-break ranks, and the rank layout."""
    state = getattr(world, "_render_state", None)
    if state is None:
        pts_t = np.ascontiguousarray(world.points.T, dtype=np.float32)
        ranks, perm = tie_ranks(world.sources)
        idx_bits = np.uint64(max(int(len(world) - 1).bit_length(), 1))
        state = (pts_t, ranks, perm, idx_bits)
        world._render_state = state
    return state


def augment_pose(world: WorldModel, pose: Pose) -> WorldModel:
    """World model with every point mapped by the rigid transform."""
    return WorldModel(
        points=pose.apply(world.points),
        intensity=world.intensity,
        labels=world.labels,
        sources=world.sources,
        reference_index=world.reference_index,
    )


def _scatter_chunk(pts_t, ranks, lo, hi, config, pose):
    """Project one slice of the transposed points and scatter-min the packed
    (range, rank) keys into a fresh (H+2) x W key buffer."""
    h, w = config.shape
    buf = _buffers(hi - lo)
    u, v, r = _project_f32(pts_t[:, lo:hi], pose, config, buf)

    # Rows shift up by one so out-of-view and NaN rows fall into the trash
    # rows 0 and H+1 (floor first: the +1 is then exact in float32).
    iu, iv = buf["iu"], buf["iv"]
    np.floor(v, out=v)
    np.add(v, np.float32(1.0), out=v)
    np.fmax(v, np.float32(0.0), out=v)          # NaN lands in the trash row
    np.fmin(v, np.float32(h + 1.0), out=v)
    iv[:] = v
    # Bound u before the cast: NaN coordinates already fall into a trash row
    # via v, this keeps their column index harmless too.
    np.fmax(u, np.float32(0.0), out=u)
    np.fmin(u, np.float32(w), out=u)
    iu[:] = u                                   # truncation: u >= 0
    np.greater_equal(iu, w, out=buf["mask"])    # azimuth exactly -pi wraps
    np.subtract(iu, w, out=iu, where=buf["mask"])
    np.multiply(iv, np.int32(w), out=iv)
    np.add(iv, iu, out=iv)

    key = buf["key"]
    key[:] = r.view(np.uint32)
    np.left_shift(key, np.uint64(32), out=key)
    np.bitwise_or(key, ranks[lo:hi], out=key)

    mink = np.full((h + 2) * w, NO_KEY)
    np.minimum.at(mink, iv, key)
    return mink


def render(world: WorldModel, config: LidarConfig, pose: Pose | None = None,
           workers: int = 1) -> RangeMap:
    """Render a world model into a range map for the given configuration.

    Each point is projected to its pixel; per pixel the candidate with
    minimal range within (0, max_range] wins and its range, label, intensity
    and source are written.  Points outside the vertical field of view are
    dropped silently.  `workers` > 1 partitions the scatter over a thread
    pool; merging packed keys by elementwise minimum makes the result
    identical to the sequential render.
    """
    if len(world) == 0:
        raise ValueError("cannot render an empty world model")
    pts_t, ranks, perm, idx_bits = _world_render_state(world)
    n = len(world)
    h, w = config.shape

    if workers <= 1 or n < 4 * workers:
        mink = _scatter_chunk(pts_t, ranks, 0, n, config, pose)
    else:
        bounds = np.linspace(0, n, workers + 1, dtype=int)
        with ThreadPoolExecutor(max_workers=workers) as pool:
            futs = [pool.submit(_scatter_chunk, pts_t, ranks, a, b, config, pose)
                    for a, b in zip(bounds[:-1], bounds[1:])]
            parts = [f.result() for f in futs]
        mink = parts[0]
        for part in parts[1:]:
            np.minimum(mink, part, out=mink)

    core = mink[w:-w]                            # strip the trash rows
    r_bits = (core >> np.uint64(32)).astype(np.uint32)
    r_win = r_bits.view(np.float32)
    win = (core != NO_KEY) & (r_win <= np.float32(config.max_range))
    if perm is None:
        idx = (core[win] & ((np.uint64(1) << idx_bits) - np.uint64(1))).astype(np.int64)
    else:
        idx = perm[(core[win] & np.uint64(0xFFFFFFFF)).astype(np.int64)]

    out = RangeMap.empty(config)
    flat = np.flatnonzero(win)
    out.range.reshape(-1)[flat] = r_win[win]
    out.label.reshape(-1)[flat] = world.labels[idx]
    out.intensity.reshape(-1)[flat] = world.intensity[idx]
    out.source.reshape(-1)[flat] = world.sources[idx]
    out.valid.reshape(-1)[flat] = True
    return out


_angle_tables: dict = {}


def _pixel_center_tables(config: LidarConfig):
    """Per-config cos/sin of every pixel-center azimuth and elevation.

    Table entries are computed with the exact expressions back_project uses,
    so looking them up reproduces back_project at pixel centers bit for bit.
    """
    tables = _angle_tables.get(config)
    if tables is None:
        h, w = config.shape
        az = np.pi * (1.0 - 2.0 * (np.arange(w) + 0.5) / w)
        el = config.fov_up - ((np.arange(h) + 0.5) / h) * config.fov
        tables = (np.cos(el), np.sin(el), np.cos(az), np.sin(az))
        if len(_angle_tables) > 64:
            _angle_tables.clear()
        _angle_tables[config] = tables
    return tables


def pixel_points(rmap: RangeMap):
    """(rows, cols, xyz) of every valid pixel, back-projected at its center."""
    iv, iu = np.nonzero(rmap.valid)
    if len(iv) == 0:
        return iv, iu, np.zeros((0, 3))
    cos_el, sin_el, cos_az, sin_az = _pixel_center_tables(rmap.config)
    r = rmap.range[iv, iu].astype(np.float64)
    ce = cos_el[iv]
    rce = r * ce
    xyz = np.stack([rce * cos_az[iu], rce * sin_az[iu], r * sin_el[iv]],
                   axis=-1)
    return iv, iu, xyz


def extract_cloud(rmap: RangeMap) -> PointCloud:
    """Back-project every valid pixel at its center to a labeled point cloud."""
    iv, iu, xyz = pixel_points(rmap)
    if len(iv) == 0:
        return PointCloud(np.zeros((0, 3), np.float32),
                          labels=np.zeros(0, np.uint16),
                          sources=np.zeros(0, np.int32))
    return PointCloud(
        xyz.astype(np.float32),
        intensity=rmap.intensity[iv, iu],
        labels=rmap.label[iv, iu],
        sources=rmap.source[iv, iu],
    )
