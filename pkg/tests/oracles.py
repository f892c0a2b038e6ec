"""Independent reference implementations the fast paths are checked against.

Each oracle favors obviousness over speed: python loops, dicts and
exhaustive enumeration instead of vectorized scatter tricks.  Where bitwise
agreement is asserted (the z-buffer), the oracle consumes the same projected
coordinates but selects winners with its own logic.
"""

from __future__ import annotations

import itertools
from collections import Counter, defaultdict

import numpy as np

from lidomaug.sensor_model import RangeMap
from lidomaug.world_model import UNLABELED


def brute_force_render(world, config, pose=None):
    """Nearest-per-pixel scan: group candidates per pixel, take the
    lexicographic minimum of (range, source, original index).

    Consumes the renderer's projected (u, v, r) so bitwise comparison is
    meaningful, but bins, filters and selects winners with its own python
    logic (the machinery under test is the packed-key scatter-min).
    """
    from lidomaug.renderer import project_points_f32

    u, v, r = project_points_f32(world, config, pose)
    h, w = config.shape
    buckets = defaultdict(list)
    for i in range(len(u)):
        vf = np.floor(v[i])
        if not (vf >= 0.0 and vf < h):   # also drops NaN rows
            continue
        if not (r[i] > 0.0 and r[i] <= np.float32(config.max_range)):
            continue
        iu = int(u[i])                   # truncation, as in the hot path
        if iu >= w:
            iu -= w
        buckets[(int(vf), iu)].append((float(r[i]), int(world.sources[i]), i))
    out = RangeMap.empty(config)
    for (iv, iu), cands in buckets.items():
        rng, _, idx = min(cands)
        out.range[iv, iu] = np.float32(rng)
        out.label[iv, iu] = world.labels[idx]
        out.intensity[iv, iu] = world.intensity[idx]
        out.source[iv, iu] = world.sources[idx]
        out.valid[iv, iu] = True
    return out


def exhaustive_adjacent(poses, t, n):
    """All minimum-cost n-subsets of offsets by total center distance."""
    centers = [p.center() for p in poses]
    d = [float(np.linalg.norm(c - centers[t])) for c in centers]
    offsets = [i - t for i in range(len(poses))]
    best_cost, best_sets = None, []
    for combo in itertools.combinations(range(len(poses)), n):
        cost = sum(d[i] for i in combo)
        key = round(cost, 12)
        if best_cost is None or key < best_cost:
            best_cost, best_sets = key, [sorted(offsets[i] for i in combo)]
        elif key == best_cost:
            best_sets.append(sorted(offsets[i] for i in combo))
    return best_cost, best_sets


def greedy_adjacent_with_ties(poses, t, n):
    """Reference selection: sort by (distance, |offset|, offset), take n."""
    centers = [p.center() for p in poses]
    d = [float(np.linalg.norm(c - centers[t])) for c in centers]
    ranked = sorted(range(len(poses)), key=lambda i: (d[i], abs(i - t), i - t))
    return sorted(i - t for i in ranked[:n])


def brute_force_vote(points, labels, extra_points=None, voxel_size=0.1):
    """Dict-and-Counter voter: modal label per voxel over labeled members
    (ties to the smaller id), overwritten onto members and propagated to
    unlabeled points sharing the voxel."""
    def key(p):
        return tuple(int(np.floor(c / voxel_size)) for c in p)

    votes = defaultdict(Counter)
    for p, l in zip(points, labels):
        if l != UNLABELED:
            votes[key(p)][int(l)] += 1
    winners = {}
    for k, counter in votes.items():
        top = max(counter.values())
        winners[k] = min(l for l, c in counter.items() if c == top)
    out = np.array([winners.get(key(p), UNLABELED) for p in points],
                   dtype=np.uint16)
    if extra_points is None:
        return out, None
    extra = np.array([winners.get(key(p), UNLABELED) for p in extra_points],
                     dtype=np.uint16)
    return out, extra


def compose_homogeneous(*poses):
    """4x4 matrix product oracle for pose composition (leftmost applied last)."""
    m = np.eye(4)
    for pose in poses:
        m = m @ pose.matrix()
    return m


def resample_destinations(width, spin_omega, yaw_rate):
    """Direct evaluation of the azimuth rescaling: column -> floor(scaled)."""
    scale = (spin_omega + yaw_rate) / spin_omega
    return [int(np.floor(u * scale)) for u in range(width)]
