"""Acceptance suite: one test per acceptance criterion, each printing a
PASS/FAIL line (run with -s to see them inline).

Criteria are asserted at their stated tolerances.  The throughput targets
reference a commodity desktop CPU; the measured numbers and the equivalent
FPS are printed for comparison either way.
"""

import os
import time

import numpy as np
import pytest

from lidomaug import dataset_io
from lidomaug.cli import main
from lidomaug.distortion import MotionParams, distort, resample_columns, travel_displacement
from lidomaug.mixer import mix, sample_sectors
from lidomaug.pipeline import AugmentSpec, augment
from lidomaug.renderer import render
from lidomaug.sensor_model import TWO_PI, back_project, preset, preset_names, project
from lidomaug.world_model import (LabeledFrame, PointCloud, Pose, WorldModel,
                                  aggregate_static, select_adjacent,
                                  vote_and_propagate)

from conftest import frame_from, in_fov_points, random_config, random_pose, random_world
from oracles import brute_force_render, brute_force_vote, exhaustive_adjacent


def report(name: str, ok: bool, detail: str = ""):
    print(f"[{'PASS' if ok else 'FAIL'}] {name}" + (f" — {detail}" if detail else ""))
    assert ok, f"{name}: {detail}"


def street_world(rng, n):
    """Street-scene-like synthetic world: points inside a V64 elevation band."""
    el = rng.uniform(-0.43, 0.035, n)
    az = rng.uniform(-np.pi, np.pi, n)
    r = rng.uniform(2.0, 110.0, n)
    pts = np.stack([r * np.cos(el) * np.cos(az),
                    r * np.cos(el) * np.sin(az),
                    r * np.sin(el)], axis=1)
    return WorldModel(pts, rng.random(n).astype(np.float32),
                      rng.integers(0, 20, n).astype(np.uint16),
                      rng.integers(0, 40, n).astype(np.int32))


class TestProjectionRoundTrip:
    def test_quantized_round_trip_bound_all_presets(self):
        rng = np.random.default_rng(101)
        t0 = time.perf_counter()
        worst_frac = 0.0
        for name in preset_names():
            config = preset(name)
            pts = in_fov_points(rng, config, 10_000)
            u, v, r = project(pts, config)
            qu = np.floor(u)
            qu[qu >= config.horiz_res_w] -= config.horiz_res_w
            qv = np.minimum(np.floor(v), config.channels_h - 1)
            back = back_project(qu + 0.5, qv + 0.5, r, config)
            err = np.linalg.norm(back - pts, axis=1)
            bound = r * (TWO_PI / config.horiz_res_w
                         + config.fov / config.channels_h)
            frac = float(np.max(err / bound))
            worst_frac = max(worst_frac, frac)
            if not np.all(err <= bound):
                report(f"projection round trip [{name}]", False,
                       f"{np.sum(err > bound)} points exceed the bound")
        elapsed = time.perf_counter() - t0
        report("projection round trip", elapsed < 1.0 and worst_frac <= 1.0,
               f"5 presets x 10^4 points, worst error {worst_frac:.3f} of "
               f"bound, {elapsed * 1e3:.0f} ms (< 1 s)")


class TestZBufferOracle:
    def test_render_equals_brute_force_100_clouds(self):
        rng = np.random.default_rng(202)
        t0 = time.perf_counter()
        for trial in range(100):
            config = random_config(rng, max_h=32, max_w=512)
            n = int(rng.integers(100, 5001))
            world = random_world(rng, n, span=float(rng.uniform(20, 120)))
            fast = render(world, config)
            slow = brute_force_render(world, config)
            if not fast.same_content(slow):
                report("z-buffer oracle", False,
                       f"mismatch on cloud {trial} ({n} points, "
                       f"{config.channels_h}x{config.horiz_res_w})")
        elapsed = time.perf_counter() - t0
        report("z-buffer oracle", elapsed < 30.0,
               f"100 clouds bit-exact, {elapsed:.1f} s (< 30 s)")


class TestAdjacencyOracle:
    def test_selection_and_invariance_200_sequences(self):
        rng = np.random.default_rng(303)
        for trial in range(200):
            length = int(rng.integers(2, 13))
            poses = [random_pose(rng, span=15.0) for _ in range(length)]
            t = int(rng.integers(0, length))
            n = int(rng.integers(1, length + 1))
            got = select_adjacent(poses, t, n)
            best_cost, best_sets = exhaustive_adjacent(poses, t, n)
            cost = sum(np.linalg.norm(poses[t + k].center() - poses[t].center())
                       for k in got)
            if round(cost, 12) > best_cost + 1e-9:
                report("adjacency oracle", False,
                       f"sequence {trial}: cost {cost} > optimum {best_cost}")
            # Frame invariance of the aggregate under a common rigid motion.
            frames = [
                frame_from(rng.uniform(-10, 10, (20, 3)),
                           rng.integers(1, 5, 20).astype(np.uint16), p, i)
                for i, p in enumerate(poses)
            ]
            g = random_pose(rng)
            moved = [LabeledFrame(f.points, f.labels, g.compose(f.pose),
                                  f.time_index) for f in frames]
            w1 = aggregate_static(frames, t, got)
            w2 = aggregate_static(moved, t, got)
            drift = float(np.abs(w1.points - w2.points).max())
            if drift > 1e-9:
                report("adjacency oracle", False,
                       f"sequence {trial}: aggregate drifted {drift:.2e}")
        report("adjacency oracle", True,
               "200 sequences optimal; aggregates invariant within 1e-9")


class TestDynamicCollapse:
    def test_rigid_track_collapses(self):
        from lidomaug.world_model import Box, BoxTrack, accumulate_dynamic
        rng = np.random.default_rng(404)
        half = np.array([1.1, 0.7, 0.5])
        template = rng.uniform(-1, 1, (40, 3)) * (half * 0.9)
        step = Pose.rot_z(0.15, (1.2, -0.3, 0.02))
        frames, boxes, motions = [], [], []
        obj_pose = Pose(np.eye(3), (5.0, 1.0, 0.0))
        for n in range(5):
            pts = obj_pose.apply(template)
            frames.append(frame_from(pts, np.full(40, 11, np.uint16),
                                     Pose.identity(), n))
            boxes.append(Box(obj_pose.t, half + 0.3,
                             np.arctan2(obj_pose.R[1, 0], obj_pose.R[0, 0])))
            motions.append(Pose.identity() if n == 0 else step)
            obj_pose = step.compose(obj_pose)
        acc = accumulate_dynamic(frames, BoxTrack("o", list(range(5)),
                                                  boxes, motions))
        first = Pose(np.eye(3), (5.0, 1.0, 0.0)).apply(template)
        spread = max(
            float(np.abs(acc.xyz[s:s + 40] - first).max())
            for s in range(0, 200, 40)
        )
        report("dynamic accumulation collapse", spread <= 1e-9,
               f"5-frame rigid track, max spread {spread:.2e} (<= 1e-9)")


class TestVotingOracle:
    def test_100_random_voxel_populations(self):
        rng = np.random.default_rng(505)
        for trial in range(100):
            n = int(rng.integers(1, 200))
            pts = rng.uniform(-1.5, 1.5, (n, 3))
            labels = rng.integers(0, 6, n).astype(np.uint16)
            extra = rng.uniform(-1.5, 1.5, (int(rng.integers(1, 60)), 3))
            world = WorldModel(pts, np.zeros(n, np.float32), labels,
                               np.zeros(n, np.int32))
            got, got_extra = vote_and_propagate(world, PointCloud(extra))
            want, want_extra = brute_force_vote(pts, labels, extra)
            if not (np.array_equal(got, want)
                    and np.array_equal(got_extra, want_extra)):
                report("label voting oracle", False, f"population {trial}")
            world.labels = got
            twice, _ = vote_and_propagate(world)
            if not np.array_equal(twice, got):
                report("label voting oracle", False,
                       f"population {trial}: not idempotent")
        report("label voting oracle", True,
               "100 populations match the brute-force voter; idempotent")


class TestDistortion:
    SPIN = 2.0 * np.pi * 20.0

    def test_identity_bit_exact(self):
        rng = np.random.default_rng(606)
        rmap = render(street_world(rng, 30_000), preset("V64"))
        out = distort(rmap, MotionParams(0.0, 0.0, self.SPIN))
        report("distortion identity", out.same_content(rmap),
               "V=0, yaw rate=0 returns a bit-identical map")

    def test_full_scan_displacement_one_meter(self):
        # 72 km/h = 20 m/s; a 20 Hz sweep lasts 50 ms; 20 * 0.05 = 1.000 m.
        d = travel_displacement(2048, 72.0 / 3.6, self.SPIN, 2048)
        report("distortion displacement", abs(d - 1.0) <= 1e-6,
               f"full sweep at 72 km/h, 20 Hz: {d:.9f} m (1.000 ± 1e-6)")

    def test_matched_rates_double_columns_exactly(self):
        rng = np.random.default_rng(607)
        rmap = render(street_world(rng, 30_000), preset("V64"))
        out = resample_columns(rmap, MotionParams(0.0, self.SPIN, self.SPIN))
        w = rmap.config.horiz_res_w
        ok = all(
            np.array_equal(out.range[:, 2 * u], rmap.range[:, u])
            and np.array_equal(out.valid[:, 2 * u], rmap.valid[:, u])
            for u in range(w // 2)
        ) and int(out.valid[:, 1::2].sum()) == 0
        report("distortion resampling", ok,
               "yaw rate = spin rate doubles every azimuth coordinate")


class TestMixProvenance:
    def test_provenance_and_partition(self):
        rng = np.random.default_rng(707)
        config = preset("O64")
        maps = []
        for tag in range(3):
            world = street_world(rng, 20_000)
            world.sources[:] = tag
            world._render_state = None
            maps.append(render(world, config))
        sectors = sample_sectors(np.random.default_rng(7), 3)
        arcs = sum(e - s for s, e, _ in sectors)
        out = mix(maps, sectors)
        pure = True
        for col in range(config.horiz_res_w):
            colv = out.valid[:, col]
            if not colv.any():
                continue
            owner = int(out.source[colv.argmax(), col])
            m = maps[owner]
            if not (np.array_equal(out.range[:, col], m.range[:, col])
                    and np.array_equal(out.label[:, col], m.label[:, col])
                    and np.array_equal(out.valid[:, col], m.valid[:, col])):
                pure = False
                break
        report("mix provenance", pure and abs(arcs - TWO_PI) <= 1e-12,
               f"every pixel bit-matches one input; arcs sum to 2*pi "
               f"within {abs(arcs - TWO_PI):.1e}")


@pytest.fixture(scope="module")
def cli_world(tmp_path_factory):
    rng = np.random.default_rng(808)
    world = street_world(rng, 40_000)
    path = tmp_path_factory.mktemp("acc") / "world.lwmc"
    dataset_io.cache_world(world, path)
    return path


class TestDeterminism:
    def test_cli_augment_20_seed_sweep(self, cli_world, tmp_path):
        mismatches = 0
        for seed in range(20):
            digests = []
            for run in ("a", "b"):
                prefix = tmp_path / f"s{seed}{run}" / "frame"
                code = main(["augment", "--world", str(cli_world),
                             "--out", str(prefix), "--seed", str(seed),
                             "--n-mix", "1"])
                assert code == 0
                blob = b"".join(
                    (tmp_path / f"s{seed}{run}" / f"frame{ext}").read_bytes()
                    for ext in (".bin", ".label", ".png"))
                digests.append(blob)
            if digests[0] != digests[1]:
                mismatches += 1
        report("seeded determinism", mismatches == 0,
               f"20-seed sweep, {mismatches} byte-level mismatches")


@pytest.fixture(scope="module")
def big_world(tmp_path_factory):
    rng = np.random.default_rng(909)
    world = street_world(rng, 1_000_000)
    path = tmp_path_factory.mktemp("bench") / "big.lwmc"
    dataset_io.cache_world(world, path)
    return dataset_io.load_world(path)


def _measure(world, workers: int, iters: int = 25) -> float:
    spec = AugmentSpec(seed=11, n_mix=1, fixed_preset="V64", workers=workers)
    augment([world], spec)  # warm scratch buffers and caches
    lats = sorted(augment([world], spec.with_seed(11 + i)).latency_ms
                  for i in range(iters))
    return lats[iters // 2]


class TestThroughput:
    def test_single_thread_median(self, big_world):
        med = _measure(big_world, workers=1)
        fps = 1000.0 / med
        report("throughput single-threaded", med <= 25.0,
               f"10^6-point world -> 64x2048: median {med:.1f} ms "
               f"({fps:.0f} FPS; GPU reference figure is 330 FPS on an "
               f"RTX 3090; target <= 25 ms on a commodity desktop CPU)")

    @pytest.mark.skipif(os.cpu_count() < 8,
                        reason="8-worker target presumes >= 8 CPU cores; "
                               f"this host has {os.cpu_count()}")
    def test_eight_worker_median(self, big_world):
        med = _measure(big_world, workers=8)
        report("throughput 8 workers", med <= 10.0,
               f"median {med:.1f} ms with 8 workers "
               f"({1000.0 / med:.0f} FPS; target <= 10 ms)")

    def test_worker_results_identical(self, big_world):
        spec = AugmentSpec(seed=77, n_mix=1, fixed_preset="V64")
        base = augment([big_world], spec)
        multi = augment([big_world], AugmentSpec(seed=77, n_mix=1,
                                                 fixed_preset="V64", workers=4))
        report("parallel render exactness",
               base.range_map.same_content(multi.range_map),
               "4-worker render bit-identical to sequential")
