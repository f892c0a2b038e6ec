import numpy as np
import pytest

from lidomaug.sensor_model import LidarConfig
from lidomaug.world_model import LabeledFrame, PointCloud, Pose, WorldModel


def random_rotation(rng):
    """Uniform-ish random rotation via QR of a Gaussian matrix."""
    q, r = np.linalg.qr(rng.normal(size=(3, 3)))
    q *= np.sign(np.diag(r))
    if np.linalg.det(q) < 0:
        q[:, 0] = -q[:, 0]
    return q


def random_pose(rng, span=10.0):
    return Pose(random_rotation(rng), rng.uniform(-span, span, 3))


def random_world(rng, n=2000, span=40.0, n_sources=3, n_classes=8):
    """Synthetic labeled world model with points in a box around the origin."""
    return WorldModel(
        points=rng.uniform(-span, span, (n, 3)),
        intensity=rng.random(n).astype(np.float32),
        labels=rng.integers(0, n_classes, n).astype(np.uint16),
        sources=rng.integers(0, n_sources, n).astype(np.int32),
    )


def random_config(rng, max_h=32, max_w=512):
    h = int(rng.integers(4, max_h + 1))
    w = int(rng.integers(32, max_w + 1))
    f_up = float(rng.uniform(0.02, np.pi / 8))
    f_down = float(rng.uniform(-np.pi / 6, -0.02))
    return LidarConfig(h, w, f_up, f_down, float(rng.uniform(60.0, 140.0)))


def in_fov_points(rng, config, n, r_lo=1.0, r_hi=None):
    """Points with elevation strictly inside the field of view."""
    r_hi = r_hi if r_hi is not None else config.max_range
    margin = 1e-4 * config.fov
    el = rng.uniform(config.fov_down + margin, config.fov_up - margin, n)
    az = rng.uniform(-np.pi, np.pi, n)
    r = rng.uniform(r_lo, r_hi, n)
    return np.stack([
        r * np.cos(el) * np.cos(az),
        r * np.cos(el) * np.sin(az),
        r * np.sin(el),
    ], axis=1)


def frame_from(points, labels, pose, time_index, intensity=None):
    return LabeledFrame(PointCloud(points, intensity=intensity),
                        labels, pose, time_index)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
