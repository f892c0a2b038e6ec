"""LiDAR sequence aggregation and instant sensor-domain augmentation.

Builds dense labeled 3D world models from raw LiDAR sequences and re-renders
them on demand as range maps and point clouds of arbitrary cylindrical
sensor configuration, pose, and motion distortion — deterministically from
a single seed, fast enough to sit inside a training data loader.
"""

from .distortion import MotionParams, distort, sample_motion, travel_displacement
from .errors import (CacheVersionError, DataFormatError, EngineError,
                     SpecValidationError)
from .mixer import mix, sample_sectors
from .pipeline import (AugmentResult, AugmentSpec, augment, make_stream,
                       sample_config, sample_pose, spec_from_dict,
                       spec_from_text, spec_to_text, target_config)
from .renderer import augment_pose, extract_cloud, render
from .sensor_model import (LidarConfig, RangeMap, back_project,
                           load_sensor_config, preset, preset_names, project)
from .world_model import (Box, BoxTrack, LabeledFrame, PointCloud, Pose,
                          UNLABELED, WorldModel, accumulate_dynamic,
                          aggregate_static, build_world_model,
                          select_adjacent, vote_and_propagate)

__version__ = "0.1.0"
