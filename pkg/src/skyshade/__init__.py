"""Predict how many GNSS satellites a receiver can use from a dense 3D map."""

from .cloud import MapCloud, SpatialIndex, load_cloud, save_cloud, voxel_filter
from .config import Config
from .features import FeatureCloud, compute_features, orient_normal, shape_values
from .ground import GroundSet, ReceiverPose, pose_frame, segment_ground
from .nmea import (ConstellationSnapshot, SatelliteObservation, build_snapshots,
                   ground_truth_series, parse_sentence)
from .predictor import (ReductionParams, SkyHistogram, binary_mask, build_histogram, calibrate,
                        predict, predict_baseline, reduction, visibility_map)
from .sky import SkyGrid, SkyMap, angular_distance, build_sky_map, cell_index

__version__ = "0.1.0"
