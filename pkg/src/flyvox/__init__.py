"""Flying-object detection and tracking in organized LiDAR scans.

Modules: ``core`` (geometry, grid addressing, scan containers), ``voxel_grid``
(multi-state exponential occupancy map), ``detector`` (clustering and the
background/flying/unknown rules), ``raycaster`` (free-space weights),
``bg_removal`` (resetting detached occupied clusters), ``tracker`` (buffered
constant-acceleration Kalman tracking), ``uncertainty`` (hit and detection
probabilities) and ``sim`` (scenario harness and CLI).
"""
from ._backend import BACKEND
from .bg_removal import cluster_occupied, select_separated, separated_voxels
from .core import (GridSpec, InvalidInputError, OrganizedScan, OS0_128, OS1_128, Pose, SensorSpec,
                   read_scan, transform_scan, write_scan)
from .detector import (ClusterLabel, Detection, DetectorParams, classify_cluster, extract_clusters,
                       is_floating, near_occupied, process_scan)
from .raycaster import IntersectionSet, RayBatch, RaySegment, accumulate, build_rays, traverse
from .tracker import MultiTargetTracker, OutOfOrderError, Track, TrackerConfig
from .uncertainty import (NoiseSpec, box_probability, detection_probability, hit_probability_curve,
                          intersection_probability_single, jacobian, point_uncertainty)
from .voxel_grid import (LogOddsGrid, LogOddsParams, OccupancyGrid, OccupancyParams, VoxelState,
                         WeightedUpdate, classify, update_value)

__version__ = "0.1.0"

__all__ = [
    "BACKEND", "ClusterLabel", "Detection", "DetectorParams", "GridSpec", "IntersectionSet",
    "InvalidInputError", "LogOddsGrid", "LogOddsParams", "MultiTargetTracker", "NoiseSpec", "OS0_128",
    "OS1_128", "OccupancyGrid", "OccupancyParams", "OrganizedScan", "OutOfOrderError", "Pose", "RayBatch",
    "RaySegment", "SensorSpec", "Track", "TrackerConfig", "VoxelState", "WeightedUpdate", "accumulate",
    "box_probability", "build_rays", "classify", "classify_cluster", "cluster_occupied",
    "detection_probability", "extract_clusters", "hit_probability_curve",
    "intersection_probability_single", "is_floating", "jacobian", "near_occupied", "point_uncertainty",
    "process_scan", "read_scan", "select_separated", "separated_voxels", "transform_scan", "traverse",
    "update_value", "write_scan",
]
