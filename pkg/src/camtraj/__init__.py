"""Camera-trajectory curation and evaluation toolkit."""

__version__ = "0.1.0"

from .geometry import (  # noqa: E402
    CameraIntrinsics,
    Frame,
    GeometryError,
    PluckerMap,
    Pose,
    Trajectory,
    apply_scale,
    camera_center,
    downsample_trajectory,
    plucker_map,
    rebase_trajectory,
    rotation_geodesic,
)

__all__ = [
    "CameraIntrinsics",
    "Frame",
    "GeometryError",
    "PluckerMap",
    "Pose",
    "Trajectory",
    "apply_scale",
    "camera_center",
    "downsample_trajectory",
    "plucker_map",
    "rebase_trajectory",
    "rotation_geodesic",
]
