"""Seeded builders for test trajectories and poses."""
from __future__ import annotations

import numpy as np

from camtraj.geometry import CameraIntrinsics, Pose, Trajectory, random_rotation

K = CameraIntrinsics(300.0, 300.0, 160.0, 120.0, 320, 240)


def random_pose(rng, t_scale=5.0) -> Pose:
    return Pose(random_rotation(rng), t_scale * rng.standard_normal(3))


def random_trajectory(rng, n=None, intrinsics=K) -> Trajectory:
    n = int(rng.integers(10, 101)) if n is None else n
    rots = np.stack([random_rotation(rng) for _ in range(n)])
    ts = 3.0 * rng.standard_normal((n, 3))
    idx = np.cumsum(rng.integers(1, 4, size=n))
    return Trajectory.from_arrays(rots, ts, intrinsics, idx)


def random_similarity(rng, s_range=(0.1, 10.0)):
    s = float(np.exp(rng.uniform(np.log(s_range[0]), np.log(s_range[1]))))
    return s, random_rotation(rng), 10.0 * rng.standard_normal(3)


def transform_trajectory(traj: Trajectory, s, R_a, t_a) -> Trajectory:
    """Move the world by ``x -> s R_a x + t_a``: centers follow, orientations get ``R @ R_a.T``."""
    centers = s * traj.centers() @ R_a.T + t_a
    rots = traj.rotations() @ R_a.T
    k = traj.frames[0].intrinsics
    return Trajectory.from_centers(centers, k, rots, traj.frame_indices)
