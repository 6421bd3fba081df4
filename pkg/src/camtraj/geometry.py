"""Camera pose representations and ray geometry.

Poses are stored world->camera (x_cam = R @ x_world + t), the convention SfM
tools write out. Anything that needs camera->world quantities converts
explicitly: ``R_c2w = R.T`` and the camera center ``o = -R.T @ t``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Iterable, Sequence

import numpy as np

ORTHO_TOL = 1e-6
REPAIR_TOL = 1e-3


class GeometryError(ValueError):
    """Invalid camera or pose data."""


def rot_x(deg: float) -> np.ndarray:
    a = math.radians(deg)
    c, s = math.cos(a), math.sin(a)
    return np.array([[1.0, 0.0, 0.0], [0.0, c, -s], [0.0, s, c]])


def rot_y(deg: float) -> np.ndarray:
    a = math.radians(deg)
    c, s = math.cos(a), math.sin(a)
    return np.array([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]])


def rot_z(deg: float) -> np.ndarray:
    a = math.radians(deg)
    c, s = math.cos(a), math.sin(a)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def axis_angle(axis: Sequence[float], angle_rad: float) -> np.ndarray:
    """Rodrigues rotation about ``axis`` by ``angle_rad``."""
    k = np.asarray(axis, dtype=float)
    norm = np.linalg.norm(k)
    if norm == 0.0:
        raise GeometryError("rotation axis must be non-zero")
    k = k / norm
    K = np.array([[0.0, -k[2], k[1]], [k[2], 0.0, -k[0]], [-k[1], k[0], 0.0]])
    return np.eye(3) + math.sin(angle_rad) * K + (1.0 - math.cos(angle_rad)) * (K @ K)


def nearest_rotation(M: np.ndarray) -> np.ndarray:
    """Project a 3x3 matrix onto SO(3) in the Frobenius sense."""
    U, _, Vt = np.linalg.svd(M)
    D = np.eye(3)
    D[2, 2] = np.sign(np.linalg.det(U @ Vt)) or 1.0
    return U @ D @ Vt


def orthonormality_error(R: np.ndarray) -> float:
    return float(np.max(np.abs(R.T @ R - np.eye(3))))


def validate_rotation(R, *, repair_tol: float = REPAIR_TOL) -> np.ndarray:
    """Return ``R`` as a float64 rotation, repairing small numerical drift.

    Matrices within ``ORTHO_TOL`` are returned unchanged (bitwise). Matrices
    off by at most ``repair_tol`` are snapped to the nearest rotation; anything
    further away, or with negative determinant, raises ``GeometryError``.
    """
    R = np.array(R, dtype=float)
    if R.shape != (3, 3):
        raise GeometryError(f"rotation must be 3x3, got shape {R.shape}")
    if not np.all(np.isfinite(R)):
        raise GeometryError("rotation has non-finite entries")
    err = orthonormality_error(R)
    det = float(np.linalg.det(R))
    if err <= ORTHO_TOL and abs(det - 1.0) <= ORTHO_TOL:
        return R
    if err <= repair_tol and det > 0:
        return nearest_rotation(R)
    raise GeometryError(
        f"matrix is not a rotation (orthonormality error {err:.3g}, det {det:.6g})"
    )


@dataclass(frozen=True)
class CameraIntrinsics:
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        vals = (self.fx, self.fy, self.cx, self.cy)
        if not all(math.isfinite(v) for v in vals):
            raise GeometryError("intrinsics must be finite")
        if self.width < 1 or self.height < 1:
            raise GeometryError(f"image size must be >= 1, got {self.width}x{self.height}")
        if self.fx <= 0 or self.fy <= 0:
            raise GeometryError("focal lengths must be positive")
        if not (0 < self.cx < self.width and 0 < self.cy < self.height):
            raise GeometryError("principal point must lie inside the image")

    @property
    def K(self) -> np.ndarray:
        return np.array([[self.fx, 0.0, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]])

    def resized(self, width: int, height: int) -> "CameraIntrinsics":
        """Intrinsics for the same camera sampled on a ``width x height`` grid."""
        sx = width / self.width
        sy = height / self.height
        return CameraIntrinsics(
            self.fx * sx, self.fy * sy, self.cx * sx, self.cy * sy, width, height
        )


@dataclass(frozen=True, eq=False)
class Pose:
    """World->camera rigid transform ``x_cam = R @ x_world + t``."""

    R: np.ndarray
    t: np.ndarray

    def __post_init__(self):
        R = validate_rotation(self.R)
        t = np.array(self.t, dtype=float).reshape(-1)
        if t.shape != (3,):
            raise GeometryError(f"translation must have 3 entries, got {t.shape[0]}")
        if not np.all(np.isfinite(t)):
            raise GeometryError("translation has non-finite entries")
        R.setflags(write=False)
        t.setflags(write=False)
        object.__setattr__(self, "R", R)
        object.__setattr__(self, "t", t)

    @classmethod
    def identity(cls) -> "Pose":
        return cls(np.eye(3), np.zeros(3))

    @property
    def center(self) -> np.ndarray:
        return camera_center(self)

    def matrix(self) -> np.ndarray:
        T = np.eye(4)
        T[:3, :3] = self.R
        T[:3, 3] = self.t
        return T

    def __eq__(self, other):
        if not isinstance(other, Pose):
            return NotImplemented
        return np.array_equal(self.R, other.R) and np.array_equal(self.t, other.t)

    def __repr__(self):
        return f"Pose(R={self.R.tolist()}, t={self.t.tolist()})"


@dataclass(frozen=True)
class Frame:
    frame_index: int
    intrinsics: CameraIntrinsics
    pose: Pose


@dataclass(frozen=True)
class Trajectory:
    """Ordered per-frame cameras.

    An empty frame tuple is tolerated so header-only files can round-trip;
    analysis and metrics reject trajectories that are too short.
    """

    frames: tuple[Frame, ...] = ()
    scale_calibrated: bool = False

    def __post_init__(self):
        frames = tuple(self.frames)
        for a, b in zip(frames, frames[1:]):
            if b.frame_index <= a.frame_index:
                raise GeometryError(
                    f"frame_index must be strictly increasing ({a.frame_index} -> {b.frame_index})"
                )
        object.__setattr__(self, "frames", frames)

    def __len__(self):
        return len(self.frames)

    def __iter__(self):
        return iter(self.frames)

    @property
    def poses(self) -> list[Pose]:
        return [f.pose for f in self.frames]

    @property
    def frame_indices(self) -> list[int]:
        return [f.frame_index for f in self.frames]

    def centers(self) -> np.ndarray:
        """Camera centers in world coordinates, shape (n, 3)."""
        if not self.frames:
            return np.zeros((0, 3))
        return np.stack([camera_center(f.pose) for f in self.frames])

    def rotations(self) -> np.ndarray:
        if not self.frames:
            return np.zeros((0, 3, 3))
        return np.stack([f.pose.R for f in self.frames])

    def with_poses(self, poses: Iterable[Pose], **changes) -> "Trajectory":
        frames = tuple(replace(f, pose=p) for f, p in zip(self.frames, poses, strict=True))
        return replace(self, frames=frames, **changes)

    @classmethod
    def from_arrays(cls, rotations, translations, intrinsics: CameraIntrinsics,
                    frame_indices=None, scale_calibrated: bool = False) -> "Trajectory":
        rotations = np.asarray(rotations, dtype=float)
        translations = np.asarray(translations, dtype=float)
        if frame_indices is None:
            frame_indices = range(len(rotations))
        frames = tuple(
            Frame(int(i), intrinsics, Pose(R, t))
            for i, R, t in zip(frame_indices, rotations, translations, strict=True)
        )
        return cls(frames, scale_calibrated)

    @classmethod
    def from_centers(cls, centers, intrinsics: CameraIntrinsics, rotations=None,
                     frame_indices=None) -> "Trajectory":
        """Build a trajectory from world camera centers (and w2c rotations)."""
        centers = np.asarray(centers, dtype=float)
        if rotations is None:
            rotations = np.broadcast_to(np.eye(3), (len(centers), 3, 3))
        rotations = np.asarray(rotations, dtype=float)
        translations = -np.einsum("nij,nj->ni", rotations, centers)
        return cls.from_arrays(rotations, translations, intrinsics, frame_indices)


def camera_center(pose: Pose) -> np.ndarray:
    """World-space camera center ``-R.T @ t``."""
    return -pose.R.T @ pose.t


@dataclass(frozen=True, eq=False)
class PluckerMap:
    """Per-pixel ray embedding, ``grid[..., :3]`` moment and ``grid[..., 3:]`` direction."""

    grid: np.ndarray

    @property
    def moment(self) -> np.ndarray:
        return self.grid[..., :3]

    @property
    def direction(self) -> np.ndarray:
        return self.grid[..., 3:]

    @property
    def shape(self) -> tuple[int, int]:
        return self.grid.shape[:2]

    def channels_first(self) -> np.ndarray:
        """(6, h, w) layout used by patchify layers."""
        return np.moveaxis(self.grid, -1, 0)


def plucker_map(intrinsics: CameraIntrinsics, pose: Pose, h: int, w: int,
                literal: bool = False) -> PluckerMap:
    """Plücker embedding ``(o x d', d')`` of every pixel on an ``h x w`` grid.

    The intrinsics are rescaled from the image size to the grid size and rays
    pass through pixel centers. ``d'`` is the unit ray direction
    ``R.T @ K^-1 @ [u, v, 1]``. With ``literal=True`` the camera center is added
    to that vector before normalizing, i.e. the embedding uses the normalized
    world point one unit along the ray instead of the ray direction.
    """
    if h < 1 or w < 1:
        raise GeometryError(f"grid size must be positive, got {h}x{w}")
    k = intrinsics.resized(w, h)
    u = np.arange(w, dtype=float) + 0.5
    v = np.arange(h, dtype=float) + 0.5
    uu, vv = np.meshgrid(u, v)
    cam = np.stack([(uu - k.cx) / k.fx, (vv - k.cy) / k.fy, np.ones_like(uu)], axis=-1)
    d = cam @ pose.R  # row-vector form of R.T @ x
    o = camera_center(pose)
    if literal:
        d = d + o
    d = d / np.linalg.norm(d, axis=-1, keepdims=True)
    m = np.cross(np.broadcast_to(o, d.shape), d)
    return PluckerMap(np.concatenate([m, d], axis=-1))


def relative_pose(pose: Pose, ref: Pose) -> Pose:
    """``pose`` expressed in the camera frame of ``ref`` (so ``ref`` -> identity)."""
    R = pose.R @ ref.R.T
    return Pose(R, pose.t - R @ ref.t)


def rebase_trajectory(traj: Trajectory, ref: Pose) -> Trajectory:
    """Re-express every pose with ``ref``'s camera as the world frame."""
    return traj.with_poses(relative_pose(p, ref) for p in traj.poses)


def downsample_trajectory(traj: Trajectory, stride: int) -> Trajectory:
    """Keep every ``stride``-th frame starting at the first one."""
    if stride < 1:
        raise GeometryError(f"stride must be >= 1, got {stride}")
    return replace(traj, frames=traj.frames[::stride])


def apply_scale(traj: Trajectory, s: float) -> Trajectory:
    """Multiply every translation by ``s`` and mark the trajectory calibrated."""
    s = float(s)
    if not math.isfinite(s) or s <= 0:
        raise GeometryError(f"scale must be positive and finite, got {s}")
    return traj.with_poses((Pose(p.R, s * p.t) for p in traj.poses), scale_calibrated=True)


def rotation_geodesic(R1, R2) -> float:
    """Angle of ``R1 @ R2.T`` in degrees, in [0, 180].

    Evaluated as atan2(sin, cos) of the relative rotation; this equals the
    arccos-of-trace form but keeps full precision near 0 and 180 degrees.
    """
    M = np.asarray(R1, dtype=float) @ np.asarray(R2, dtype=float).T
    cos = (np.trace(M) - 1.0) / 2.0
    skew = np.array([M[2, 1] - M[1, 2], M[0, 2] - M[2, 0], M[1, 0] - M[0, 1]])
    sin = np.linalg.norm(skew) / 2.0
    cos = min(max(cos, -1.0), 1.0)
    return math.degrees(math.atan2(sin, cos))


def random_rotation(rng: np.random.Generator) -> np.ndarray:
    """Uniformly distributed rotation (QR of a Gaussian matrix)."""
    Q, Rr = np.linalg.qr(rng.standard_normal((3, 3)))
    Q = Q * np.sign(np.diag(Rr))
    if np.linalg.det(Q) < 0:
        Q[:, 0] = -Q[:, 0]
    return Q
