"""Trajectory keypoints, segments, categories and dataset balancing."""
from __future__ import annotations

import math
import statistics
from collections import defaultdict
from dataclasses import dataclass, field

import numpy as np

from .geometry import Trajectory, rotation_geodesic

DIRECTION_LABELS = ("forward", "backward", "left", "right", "up", "down")
TURN_LABELS = ("none", "left", "right", "up", "down")


class DegenerateLineError(ValueError):
    pass


@dataclass(frozen=True)
class AnalysisParams:
    n: int = 6
    gamma: float = 15.0
    view_change_threshold: float = 20.0
    turn_threshold: float = 15.0

    def __post_init__(self):
        if self.n < 2:
            raise ValueError("n must be >= 2")
        if not 0 < self.gamma < 180:
            raise ValueError("gamma must be in (0, 180)")
        if not self.view_change_threshold > 0:
            raise ValueError("view_change_threshold must be positive")
        if not 0 <= self.turn_threshold < 180:
            raise ValueError("turn_threshold must be in [0, 180)")

    # bins are fixed by axis dominance, so only the label tuples above apply
    n_directions = len(DIRECTION_LABELS)
    n_turns = len(TURN_LABELS)


@dataclass(frozen=True, eq=False)
class TrajectorySegment:
    start_idx: int
    end_idx: int
    direction: np.ndarray
    arc_length: float
    view_change_count: int
    degenerate: bool = False

    def to_dict(self) -> dict:
        return {
            "start_idx": self.start_idx,
            "end_idx": self.end_idx,
            "direction": [float(x) for x in self.direction],
            "arc_length": self.arc_length,
            "view_change_count": self.view_change_count,
            "degenerate": self.degenerate,
        }


@dataclass(frozen=True, eq=False)
class TrajectoryProfile:
    keypoints: tuple[int, ...]
    segments: tuple[TrajectorySegment, ...]
    primary_segment: int
    direction_bin: int
    turn_bin: int
    importance: float
    category: int
    turn_angles: tuple[float, ...] = field(default=())

    @property
    def direction_label(self) -> str:
        return DIRECTION_LABELS[self.direction_bin]

    @property
    def turn_label(self) -> str:
        return TURN_LABELS[self.turn_bin]

    def to_dict(self) -> dict:
        return {
            "keypoints": list(self.keypoints),
            "segments": [s.to_dict() for s in self.segments],
            "primary_segment": self.primary_segment,
            "direction_bin": self.direction_bin,
            "direction": self.direction_label,
            "turn_bin": self.turn_bin,
            "turn": self.turn_label,
            "turn_angles": list(self.turn_angles),
            "importance": self.importance,
            "category": self.category,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "TrajectoryProfile":
        segs = tuple(
            TrajectorySegment(s["start_idx"], s["end_idx"], np.asarray(s["direction"], dtype=float),
                              s["arc_length"], s["view_change_count"], s.get("degenerate", False))
            for s in d["segments"]
        )
        return cls(tuple(d["keypoints"]), segs, d["primary_segment"], d["direction_bin"],
                   d["turn_bin"], d["importance"], d["category"], tuple(d.get("turn_angles", ())))


def fit_line(points) -> tuple[np.ndarray, np.ndarray]:
    """Total-least-squares line through ``points``.

    Returns (centroid, unit direction); the direction is oriented so it points
    from the first point toward the last.
    """
    P = np.asarray(points, dtype=float)
    if P.ndim != 2 or len(P) < 2:
        raise ValueError("need at least 2 points")
    centroid = P.mean(axis=0)
    X = P - centroid
    # camera centers of a static camera carry rounding noise from -R.T @ t
    if np.max(np.abs(X)) <= 1e-12 * max(1.0, float(np.max(np.abs(P)))):
        raise DegenerateLineError("all points are identical")
    _, _, Vt = np.linalg.svd(X, full_matrices=False)
    d = Vt[0]
    if np.dot(d, P[-1] - P[0]) < 0:
        d = -d
    return centroid, d / np.linalg.norm(d)


def _angle_deg(a: np.ndarray, b: np.ndarray) -> float:
    c = float(np.clip(np.dot(a, b), -1.0, 1.0))
    return math.degrees(math.acos(c))


def window_angles(centers: np.ndarray, n: int) -> np.ndarray:
    """Angle between the lines fit before and after every point (NaN at the ends)."""
    m = len(centers)
    out = np.full(m, np.nan)
    for i in range(n, m - n):
        try:
            _, a = fit_line(centers[i - n:i + 1])
            _, b = fit_line(centers[i:i + n + 1])
        except DegenerateLineError:
            out[i] = 0.0
            continue
        out[i] = _angle_deg(a, b)
    return out


def detect_keypoints(traj: Trajectory, params: AnalysisParams = AnalysisParams()) -> list[int]:
    """Frame positions where the path bends by more than ``params.gamma`` degrees.

    Consecutive positions above threshold form one run and contribute only the
    position with the largest bend.
    """
    centers = traj.centers()
    if len(centers) < 2 * params.n + 1:
        return []
    angles = window_angles(centers, params.n)
    hot = np.nan_to_num(angles, nan=0.0) > params.gamma
    keypoints = []
    i = 0
    while i < len(hot):
        if not hot[i]:
            i += 1
            continue
        j = i
        while j + 1 < len(hot) and hot[j + 1]:
            j += 1
        keypoints.append(i + int(np.argmax(angles[i:j + 1])))
        i = j + 1
    return keypoints


def _view_changes(rotations: np.ndarray, threshold: float) -> int:
    total = 0.0
    for a, b in zip(rotations, rotations[1:]):
        total += rotation_geodesic(a, b)
    return int(math.floor(total / threshold + 1e-9))


def segment_trajectory(traj: Trajectory, keypoints, params: AnalysisParams = AnalysisParams()
                       ) -> list[TrajectorySegment]:
    """Split the trajectory at ``keypoints``; consecutive segments share their boundary frame."""
    m = len(traj)
    if m < 2:
        raise ValueError("trajectory needs at least 2 frames to segment")
    kps = [int(k) for k in keypoints]
    if any(b <= a for a, b in zip(kps, kps[1:])):
        raise ValueError("keypoints must be strictly increasing")
    if kps and (kps[0] <= 0 or kps[-1] >= m - 1):
        raise ValueError("keypoints must lie strictly inside the trajectory")
    bounds = [0, *kps, m - 1]
    centers = traj.centers()
    rotations = traj.rotations()

    segments = []
    # degenerate fallback before any real direction: first camera's optical axis in world
    prev_dir = rotations[0].T @ np.array([0.0, 0.0, 1.0])
    for a, b in zip(bounds, bounds[1:]):
        pts = centers[a:b + 1]
        arc = float(np.sum(np.linalg.norm(np.diff(pts, axis=0), axis=1)))
        degenerate = False
        try:
            _, d = fit_line(pts)
        except DegenerateLineError:
            d, degenerate = prev_dir, True
        segments.append(TrajectorySegment(
            a, b, d, arc, _view_changes(rotations[a:b + 1], params.view_change_threshold), degenerate
        ))
        prev_dir = d
    return segments


def direction_bin(d_cam: np.ndarray) -> int:
    """Dominant camera axis of a direction (OpenCV: x right, y down, z forward)."""
    axis = int(np.argmax(np.abs(d_cam)))
    positive = d_cam[axis] >= 0
    if axis == 2:
        return 0 if positive else 1
    if axis == 0:
        return 3 if positive else 2
    return 5 if positive else 4


def turn_bin(a_cam: np.ndarray, b_cam: np.ndarray, threshold: float) -> int:
    """Classify the turn from heading ``a_cam`` to ``b_cam`` (camera coordinates).

    Yaw (rotation about the camera's vertical axis) gives left/right, pitch
    gives up/down. Turns whose axis is the optical axis stay in the image plane
    and are labeled by where the new heading points.
    """
    if _angle_deg(a_cam, b_cam) < threshold:
        return 0
    axis = np.cross(a_cam, b_cam)
    k = int(np.argmax(np.abs(axis)))
    if k == 1:
        return 2 if axis[1] > 0 else 1
    if k == 0:
        return 3 if axis[0] > 0 else 4
    perp = b_cam - np.dot(a_cam, b_cam) * a_cam
    if abs(perp[0]) >= abs(perp[1]):
        return 2 if perp[0] > 0 else 1
    return 3 if perp[1] < 0 else 4


def classify_trajectory(traj: Trajectory, params: AnalysisParams = AnalysisParams()
                        ) -> TrajectoryProfile:
    """Keypoints, segments, primary direction, main turn and importance of a trajectory."""
    if len(traj) < 2:
        raise ValueError("trajectory needs at least 2 frames")
    kps = detect_keypoints(traj, params)
    segments = segment_trajectory(traj, kps, params)
    arcs = np.array([s.arc_length for s in segments])
    # equal legs stay tied under rigid motion, whatever the rounding
    primary = int(np.flatnonzero(arcs >= arcs.max() * (1 - 1e-9))[0])

    R0 = traj.frames[0].pose.R
    heading = [R0 @ s.direction for s in segments]
    dbin = direction_bin(heading[primary])
    turns = tuple(_angle_deg(a, b) for a, b in zip(heading, heading[1:]))
    if primary + 1 < len(segments):
        tbin = turn_bin(heading[primary], heading[primary + 1], params.turn_threshold)
    else:
        tbin = 0
    importance = sum(turns) + params.view_change_threshold * sum(s.view_change_count for s in segments)
    return TrajectoryProfile(
        keypoints=tuple(kps),
        segments=tuple(segments),
        primary_segment=primary,
        direction_bin=dbin,
        turn_bin=tbin,
        importance=float(importance),
        category=dbin * params.n_turns + tbin,
        turn_angles=turns,
    )


def category_histogram(profiles) -> dict[int, int]:
    hist: dict[int, int] = defaultdict(int)
    for p in profiles:
        hist[p.category] += 1
    return dict(sorted(hist.items()))


def auto_cap(profiles) -> int:
    """Median per-category count (rounded down, at least 1)."""
    counts = list(category_histogram(profiles).values())
    return max(1, int(math.floor(statistics.median(counts))))


def balance_dataset(profiles, cap: int | str = "auto") -> tuple[list[int], list[int]]:
    """Prune over-represented categories down to ``cap`` members.

    Within a category the lowest-importance trajectories go first; equal
    importance drops the lower index first. Returns sorted (keep, drop) indices.
    """
    profiles = list(profiles)
    if not profiles:
        raise ValueError("no profiles to balance")
    if cap == "auto":
        cap = auto_cap(profiles)
    elif isinstance(cap, bool) or not isinstance(cap, (int, np.integer)) or cap < 1:
        raise ValueError(f"cap must be a positive integer or 'auto', got {cap!r}")

    members: dict[int, list[int]] = defaultdict(list)
    for i, p in enumerate(profiles):
        members[p.category].append(i)
    drop = []
    for idx in members.values():
        excess = len(idx) - cap
        if excess > 0:
            ranked = sorted(idx, key=lambda i: (profiles[i].importance, i))
            drop.extend(ranked[:excess])
    dropped = set(drop)
    keep = [i for i in range(len(profiles)) if i not in dropped]
    return keep, sorted(dropped)
