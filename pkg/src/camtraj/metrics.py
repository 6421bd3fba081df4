"""Evaluation metrics: aligned pose errors, flow statistics, consistency scores."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .geometry import Trajectory, rotation_geodesic


class MetricError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class AlignmentResult:
    """Similarity ``gt ~= s * R @ est + t`` and the per-frame position residuals."""

    s: float
    R: np.ndarray
    t: np.ndarray
    residuals: np.ndarray
    degenerate: bool = False

    def apply(self, points) -> np.ndarray:
        P = np.asarray(points, dtype=float)
        return self.s * P @ self.R.T + self.t


def align_similarity(est, gt) -> AlignmentResult:
    """Least-squares similarity aligning ``est`` points onto ``gt`` points.

    Closed form via SVD of the cross-covariance, with a determinant correction
    so that the rotation is never a reflection. ``degenerate`` is set when the
    ground-truth points are collinear, in which case the rotation about that
    line is not determined.
    """
    X = np.asarray(est, dtype=float)
    Y = np.asarray(gt, dtype=float)
    if X.shape != Y.shape:
        raise MetricError(f"length mismatch: {X.shape} vs {Y.shape}")
    if X.ndim != 2 or X.shape[1] != 3:
        raise MetricError(f"expected (n, 3) points, got {X.shape}")
    if len(X) < 3:
        raise MetricError("need at least 3 points to align")
    mu_x = X.mean(axis=0)
    mu_y = Y.mean(axis=0)
    Xc = X - mu_x
    Yc = Y - mu_y
    var_x = float(np.sum(Xc * Xc))
    if var_x == 0.0:
        raise MetricError("estimated positions have zero variance")

    H = Yc.T @ Xc
    U, sig, Vt = np.linalg.svd(H)
    D = np.ones(3)
    if np.linalg.det(U) * np.linalg.det(Vt) < 0:
        D[2] = -1.0
    R = (U * D) @ Vt
    s = float(np.dot(sig, D) / var_x)
    t = mu_y - s * R @ mu_x
    residuals = np.linalg.norm(Y - (s * X @ R.T + t), axis=1)

    sv = np.linalg.svd(Yc, compute_uv=False)
    degenerate = bool(sv[1] <= 1e-9 * max(sv[0], 1e-300))
    return AlignmentResult(s, R, t, residuals, degenerate)


def trans_err(residuals) -> float:
    """Mean aligned position error."""
    r = np.asarray(residuals, dtype=float).reshape(-1)
    if r.size == 0:
        raise MetricError("no residuals")
    return float(np.mean(r))


def rot_err(est_rotations, gt_rotations, align_R=None) -> float:
    """Mean geodesic angle (degrees) between ground-truth and aligned estimated rotations.

    Rotations are world->camera. An alignment ``R_a`` that maps the estimated
    world onto the ground-truth world changes each estimated rotation to
    ``R_est @ R_a.T``. Pass ``align_R=None`` to compare raw orientations.
    """
    E = np.asarray(est_rotations, dtype=float)
    G = np.asarray(gt_rotations, dtype=float)
    if E.shape != G.shape:
        raise MetricError(f"length mismatch: {E.shape} vs {G.shape}")
    if len(E) < 1:
        raise MetricError("no rotations")
    if align_R is not None:
        E = E @ np.asarray(align_R, dtype=float).T
    return float(np.mean([rotation_geodesic(g, e) for g, e in zip(G, E)]))


def evaluate_trajectory(est: Trajectory, gt: Trajectory, align_rotation: bool = True) -> dict:
    """TransErr / RotErr of ``est`` against ``gt`` after similarity alignment.

    Frames are paired by position; both trajectories must have the same length.
    """
    if len(est) != len(gt):
        raise MetricError(f"trajectory lengths differ: {len(est)} vs {len(gt)}")
    al = align_similarity(est.centers(), gt.centers())
    return {
        "trans_err": trans_err(al.residuals),
        "rot_err_deg": rot_err(est.rotations(), gt.rotations(), al.R if align_rotation else None),
        "alignment": {
            "scale": al.s,
            "rotation": al.R.tolist(),
            "translation": al.t.tolist(),
            "degenerate": al.degenerate,
        },
        "frames": len(est),
    }


@dataclass(frozen=True, eq=False)
class FlowField:
    u: np.ndarray
    v: np.ndarray

    def __post_init__(self):
        u = np.asarray(self.u, dtype=float)
        v = np.asarray(self.v, dtype=float)
        if u.shape != v.shape or u.ndim != 2:
            raise MetricError(f"flow components must be equal 2-D arrays, got {u.shape}, {v.shape}")
        if not (np.all(np.isfinite(u)) and np.all(np.isfinite(v))):
            raise MetricError("flow has non-finite entries")
        object.__setattr__(self, "u", u)
        object.__setattr__(self, "v", v)

    @classmethod
    def from_array(cls, uv) -> "FlowField":
        uv = np.asarray(uv)
        return cls(uv[..., 0], uv[..., 1])

    @property
    def shape(self):
        return self.u.shape

    def magnitude(self) -> np.ndarray:
        return np.hypot(self.u, self.v)


@dataclass(frozen=True)
class FlowStat:
    """Mean flow magnitude over the selected pixels; ``empty`` flags no pixels."""

    value: float
    pixels: int
    empty: bool


def _masked_flow_mean(flows, masks, select_foreground: bool, focal: float | None) -> FlowStat:
    flows = list(flows)
    masks = list(masks)
    if len(flows) != len(masks):
        raise MetricError(f"{len(flows)} flows but {len(masks)} masks")
    sums = []
    count = 0
    for k, (f, m) in enumerate(zip(flows, masks)):
        m = np.asarray(m, dtype=bool)
        if m.shape != f.shape:
            raise MetricError(f"frame {k}: mask shape {m.shape} != flow shape {f.shape}")
        sel = m if select_foreground else ~m
        mag = f.magnitude()[sel]
        if focal is not None:
            mag = np.degrees(np.arctan(mag / focal))
        sums.append(float(np.sum(mag)))
        count += int(mag.size)
    if count == 0:
        return FlowStat(0.0, 0, True)
    # fsum keeps the result independent of frame order
    return FlowStat(math.fsum(sums) / count, count, False)


def motion_strength(flows, masks, focal: float | None = None) -> FlowStat:
    """Mean flow magnitude over foreground (mask-true) pixels of all frames.

    Magnitudes are in pixels/frame; with ``focal`` (pixels) each magnitude is
    reported as the visual angle ``atan(mag / focal)`` in degrees.
    """
    return _masked_flow_mean(flows, masks, True, focal)


def camera_movement_score(flows, masks, focal: float | None = None) -> FlowStat:
    """Mean flow magnitude over background (mask-false) pixels, a proxy for camera motion."""
    return _masked_flow_mean(flows, masks, False, focal)


def geometric_consistency(outcomes) -> float:
    """Percentage of successful reconstructions."""
    outcomes = [bool(o) for o in outcomes]
    if not outcomes:
        raise MetricError("no outcomes")
    return 100.0 * sum(outcomes) / len(outcomes)


def appearance_consistency(clips) -> float:
    """Mean cosine similarity between consecutive clips' mean frame features."""
    feats = []
    for k, c in enumerate(clips):
        c = np.asarray(c, dtype=float)
        if c.ndim != 2 or c.shape[0] < 1 or c.shape[1] < 1:
            raise MetricError(f"clip {k}: expected (frames, d) features, got {c.shape}")
        if not np.all(np.isfinite(c)):
            raise MetricError(f"clip {k}: non-finite features")
        feats.append(c.mean(axis=0))
    if len(feats) < 2:
        raise MetricError("need at least 2 clips")
    dims = {f.shape[0] for f in feats}
    if len(dims) != 1:
        raise MetricError(f"feature dimensions differ: {sorted(dims)}")
    norms = [float(np.linalg.norm(f)) for f in feats]
    if min(norms) == 0.0:
        raise MetricError("zero-norm video feature")
    cos = [float(np.dot(a, b)) / (na * nb)
           for a, b, na, nb in zip(feats, feats[1:], norms, norms[1:])]
    return float(np.mean(cos))
