"""Metric-scale calibration of SfM trajectories.

Each keyframe's scale is the robust fit ``argmin_s sum huber(s * S(p) - M(p))``
between SfM depth ``S`` and metric depth ``M``. It is solved with 1-point
RANSAC followed by an IRLS refinement on the consensus set; the scene scale
is the mean over keyframes.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .geometry import Trajectory, apply_scale

MIN_VALID_PIXELS = 32
MAX_PIXELS = 20_000
_CHUNK = 64


class CalibrationError(RuntimeError):
    """Scale estimation failed (too few pixels or no consensus)."""


@dataclass(frozen=True)
class RansacParams:
    iterations: int = 1024
    inlier_threshold_rel: float = 0.05
    huber_delta: float = 0.5
    min_inlier_ratio: float = 0.3
    rng_seed: int = 0
    max_pixels: int = MAX_PIXELS

    def __post_init__(self):
        if self.iterations < 1:
            raise ValueError("iterations must be >= 1")
        if not 0 < self.inlier_threshold_rel < 1:
            raise ValueError("inlier_threshold_rel must be in (0, 1)")
        if not self.huber_delta > 0:
            raise ValueError("huber_delta must be positive")
        if not 0 <= self.min_inlier_ratio <= 1:
            raise ValueError("min_inlier_ratio must be in [0, 1]")
        if self.max_pixels < MIN_VALID_PIXELS:
            raise ValueError(f"max_pixels must be >= {MIN_VALID_PIXELS}")


@dataclass(frozen=True, eq=False)
class DepthPair:
    """SfM and metric depth for one keyframe on a shared pixel grid."""

    sfm_depth: np.ndarray
    metric_depth: np.ndarray
    validity: np.ndarray | None = None

    def __post_init__(self):
        S = np.asarray(self.sfm_depth, dtype=float)
        M = np.asarray(self.metric_depth, dtype=float)
        if S.shape != M.shape:
            raise ValueError(f"depth shapes differ: {S.shape} vs {M.shape}")
        with np.errstate(invalid="ignore"):
            usable = np.isfinite(S) & np.isfinite(M) & (S > 0) & (M > 0)
        if self.validity is None:
            valid = usable
        else:
            valid = np.asarray(self.validity, dtype=bool)
            if valid.shape != S.shape:
                raise ValueError(f"validity shape {valid.shape} != depth shape {S.shape}")
            valid = valid & usable
        object.__setattr__(self, "sfm_depth", S)
        object.__setattr__(self, "metric_depth", M)
        object.__setattr__(self, "validity", valid)

    def samples(self) -> tuple[np.ndarray, np.ndarray]:
        return self.sfm_depth[self.validity], self.metric_depth[self.validity]


@dataclass(frozen=True)
class FrameScale:
    frame_index: int
    scale: float
    inlier_count: int
    inlier_ratio: float


@dataclass(frozen=True)
class ScaleEstimate:
    per_frame: tuple[FrameScale, ...]
    scene_scale: float

    def to_dict(self) -> dict:
        return {
            "scene_scale": self.scene_scale,
            "per_frame": [
                {
                    "frame_index": f.frame_index,
                    "scale": f.scale,
                    "inlier_count": f.inlier_count,
                    "inlier_ratio": f.inlier_ratio,
                }
                for f in self.per_frame
            ],
        }


def huber(r, delta: float):
    """Huber penalty: quadratic for ``|r| <= delta``, linear beyond."""
    if not delta > 0:
        raise ValueError("delta must be positive")
    a = np.abs(r)
    out = np.where(a <= delta, 0.5 * a * a, delta * (a - 0.5 * delta))
    return out if np.ndim(out) else float(out)


def huber_objective(s: float, S: np.ndarray, M: np.ndarray, delta: float) -> float:
    return float(np.sum(huber(s * S - M, delta)))


def _inlier_counts(hyp: np.ndarray, S: np.ndarray, M: np.ndarray, thr: float) -> np.ndarray:
    counts = np.empty(len(hyp), dtype=np.int64)
    tol = thr * M
    for lo in range(0, len(hyp), _CHUNK):
        h = hyp[lo:lo + _CHUNK, None]
        counts[lo:lo + _CHUNK] = np.count_nonzero(np.abs(h * S - M) <= tol, axis=1)
    return counts


def refine_scale(s0: float, S: np.ndarray, M: np.ndarray, delta: float,
                 rtol: float = 1e-8, max_iter: int = 200) -> float:
    """Minimize the Huber objective in ``s`` by iteratively reweighted least squares."""
    s = s0
    for _ in range(max_iter):
        r = np.abs(s * S - M)
        w = np.where(r <= delta, 1.0, delta / np.maximum(r, delta))
        s_new = float(np.sum(w * S * M) / np.sum(w * S * S))
        if abs(s_new - s) <= rtol * abs(s_new):
            return s_new
        s = s_new
    return s


def frame_scale(pair: DepthPair, params: RansacParams = RansacParams(),
                frame_index: int = 0) -> FrameScale:
    """Robust SfM->metric depth scale for one keyframe.

    Randomness is seeded with ``params.rng_seed + frame_index`` so keyframes can
    be processed independently and still reproduce.
    """
    S, M = pair.samples()
    n_valid = S.size
    if n_valid < MIN_VALID_PIXELS:
        raise CalibrationError(
            f"frame {frame_index}: {n_valid} valid pixels, need at least {MIN_VALID_PIXELS}"
        )
    rng = np.random.default_rng(params.rng_seed + frame_index)
    if n_valid > params.max_pixels:
        keep = np.sort(rng.choice(n_valid, size=params.max_pixels, replace=False))
        S, M = S[keep], M[keep]
    n = S.size

    picks = rng.integers(0, n, size=params.iterations)
    hyp = M[picks] / S[picks]
    counts = _inlier_counts(hyp, S, M, params.inlier_threshold_rel)
    best_count = int(counts.max())
    tied = np.unique(hyp[counts == best_count])
    if len(tied) > 1:
        objs = [huber_objective(h, S, M, params.huber_delta) for h in tied]
        best = float(tied[int(np.argmin(objs))])
    else:
        best = float(tied[0])

    ratio = best_count / n
    if ratio < params.min_inlier_ratio:
        raise CalibrationError(
            f"frame {frame_index}: inlier ratio {ratio:.3f} below {params.min_inlier_ratio}"
        )
    inliers = np.abs(best * S - M) <= params.inlier_threshold_rel * M
    s = refine_scale(best, S[inliers], M[inliers], params.huber_delta)
    if not (np.isfinite(s) and s > 0):
        raise CalibrationError(f"frame {frame_index}: refinement diverged ({s})")
    return FrameScale(frame_index, s, best_count, ratio)


def scene_scale(per_frame) -> float:
    """Arithmetic mean of per-keyframe scales."""
    values = [float(v) for v in per_frame]
    if not values:
        raise ValueError("no per-frame scales")
    if any(not v > 0 for v in values):
        raise ValueError("per-frame scales must be positive")
    return sum(values) / len(values)


def calibrate_trajectory(traj: Trajectory, keyframe_pairs, params: RansacParams = RansacParams()
                         ) -> tuple[Trajectory, ScaleEstimate]:
    """Estimate the metric scene scale from keyframe depth pairs and apply it.

    ``keyframe_pairs`` is a sequence of ``(frame_index, DepthPair)``.
    """
    keyframe_pairs = list(keyframe_pairs)
    if not keyframe_pairs:
        raise ValueError("need at least one keyframe")
    known = set(traj.frame_indices)
    missing = [i for i, _ in keyframe_pairs if i not in known]
    if missing:
        raise ValueError(f"keyframes not in trajectory: {missing}")
    per_frame = tuple(frame_scale(pair, params, frame_index=i) for i, pair in keyframe_pairs)
    s = scene_scale(f.scale for f in per_frame)
    return apply_scale(traj, s), ScaleEstimate(per_frame, s)
