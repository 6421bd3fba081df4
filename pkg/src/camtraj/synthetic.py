"""Synthetic trajectories and on-disk datasets for tests and demos.

``python -m camtraj.synthetic OUT_DIR`` writes a small manifest-backed dataset
that the CLI pipeline can consume end to end.
"""
from __future__ import annotations

import argparse
import json
from pathlib import Path

import numpy as np

from .geometry import CameraIntrinsics, Trajectory, rot_y
from .io import atomic_write, save_trajectory, write_raster

DEFAULT_INTRINSICS = CameraIntrinsics(300.0, 300.0, 160.0, 120.0, 320, 240)

# unit headings in world coordinates for an identity first camera (x right, y down, z forward)
HEADINGS = {
    "forward": (0.0, 0.0, 1.0),
    "backward": (0.0, 0.0, -1.0),
    "left": (-1.0, 0.0, 0.0),
    "right": (1.0, 0.0, 0.0),
    "up": (0.0, -1.0, 0.0),
    "down": (0.0, 1.0, 0.0),
}


def polyline(legs, step: float = 1.0, start=(0.0, 0.0, 0.0)) -> np.ndarray:
    """Camera centers walking ``steps`` unit steps along each ``(heading, steps)`` leg."""
    pts = [np.asarray(start, dtype=float)]
    for heading, steps in legs:
        d = np.asarray(HEADINGS.get(heading, heading), dtype=float)
        d = d / np.linalg.norm(d)
        for _ in range(steps):
            pts.append(pts[-1] + step * d)
    return np.stack(pts)


def circle(n: int, step_deg: float = 1.0, radius: float = 10.0) -> np.ndarray:
    a = np.radians(step_deg) * np.arange(n)
    return np.stack([radius * np.sin(a), np.zeros(n), radius * (1.0 - np.cos(a))], axis=1)


def pan_rotations(n: int, total_deg: float) -> np.ndarray:
    """World->camera rotations for a steady yaw pan of ``total_deg`` over ``n`` frames."""
    return np.stack([rot_y(total_deg * i / max(n - 1, 1)).T for i in range(n)])


def make_trajectory(centers, rotations=None, intrinsics: CameraIntrinsics = DEFAULT_INTRINSICS,
                    frame_indices=None) -> Trajectory:
    return Trajectory.from_centers(centers, intrinsics, rotations, frame_indices)


_SHAPES = [
    [("forward", 40)],
    [("forward", 28), ("right", 12)],
    [("forward", 28), ("left", 12)],
    [("right", 40)],
    [("forward", 20), ("up", 20)],
    [("backward", 40)],
    [("forward", 40)],
    [("left", 26), ("forward", 14)],
    [("forward", 30), ("right", 10)],
    [("forward", 40)],
]


def write_dataset(root, n_videos: int = 10, seed: int = 0, depth_shape=(24, 32),
                  flow_shape=(24, 32)) -> Path:
    """Write a synthetic dataset and return the manifest path.

    Each video has an SfM-scale trajectory (true metric scale recoverable from
    the depth pairs), SfM/metric depth rasters on every 4th frame, flow and
    mask rasters, and per-frame clip features.
    """
    root = Path(root)
    rng = np.random.default_rng(seed)
    entries = []
    for v in range(n_videos):
        vid = f"video_{v:03d}"
        vdir = root / vid
        legs = _SHAPES[v % len(_SHAPES)]
        centers = polyline(legs)
        n = len(centers)
        rotations = pan_rotations(n, float(rng.uniform(-40, 40))) if v % 3 == 0 else None
        s_true = float(rng.uniform(0.5, 4.0))
        # the SfM reconstruction lives at 1/s_true of metric scale
        traj = make_trajectory(centers / s_true, rotations)
        save_trajectory(vdir / "trajectory.txt", traj)

        for i in range(0, n, 4):
            metric = rng.uniform(3.0, 40.0, size=depth_shape)
            sfm = metric / s_true
            noisy = metric * (1.0 + 0.01 * rng.standard_normal(depth_shape))
            bad = rng.random(depth_shape) < 0.15
            noisy = np.where(bad, noisy * rng.uniform(2.0, 6.0, size=depth_shape), noisy)
            write_raster(vdir / "depth" / f"sfm_{i:06d}.ctrw", sfm, "depth")
            write_raster(vdir / "depth" / f"metric_{i:06d}.ctrw", noisy, "depth")

        bg = float(rng.uniform(0.2, 3.0))
        h, w = flow_shape
        for i in range(n - 1):
            mask = np.zeros(flow_shape, dtype=bool)
            y0, x0 = int(rng.integers(0, h - 8)), int(rng.integers(0, w - 8))
            mask[y0:y0 + 8, x0:x0 + 8] = True
            flow = np.empty((h, w, 2))
            flow[..., 0] = bg + 0.05 * rng.standard_normal(flow_shape)
            flow[..., 1] = 0.05 * rng.standard_normal(flow_shape)
            flow[mask] += rng.uniform(2.0, 8.0, size=2)
            write_raster(vdir / "flow" / f"{i:06d}.ctrw", flow, "flow")
            write_raster(vdir / "mask" / f"{i:06d}.ctrw", mask, "mask")

        write_raster(vdir / "features.ctrw", rng.standard_normal((n, 16)) + 3.0, "features")
        entries.append({
            "video_id": vid,
            "trajectory": f"{vid}/trajectory.txt",
            "depth_dir": f"{vid}/depth",
            "flow_dir": f"{vid}/flow",
            "mask_dir": f"{vid}/mask",
            "features": f"{vid}/features.ctrw",
        })
    manifest = root / "manifest.json"
    atomic_write(manifest, json.dumps({"version": 1, "entries": entries}, indent=2, sort_keys=True) + "\n")
    return manifest


def main(argv=None):
    ap = argparse.ArgumentParser(description="write a synthetic camtraj dataset")
    ap.add_argument("out")
    ap.add_argument("--videos", type=int, default=10)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args(argv)
    print(write_dataset(args.out, args.videos, args.seed))


if __name__ == "__main__":
    main()
