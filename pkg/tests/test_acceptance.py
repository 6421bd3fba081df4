"""Acceptance criteria 1-10, each printed as one PASS/FAIL line.

Run with ``pytest tests/test_acceptance.py -v`` (lines are printed even when
output capture is on).
"""
import json
import time
from pathlib import Path

import numpy as np
import pytest

from camtraj.analysis import (
    AnalysisParams,
    TrajectoryProfile,
    balance_dataset,
    category_histogram,
    detect_keypoints,
    segment_trajectory,
)
from camtraj.calibration import RansacParams, frame_scale
from camtraj.cli import run
from camtraj.conditioning import (
    GuidanceWeights,
    build_extension_input,
    combine_guidance,
    masked_diffusion_loss,
)
from camtraj.geometry import CameraIntrinsics, Pose, plucker_map
from camtraj.io import (
    FormatError,
    decode_raster,
    encode_raster,
    parse_report,
    parse_trajectory,
    write_report,
    write_trajectory,
)
from camtraj.metrics import (
    FlowField,
    align_similarity,
    camera_movement_score,
    evaluate_trajectory,
    motion_strength,
)
from camtraj.synthetic import circle, make_trajectory, polyline, write_dataset

from .factories import random_pose, random_similarity, random_trajectory, transform_trajectory
from .oracles import exact_text_cfg, grid_search_scale, synthetic_depth_pair
from .test_io import MALFORMED, load_any


@pytest.fixture
def verdict(capsys):
    """Print one line per criterion, then fail the test if the criterion failed."""

    def emit(n, ok, elapsed, limit, detail):
        ok = ok and elapsed < limit
        with capsys.disabled():
            print(f"\nCRITERION {n:2d}: {'PASS' if ok else 'FAIL'}  ({elapsed:.2f}s / {limit}s)  {detail}")
        assert ok, detail

    return emit


def test_criterion_01_plucker(verdict):
    t0 = time.perf_counter()
    rng = np.random.default_rng(1)
    k = CameraIntrinsics(300.0, 300.0, 160.0, 120.0, 320, 240)
    worst_norm = worst_dot = 0.0
    for _ in range(1000):
        pm = plucker_map(k, random_pose(rng, 20.0), 8, 8)
        worst_norm = max(worst_norm, float(np.max(np.abs(np.linalg.norm(pm.direction, axis=-1) - 1))))
        worst_dot = max(worst_dot, float(np.max(np.abs(np.sum(pm.moment * pm.direction, axis=-1)))))
    # principal point on the centre of pixel (4, 4) of the 8x8 grid
    centred = CameraIntrinsics(300.0, 300.0, 180.0, 135.0, 320, 240)
    pp = plucker_map(centred, Pose.identity(), 8, 8).grid[4, 4].tolist()
    ok = worst_norm <= 1e-6 and worst_dot <= 1e-6 and pp == [0, 0, 0, 0, 0, 1]
    verdict(1, ok, time.perf_counter() - t0, 5,
            f"max |‖d‖-1|={worst_norm:.1e}, max |m·d|={worst_dot:.1e}, principal ray={pp}")


def test_criterion_02_scale_calibration(verdict):
    t0 = time.perf_counter()
    worst_truth = worst_grid = 0.0
    for k in range(50):
        s_true = float(np.exp(np.random.default_rng(1000 + k).uniform(np.log(0.2), np.log(8.0))))
        pair = synthetic_depth_pair(k, s_true, outlier_frac=0.2, outlier_factor=5.0)
        s = frame_scale(pair, RansacParams(rng_seed=k)).scale
        S, M = pair.samples()
        worst_truth = max(worst_truth, abs(s / s_true - 1))
        worst_grid = max(worst_grid, abs(s / grid_search_scale(S, M, 0.5, points=100_000) - 1))
    ok = worst_truth <= 0.01 and worst_grid <= 0.005
    verdict(2, ok, time.perf_counter() - t0, 30,
            f"max rel err vs truth={worst_truth:.2e}, vs grid minimizer={worst_grid:.2e}")


def test_criterion_03_alignment(verdict):
    t0 = time.perf_counter()
    rng = np.random.default_rng(3)
    worst_t = worst_r = 0.0
    dets = []
    for _ in range(200):
        gt = random_trajectory(rng)
        est = transform_trajectory(gt, *random_similarity(rng))
        res = evaluate_trajectory(est, gt)
        worst_t = max(worst_t, res["trans_err"])
        worst_r = max(worst_r, res["rot_err_deg"])
        dets.append(np.linalg.det(res["alignment"]["rotation"]))
    for _ in range(20):
        X = rng.standard_normal((int(rng.integers(3, 40)), 3))
        signs = rng.choice([-1.0, 1.0], size=3)
        if np.prod(signs) > 0:
            signs[int(rng.integers(3))] *= -1  # odd number of flips: a reflection
        mirror = np.diag(signs)
        dets.append(np.linalg.det(align_similarity(X, X @ mirror).R))
    worst_det = float(np.max(np.abs(np.array(dets) - 1)))
    ok = worst_t < 1e-6 and worst_r < 1e-6 and worst_det < 1e-9
    verdict(3, ok, time.perf_counter() - t0, 10,
            f"max TransErr={worst_t:.1e}, max RotErr={worst_r:.1e} deg, max |det R-1|={worst_det:.1e}")


def test_criterion_04_keypoints(verdict):
    t0 = time.perf_counter()
    p = AnalysisParams(n=6, gamma=15.0)
    line = detect_keypoints(make_trajectory(polyline([("forward", 100)])), p)
    L = detect_keypoints(make_trajectory(polyline([("forward", 50), ("right", 50)])), p)
    circ = detect_keypoints(make_trajectory(circle(360, 1.0)), p)
    rng = np.random.default_rng(4)
    tiled = True
    for _ in range(100):
        m = int(rng.integers(3, 120))
        kps = sorted(rng.choice(np.arange(1, m - 1), size=int(rng.integers(0, m - 1)), replace=False).tolist())
        segs = segment_trajectory(make_trajectory(rng.standard_normal((m, 3))), kps)
        covered = [i for s in segs for i in range(s.start_idx, s.end_idx)] + [m - 1]
        tiled &= covered == list(range(m))
        tiled &= all(a.end_idx == b.start_idx for a, b in zip(segs, segs[1:]))
    ok = line == [] and len(L) == 1 and abs(L[0] - 50) <= 1 and circ == [] and tiled
    verdict(4, ok, time.perf_counter() - t0, 5,
            f"line={line}, L-shape={L}, circle={circ}, 100 random tilings ok={tiled}")


def test_criterion_05_balancing(verdict):
    t0 = time.perf_counter()
    ok = True
    for seed in range(20):
        rng = np.random.default_rng(seed)
        n = int(rng.integers(5, 300))
        cats = rng.integers(0, 30, size=n) if seed % 2 else rng.zipf(1.6, size=n) % 30
        imps = rng.integers(0, 10, size=n) * 15.0
        profiles = [TrajectoryProfile((), (), 0, int(c) // 5, int(c) % 5, float(w), int(c))
                    for c, w in zip(cats, imps)]
        cap = "auto" if seed < 10 else int(rng.integers(1, 8))
        keep, drop = balance_dataset(profiles, cap)
        limit = cap if cap != "auto" else max(1, int(np.floor(np.median(list(category_histogram(profiles).values())))))
        ok &= max(category_histogram([profiles[i] for i in keep]).values()) <= limit
        for c in set(cats.tolist()):
            kept = [imps[i] for i in keep if cats[i] == c]
            dropped = [imps[i] for i in drop if cats[i] == c]
            ok &= not dropped or min(kept) >= max(dropped)
    verdict(5, bool(ok), time.perf_counter() - t0, 2, "20 populations (10 auto cap, 10 fixed)")


def test_criterion_06_guidance(verdict):
    t0 = time.perf_counter()
    rng = np.random.default_rng(6)
    telescoping = text_cfg = True
    worst_lin = 0.0
    for _ in range(100):
        u, t, f = (rng.standard_normal(128) * 10 ** rng.uniform(-3, 3) for _ in range(3))
        telescoping &= np.array_equal(combine_guidance(u, t, f, GuidanceWeights(1.0, 1.0)), f)
        wt = float(rng.uniform(0, 15))
        text_cfg &= np.array_equal(combine_guidance(u, t, f, GuidanceWeights(wt, 0.0)),
                                   exact_text_cfg(u, t, wt))
        u2, t2, f2 = (rng.standard_normal(128) for _ in range(3))
        a, b = rng.uniform(-3, 3, size=2)
        w = GuidanceWeights(float(rng.uniform(0, 15)), float(rng.uniform(0, 15)))
        lhs = combine_guidance(a * u + b * u2, a * t + b * t2, a * f + b * f2, w)
        rhs = a * combine_guidance(u, t, f, w) + b * combine_guidance(u2, t2, f2, w)
        scale = (1 + w.w_text + w.w_cam) * (abs(a) * max(np.abs(u).max(), np.abs(t).max(), np.abs(f).max())
                                            + abs(b) * max(np.abs(u2).max(), np.abs(t2).max(), np.abs(f2).max()))
        worst_lin = max(worst_lin, float(np.max(np.abs(lhs - rhs))) / scale)
    ok = telescoping and text_cfg and worst_lin <= 1e-12
    verdict(6, ok, time.perf_counter() - t0, 1,
            f"w=(1,1) bit-exact={telescoping}, w_cam=0 exact={text_cfg}, linearity rel err={worst_lin:.1e}")


def test_criterion_07_extension_layout(verdict):
    t0 = time.perf_counter()
    rng = np.random.default_rng(7)
    ok = True
    for _ in range(100):
        qp, qc, c = int(rng.integers(0, 30)), int(rng.integers(1, 30)), int(rng.integers(1, 16))
        x = build_extension_input(rng.standard_normal((qp, c)), rng.standard_normal((qc, c)))
        ok &= x.tokens.shape == (qp + qc, c + 1)
        ok &= np.array_equal(x.tokens[:, -1], np.r_[np.ones(qp), np.zeros(qc)])
        ok &= np.array_equal(x.loss_mask, np.r_[np.zeros(qp, bool), np.ones(qc, bool)])
        pred, target = rng.standard_normal((2, qp + qc, c))
        base = masked_diffusion_loss(pred, target, x.loss_mask)
        pred[:qp] = rng.standard_normal((qp, c)) * 1e200
        ok &= masked_diffusion_loss(pred, target, x.loss_mask) == base
    verdict(7, bool(ok), time.perf_counter() - t0, 2, "100 random layouts, corrupted condition tokens")


def test_criterion_08_motion(verdict):
    t0 = time.perf_counter()
    five = motion_strength([FlowField(np.full((6, 6), 3.0), np.full((6, 6), 4.0))],
                           [np.ones((6, 6), bool)]).value
    rng = np.random.default_rng(8)
    worst = 0.0
    for _ in range(50):
        h, w = rng.integers(1, 40, size=2)
        flows = [FlowField(*(rng.standard_normal((2, h, w)) * 5)) for _ in range(int(rng.integers(1, 5)))]
        masks = [rng.random((h, w)) < rng.random() for _ in flows]
        fg, bg = motion_strength(flows, masks), camera_movement_score(flows, masks)
        total = np.concatenate([f.magnitude().ravel() for f in flows]).mean()
        combined = (fg.value * fg.pixels + bg.value * bg.pixels) / (fg.pixels + bg.pixels)
        worst = max(worst, abs(combined - total))
    ok = five == 5.0 and worst <= 1e-9
    verdict(8, ok, time.perf_counter() - t0, 2, f"3-4-5 -> {five!r}, partition max err={worst:.1e}")


def test_criterion_09_formats(verdict):
    t0 = time.perf_counter()
    rng = np.random.default_rng(9)
    traj_ok = raster_ok = report_ok = True
    for i in range(100):
        traj = random_trajectory(rng)
        text = write_trajectory(traj)
        back = parse_trajectory(text)
        traj_ok &= back.poses == traj.poses and back.frame_indices == traj.frame_indices
        traj_ok &= write_trajectory(back) == text
        kind = ("depth", "flow", "mask", "features", "plucker")[i % 5]
        shape = {"flow": (2,), "plucker": (6,)}.get(kind, ())
        h, w = (int(v) for v in rng.integers(1, 20, size=2))
        a = rng.random((h, w)) < 0.5 if kind == "mask" else rng.standard_normal((h, w, *shape)).astype(np.float32)
        data = encode_raster(a, kind)
        raster_ok &= np.array_equal(decode_raster(data, kind)[1], a)
        raster_ok &= encode_raster(decode_raster(data)[1], kind) == data
        bundle = {"metrics": {"trans_err": float(rng.random()), "values": rng.standard_normal(5).tolist(),
                              "n": int(rng.integers(100)), "flag": bool(rng.random() < 0.5)},
                  "calibration": {"scene_scale": float(rng.uniform(0.1, 10))}}
        rep = write_report(bundle, {"seed": i})
        doc = parse_report(rep)
        report_ok &= write_report(doc, doc["meta"]) == rep
    structured = 0
    for path in sorted(MALFORMED.iterdir()):
        try:
            load_any(path)
        except FormatError as exc:
            structured += bool(exc.location and exc.message)
    corpus = len(list(MALFORMED.iterdir()))
    ok = traj_ok and raster_ok and report_ok and corpus == 20 and structured == corpus
    verdict(9, ok, time.perf_counter() - t0, 5,
            f"trajectory={traj_ok}, raster={raster_ok}, report={report_ok}, "
            f"malformed structured errors {structured}/{corpus}")


def _pipeline(manifest: Path, out: Path, seed: int) -> list[int]:
    common = ["--out", str(out), "--seed", str(seed)]
    return [run(common + step) for step in (
        ["ingest", "--manifest", str(manifest)],
        ["filter", "--manifest", str(manifest), "--min-flow", "0.5"],
        ["calibrate", "--manifest", str(manifest), "--selection", str(out / "filter.json")],
        ["analyze"],
        ["balance"],
        ["report", "--figures"],
    )]


def test_criterion_10_determinism(verdict, tmp_path, capsys):
    t0 = time.perf_counter()
    manifest = write_dataset(tmp_path / "data", n_videos=10, seed=10)
    codes = [_pipeline(manifest, tmp_path / run_name, seed=42) for run_name in ("run1", "run2")]
    capsys.readouterr()
    names = ["report.json", "report_videos.csv", "ingest.json", "filter.json", "calibration.json",
             "analysis.json", "balance.json"]
    same = all((tmp_path / "run1" / n).read_bytes() == (tmp_path / "run2" / n).read_bytes() for n in names)
    report = json.loads((tmp_path / "run1" / "report.json").read_text())
    ok = codes == [[0] * 6] * 2 and same and set(report) == {"meta", "calibration", "profile", "balance", "metrics"}
    verdict(10, ok, time.perf_counter() - t0, 60,
            f"exit codes={codes[0]}, {len(names)} outputs byte-identical={same}")
