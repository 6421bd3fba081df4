"""Batch pipeline driver.

Every subcommand reads files and writes files under ``--out``; stage outputs
are JSON reports (see ``camtraj.io.write_report``) that ``report`` merges.

Exit codes: 0 ok, 1 usage, 2 input validation, 3 numeric failure. Failures
print a JSON object ``{"error": {...}}`` on stderr.
"""
from __future__ import annotations

import argparse
import csv
import io as _stdio
import json
import logging
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import __version__
from .analysis import (
    DIRECTION_LABELS,
    TURN_LABELS,
    TrajectoryProfile,
    auto_cap,
    balance_dataset,
    category_histogram,
    classify_trajectory,
)
from .calibration import CalibrationError, DepthPair, calibrate_trajectory
from .config import Config, load_config
from .geometry import GeometryError, downsample_trajectory, plucker_map
from .io import (
    FormatError,
    atomic_write,
    depth_validity,
    parse_report,
    read_manifest,
    read_raster,
    read_trajectory,
    save_trajectory,
    write_raster,
    write_report,
)
from .metrics import (
    FlowField,
    MetricError,
    appearance_consistency,
    camera_movement_score,
    evaluate_trajectory,
    motion_strength,
)

log = logging.getLogger("camtraj")

EXIT_OK, EXIT_USAGE, EXIT_INPUT, EXIT_NUMERIC = 0, 1, 2, 3

STAGE_FILES = {
    "ingest": "ingest.json",
    "filter": "filter.json",
    "calibrate": "calibration.json",
    "analyze": "analysis.json",
    "balance": "balance.json",
    "eval-traj": "eval_traj.json",
    "eval-motion": "eval_motion.json",
    "eval-appearance": "eval_appearance.json",
}


class UsageError(Exception):
    pass


class InputError(Exception):
    """Input validation failed; ``problems`` lists every issue found."""

    def __init__(self, message, problems=()):
        super().__init__(message)
        self.problems = list(problems)


class NumericFailure(Exception):
    def __init__(self, message, failures=()):
        super().__init__(message)
        self.failures = list(failures)


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


# --- per-video helpers -----------------------------------------------------

def _frame_files(directory: Path, prefix: str = "") -> dict[int, Path]:
    out = {}
    if not directory.is_dir():
        raise FileNotFoundError(f"{directory}: directory not found")
    for p in sorted(directory.glob(f"{prefix}*.ctrw")):
        stem = p.stem[len(prefix):]
        if stem.isdigit():
            out[int(stem)] = p
    return out


def keyframe_candidates(entry, traj) -> list[int]:
    sfm = _frame_files(entry.depth_dir, "sfm_")
    metric = _frame_files(entry.depth_dir, "metric_")
    present = set(traj.frame_indices)
    return sorted(set(sfm) & set(metric) & present)


def select_keyframes(candidates: list[int], n: int) -> list[int]:
    """``n`` keyframes spread uniformly over the candidate list."""
    if len(candidates) <= n:
        return list(candidates)
    pos = np.unique(np.round(np.linspace(0, len(candidates) - 1, n)).astype(int))
    return [candidates[i] for i in pos]


def load_depth_pair(entry, frame: int) -> DepthPair:
    S = read_raster(entry.depth_dir / f"sfm_{frame:06d}.ctrw", "depth")
    M = read_raster(entry.depth_dir / f"metric_{frame:06d}.ctrw", "depth")
    if S.shape != M.shape:
        raise FormatError(f"depth shapes differ for frame {frame}: {S.shape} vs {M.shape}",
                          str(entry.depth_dir))
    return DepthPair(S, M, depth_validity(S) & depth_validity(M))


def load_flows(flow_dir: Path, mask_dir: Path):
    flows_p = _frame_files(Path(flow_dir))
    masks_p = _frame_files(Path(mask_dir))
    missing = sorted(set(flows_p) ^ set(masks_p))
    if missing:
        raise FormatError(f"flow/mask frames do not match: {missing[:5]}", str(flow_dir))
    flows, masks = [], []
    for i in sorted(flows_p):
        f = FlowField.from_array(read_raster(flows_p[i], "flow"))
        m = read_raster(masks_p[i], "mask")
        if m.shape != f.shape:
            raise FormatError(f"mask shape {m.shape} != flow shape {f.shape}", str(masks_p[i]))
        flows.append(f)
        masks.append(m)
    return flows, masks


def _map(fn, items, jobs):
    items = list(items)
    if jobs <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(fn, items))


def _write_stage(args, stage: str, sections: dict) -> Path:
    meta = {"stage": stage}
    if args.seed is not None:
        meta["seed"] = args.seed
    path = args.out / STAGE_FILES[stage]
    atomic_write(path, write_report(sections, meta))
    return path


def _read_stage(path: Path) -> dict:
    if not path.exists():
        raise FileNotFoundError(f"{path}: stage output not found")
    return parse_report(path.read_text(encoding="utf-8"))


def _selected(args, manifest):
    entries = sorted(manifest.entries, key=lambda e: e.video_id)
    if getattr(args, "selection", None):
        keep = set(_read_stage(Path(args.selection))["metrics"]["camera_movement"]["keep"])
        entries = [e for e in entries if e.video_id in keep]
    return entries


# --- subcommands -----------------------------------------------------------

def cmd_ingest(args, cfg: Config) -> int:
    manifest = read_manifest(args.manifest)

    def check(entry):
        problems, info = [], {}
        try:
            traj = read_trajectory(entry.trajectory)
            info["frames"] = len(traj)
            info["keyframe_candidates"] = len(keyframe_candidates(entry, traj))
            for k in keyframe_candidates(entry, traj):
                load_depth_pair(entry, k)
        except (OSError, ValueError) as exc:
            problems.append(str(exc))
        try:
            flows, _ = load_flows(entry.flow_dir, entry.mask_dir)
            info["flow_frames"] = len(flows)
        except (OSError, ValueError) as exc:
            problems.append(str(exc))
        if entry.features is not None:
            try:
                info["feature_frames"] = int(read_raster(entry.features, "features").shape[0])
            except (OSError, ValueError) as exc:
                problems.append(str(exc))
        return entry.video_id, info, problems

    results = _map(check, sorted(manifest.entries, key=lambda e: e.video_id), args.jobs)
    videos = {vid: info for vid, info, _ in results}
    problems = [f"{vid}: {p}" for vid, _, ps in results for p in ps]
    _write_stage(args, "ingest", {"metrics": {"ingest": {"videos": videos, "problems": problems}}})
    if problems:
        raise InputError(f"{len(problems)} problem(s) in manifest inputs", problems)
    print(f"ingest: {len(videos)} videos ok")
    return EXIT_OK


def cmd_filter(args, cfg: Config) -> int:
    threshold = args.min_flow if args.min_flow is not None else cfg.min_flow
    if threshold is None:
        raise UsageError("filter requires --min-flow (or filter.min_flow in the config)")
    manifest = read_manifest(args.manifest)

    def score(entry):
        flows, masks = load_flows(entry.flow_dir, entry.mask_dir)
        return entry.video_id, camera_movement_score(flows, masks)

    scores = _map(score, sorted(manifest.entries, key=lambda e: e.video_id), args.jobs)
    keep = [vid for vid, s in scores if not s.empty and s.value > threshold]
    drop = [vid for vid, s in scores if vid not in keep]
    section = {
        "threshold": float(threshold),
        "scores": {vid: {"value": s.value, "pixels": s.pixels, "empty": s.empty} for vid, s in scores},
        "keep": keep,
        "drop": drop,
    }
    _write_stage(args, "filter", {"metrics": {"camera_movement": section}})
    print(f"filter: kept {len(keep)} of {len(scores)}")
    return EXIT_OK


def cmd_calibrate(args, cfg: Config) -> int:
    manifest = read_manifest(args.manifest)
    n_key = args.keyframes or cfg.keyframes

    def run(entry):
        traj = read_trajectory(entry.trajectory)
        keys = select_keyframes(keyframe_candidates(entry, traj), n_key)
        if not keys:
            raise FormatError("no keyframes with both sfm and metric depth", str(entry.depth_dir))
        pairs = [(k, load_depth_pair(entry, k)) for k in keys]
        try:
            calibrated, est = calibrate_trajectory(traj, pairs, cfg.ransac)
        except CalibrationError as exc:
            return entry.video_id, None, str(exc)
        save_trajectory(args.out / "calibrated" / f"{entry.video_id}.txt", calibrated)
        return entry.video_id, est.to_dict(), None

    results = _map(run, _selected(args, manifest), args.jobs)
    videos = {vid: est for vid, est, err in results if est is not None}
    failures = {vid: err for vid, _, err in results if err is not None}
    _write_stage(args, "calibrate", {"calibration": {"videos": videos, "failures": failures,
                                                     "ransac": cfg.to_dict()["ransac"]}})
    if failures:
        raise NumericFailure(f"calibration failed for {len(failures)} video(s)",
                             [f"{k}: {v}" for k, v in sorted(failures.items())])
    print(f"calibrate: {len(videos)} videos")
    return EXIT_OK


def _trajectory_inputs(args) -> list[tuple[str, Path]]:
    if args.trajectories:
        paths = [Path(p) for p in args.trajectories]
    else:
        d = Path(args.trajectory_dir) if args.trajectory_dir else args.out / "calibrated"
        if not d.is_dir():
            raise FileNotFoundError(f"{d}: no trajectories to analyze")
        paths = sorted(d.glob("*.txt"))
    if not paths:
        raise InputError("no trajectories to analyze")
    named = sorted((p.stem, p) for p in paths)
    names = [n for n, _ in named]
    if len(set(names)) != len(names):
        raise InputError("trajectory file names must be unique")
    return named


def cmd_analyze(args, cfg: Config) -> int:
    def run(item):
        name, path = item
        return name, classify_trajectory(read_trajectory(path), cfg.analysis).to_dict()

    profiles = dict(_map(run, _trajectory_inputs(args), args.jobs))
    _write_stage(args, "analyze", {"profile": {"videos": profiles,
                                               "params": cfg.to_dict()["analysis"]}})
    print(f"analyze: {len(profiles)} trajectories")
    return EXIT_OK


def _label_hist(hist: dict) -> dict:
    return {str(k): v for k, v in sorted(hist.items())}


def cmd_balance(args, cfg: Config) -> int:
    cap = args.cap if args.cap is not None else cfg.balance_cap
    if cap != "auto":
        try:
            cap = int(cap)
        except ValueError:
            raise UsageError(f"--cap must be an integer or 'auto', got {cap!r}") from None
        if cap < 1:
            raise UsageError("--cap must be >= 1")
    src = Path(args.analysis) if args.analysis else args.out / STAGE_FILES["analyze"]
    videos = _read_stage(src).get("profile", {}).get("videos", {})
    if not videos:
        raise InputError(f"{src}: no profiles to balance")
    names = sorted(videos)
    profiles = [TrajectoryProfile.from_dict(videos[n]) for n in names]
    keep, drop = balance_dataset(profiles, cap)
    resolved = auto_cap(profiles) if cap == "auto" else cap
    section = {
        "cap": resolved,
        "cap_mode": "auto" if cap == "auto" else "fixed",
        "keep": [names[i] for i in keep],
        "drop": [names[i] for i in drop],
        "histogram_before": _label_hist(category_histogram(profiles)),
        "histogram_after": _label_hist(category_histogram(profiles[i] for i in keep)),
        "labels": {"direction": list(DIRECTION_LABELS), "turn": list(TURN_LABELS)},
    }
    _write_stage(args, "balance", {"balance": section})
    print(f"balance: kept {len(keep)}, dropped {len(drop)} (cap {resolved})")
    return EXIT_OK


def cmd_plucker(args, cfg: Config) -> int:
    traj = read_trajectory(args.trajectory)
    stride = args.stride or cfg.stride
    traj = downsample_trajectory(traj, stride)
    out = args.out / "plucker"
    for f in traj.frames:
        pm = plucker_map(f.intrinsics, f.pose, args.latent_h, args.latent_w, literal=args.literal)
        write_raster(out / f"{f.frame_index:06d}.ctrw", pm.grid, "plucker")
    print(f"plucker: {len(traj)} maps of {args.latent_h}x{args.latent_w} in {out}")
    return EXIT_OK


def _emit(section: dict):
    print(json.dumps(json.loads(write_report({"metrics": section}))["metrics"], sort_keys=True))


def cmd_eval_traj(args, cfg: Config) -> int:
    est = read_trajectory(args.est)
    gt = read_trajectory(args.gt)
    if args.stride:
        est = downsample_trajectory(est, args.stride)
        gt = downsample_trajectory(gt, args.stride)
    res = evaluate_trajectory(est, gt, align_rotation=not args.no_rot_align)
    _write_stage(args, "eval-traj", {"metrics": {"trajectory": res}})
    _emit({"trans_err": res["trans_err"], "rot_err_deg": res["rot_err_deg"]})
    return EXIT_OK


def cmd_eval_motion(args, cfg: Config) -> int:
    flows, masks = load_flows(Path(args.flow_dir), Path(args.mask_dir))
    stat = motion_strength(flows, masks, focal=args.focal)
    section = {"motion_strength": stat.value, "pixels": stat.pixels, "empty": stat.empty,
               "unit": "deg" if args.focal else "px/frame"}
    if stat.empty:
        log.warning("no foreground pixels; motion strength reported as 0")
    _write_stage(args, "eval-motion", {"metrics": {"motion": section}})
    _emit(section)
    return EXIT_OK


def cmd_eval_appearance(args, cfg: Config) -> int:
    clips = [read_raster(p, "features") for p in args.features]
    value = appearance_consistency(clips)
    section = {"appearance_consistency": value, "clips": len(clips)}
    _write_stage(args, "eval-appearance", {"metrics": {"appearance": section}})
    _emit(section)
    return EXIT_OK


def _merge(dst: dict, src: dict):
    for k, v in src.items():
        if isinstance(v, dict) and isinstance(dst.get(k), dict):
            _merge(dst[k], v)
        else:
            dst[k] = v


def cmd_report(args, cfg: Config) -> int:
    merged: dict = {}
    stages = []
    for stage, name in STAGE_FILES.items():
        path = args.out / name
        if path.exists():
            doc = _read_stage(path)
            doc.pop("meta")
            _merge(merged, doc)
            stages.append(stage)
    if not stages:
        raise InputError(f"{args.out}: no stage outputs to merge")
    meta = {"stages": stages}
    if args.seed is not None:
        meta["seed"] = args.seed
    report_path = args.out / "report.json"
    atomic_write(report_path, write_report(merged, meta))
    atomic_write(args.out / "report_videos.csv", _video_table(merged))
    if args.figures:
        _render_figures(args.out, merged)
    print(f"report: {report_path}")
    return EXIT_OK


_CSV_COLUMNS = ("video_id", "camera_movement", "filter_keep", "scene_scale", "direction",
                "turn", "category", "importance", "balance_keep")


def _video_table(merged: dict) -> str:
    """One row per video with the headline value of each stage (blank if absent)."""
    cm = merged.get("metrics", {}).get("camera_movement", {})
    cal = merged.get("calibration", {}).get("videos", {})
    prof = merged.get("profile", {}).get("videos", {})
    bal = merged.get("balance", {})
    vids = sorted(set(cm.get("scores", {})) | set(cal) | set(prof))
    buf = _stdio.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(_CSV_COLUMNS)
    for v in vids:
        p = prof.get(v, {})
        w.writerow([
            v,
            cm.get("scores", {}).get(v, {}).get("value", ""),
            (v in cm.get("keep", [])) if cm else "",
            cal.get(v, {}).get("scene_scale", ""),
            p.get("direction", ""),
            p.get("turn", ""),
            p.get("category", ""),
            p.get("importance", ""),
            (v in bal.get("keep", [])) if bal else "",
        ])
    return buf.getvalue()


def _render_figures(out: Path, merged: dict):
    from . import plotting

    figs = out / "figures"
    bal = merged.get("balance")
    if bal:
        plotting.plot_category_histogram(bal["histogram_before"], bal["histogram_after"],
                                         figs / "categories.png")
    cal = merged.get("calibration", {}).get("videos", {})
    if cal:
        plotting.plot_scales({v: d["scene_scale"] for v, d in cal.items()}, figs / "scales.png")
    prof = merged.get("profile", {}).get("videos", {})
    cal_dir = out / "calibrated"
    for v, p in sorted(prof.items()):
        path = cal_dir / f"{v}.txt"
        if path.exists():
            plotting.plot_trajectory(read_trajectory(path).centers(), figs / f"trajectory_{v}.png",
                                     p.get("keypoints", ()), title=f"{v}: {p.get('direction')}/{p.get('turn')}")


# --- entry point -----------------------------------------------------------

COMMANDS = {
    "ingest": cmd_ingest,
    "filter": cmd_filter,
    "calibrate": cmd_calibrate,
    "analyze": cmd_analyze,
    "balance": cmd_balance,
    "plucker": cmd_plucker,
    "eval-traj": cmd_eval_traj,
    "eval-motion": cmd_eval_motion,
    "eval-appearance": cmd_eval_appearance,
    "report": cmd_report,
}


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--config", help="JSON config file")
    common.add_argument("--seed", type=int, help="override ransac.rng_seed")
    common.add_argument("--out", help="output directory (default: current directory)")
    common.add_argument("--jobs", type=int, help="worker threads (default: CPU count)")
    common.add_argument("-v", "--verbose", action="store_true")

    ap = _Parser(prog="camtraj", parents=[common],
                 description="camera-trajectory curation and evaluation")
    ap.add_argument("--version", action="version", version=f"camtraj {__version__}")
    # subcommand copies of the globals must not clobber values given before the subcommand
    sub_common = _Parser(add_help=False)
    for a in common._actions:
        sub_common._add_action(_suppressed(a))
    sp = ap.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sp.add_parser("ingest", parents=[sub_common], help="validate a manifest and its files")
    p.add_argument("--manifest", required=True)

    p = sp.add_parser("filter", parents=[sub_common], help="keep videos with enough camera motion")
    p.add_argument("--manifest", required=True)
    p.add_argument("--min-flow", type=float, help="background flow threshold (px/frame)")

    p = sp.add_parser("calibrate", parents=[sub_common], help="metric-scale calibration")
    p.add_argument("--manifest", required=True)
    p.add_argument("--keyframes", type=int, help="keyframes per video (default 8)")
    p.add_argument("--selection", help="filter.json whose keep list restricts the videos")

    p = sp.add_parser("analyze", parents=[sub_common], help="trajectory profiles")
    p.add_argument("trajectories", nargs="*", help="trajectory files (default: OUT/calibrated/*.txt)")
    p.add_argument("--trajectory-dir")

    p = sp.add_parser("balance", parents=[sub_common], help="prune over-represented categories")
    p.add_argument("--analysis", help="analysis.json (default: OUT/analysis.json)")
    p.add_argument("--cap", help="per-category cap or 'auto'")

    p = sp.add_parser("plucker", parents=[sub_common], help="write Plücker embedding rasters")
    p.add_argument("--trajectory", required=True)
    p.add_argument("--latent-h", type=int, required=True)
    p.add_argument("--latent-w", type=int, required=True)
    p.add_argument("--stride", type=int, help="temporal stride (default 4)")
    p.add_argument("--literal", action="store_true", help="add the camera center before normalizing")

    p = sp.add_parser("eval-traj", parents=[sub_common], help="TransErr / RotErr")
    p.add_argument("--est", required=True)
    p.add_argument("--gt", required=True)
    p.add_argument("--stride", type=int)
    p.add_argument("--no-rot-align", action="store_true", help="compare orientations unaligned")

    p = sp.add_parser("eval-motion", parents=[sub_common], help="foreground motion strength")
    p.add_argument("--flow-dir", required=True)
    p.add_argument("--mask-dir", required=True)
    p.add_argument("--focal", type=float, help="report degrees using this focal length (px)")

    p = sp.add_parser("eval-appearance", parents=[sub_common], help="appearance consistency")
    p.add_argument("features", nargs="+", help="per-clip feature rasters, in clip order")

    p = sp.add_parser("report", parents=[sub_common], help="merge stage outputs")
    p.add_argument("--figures", action="store_true", help="also render PNG figures")
    return ap


def _suppressed(action):
    import copy

    a = copy.copy(action)
    a.default = argparse.SUPPRESS
    return a


def _fail(code: int, kind: str, exc: BaseException, details=()) -> int:
    err = {"code": code, "kind": kind, "type": type(exc).__name__, "message": str(exc)}
    loc = getattr(exc, "location", None)
    if loc:
        err["location"] = loc
    if details:
        err["details"] = list(details)
    sys.stderr.write(json.dumps({"error": err}, sort_keys=True) + "\n")
    return code


def run(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except UsageError as exc:
        return _fail(EXIT_USAGE, "usage", exc)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    args.out = Path(args.out or ".")
    args.jobs = args.jobs or os.cpu_count() or 1
    try:
        cfg = load_config(args.config) if args.config else Config()
        cfg = cfg.with_seed(args.seed)
        return COMMANDS[args.command](args, cfg)
    except UsageError as exc:
        return _fail(EXIT_USAGE, "usage", exc)
    except NumericFailure as exc:
        return _fail(EXIT_NUMERIC, "numeric", exc, exc.failures)
    except (CalibrationError, MetricError, np.linalg.LinAlgError) as exc:
        return _fail(EXIT_NUMERIC, "numeric", exc)
    except InputError as exc:
        return _fail(EXIT_INPUT, "input", exc, exc.problems)
    except (FormatError, GeometryError, ValueError, OSError) as exc:
        return _fail(EXIT_INPUT, "input", exc)


def main(argv=None):
    sys.exit(run(argv))


if __name__ == "__main__":
    main()
