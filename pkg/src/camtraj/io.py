"""File formats: trajectory text, raster container, JSON manifest and report.

Raster container layout (little-endian)::

    offset  size  field
    0       4     magic b"CTRW"
    4       1     kind code   (1 depth, 2 flow, 3 mask, 4 features, 5 plucker)
    5       1     dtype code  (1 float32, 2 uint8)
    6       2     reserved, zero
    8       4     h (u32)
    12      4     w (u32)
    16      ...   row-major payload

Payloads: depth float32 h*w; flow float32 h*w*2 interleaved (u, v); mask
uint8 h*w of 0/1; features float32 frames*d stored as h=frames, w=d; plucker
float32 h*w*6 (moment, direction).
"""
from __future__ import annotations

import json
import math
import os
import struct
import tempfile
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import __version__
from .geometry import CameraIntrinsics, Frame, GeometryError, Pose, Trajectory


class FormatError(ValueError):
    """Malformed input, with the offending location (file, line or byte offset)."""

    def __init__(self, message: str, location: str | None = None):
        super().__init__(f"{location}: {message}" if location else message)
        self.message = message
        self.location = location

    def to_dict(self) -> dict:
        return {"type": type(self).__name__, "message": self.message, "location": self.location}


class TrajectoryFormatError(FormatError):
    def __init__(self, message: str, line: int | None = None, source: str | None = None):
        loc = None
        if line is not None:
            loc = f"{source}:{line}" if source else f"line {line}"
        elif source:
            loc = source
        super().__init__(message, loc)
        self.line = line


class RasterFormatError(FormatError):
    pass


class ManifestError(FormatError):
    pass


def atomic_write(path, data: bytes | str) -> Path:
    """Write via a temp file in the same directory and rename over ``path``."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    if isinstance(data, str):
        data = data.encode("utf-8")
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    return path


# --- trajectory text -------------------------------------------------------

TRAJECTORY_FIELDS = 17
_CALIBRATED_TAG = "calibrated"


def _num(x: float) -> str:
    return format(float(x), ".17g")


def write_trajectory(traj: Trajectory, image_size: tuple[int, int] | None = None) -> str:
    """Serialize a trajectory; ``image_size`` is only needed for an empty one."""
    sizes = {(f.intrinsics.width, f.intrinsics.height) for f in traj.frames}
    if len(sizes) > 1:
        raise GeometryError(f"frames have different image sizes: {sorted(sizes)}")
    if sizes:
        size = sizes.pop()
        if image_size is not None and tuple(image_size) != size:
            raise GeometryError(f"image_size {image_size} does not match frames {size}")
    elif image_size is None:
        raise GeometryError("empty trajectory needs an explicit image_size")
    else:
        size = tuple(image_size)

    lines = ["# camtraj trajectory v1"]
    if traj.scale_calibrated:
        lines.append(f"# {_CALIBRATED_TAG}")
    lines.append(f"{int(size[0])} {int(size[1])}")
    for f in traj.frames:
        k = f.intrinsics
        R, t = f.pose.R, f.pose.t
        vals = [k.fx, k.fy, k.cx, k.cy]
        for r in range(3):
            vals.extend([R[r, 0], R[r, 1], R[r, 2], t[r]])
        lines.append(" ".join([str(int(f.frame_index)), *(_num(v) for v in vals)]))
    return "\n".join(lines) + "\n"


def parse_trajectory(text: str, source: str | None = None) -> Trajectory:
    """Parse trajectory text.

    The first non-comment line is ``width height``; each following line is
    ``frame_index fx fy cx cy r11 r12 r13 t1 r21 r22 r23 t2 r31 r32 r33 t3``.
    A ``# calibrated`` comment sets the calibration flag.
    """
    size = None
    calibrated = False
    frames: list[Frame] = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line:
            continue
        if line.startswith("#"):
            if line[1:].strip() == _CALIBRATED_TAG:
                calibrated = True
            continue
        parts = line.split()
        if size is None:
            if len(parts) != 2:
                raise TrajectoryFormatError(
                    f"header must be 'width height', got {len(parts)} fields", lineno, source)
            try:
                size = (int(parts[0]), int(parts[1]))
            except ValueError:
                raise TrajectoryFormatError(f"bad header {line!r}", lineno, source) from None
            if size[0] < 1 or size[1] < 1:
                raise TrajectoryFormatError(f"image size must be positive, got {size}", lineno, source)
            continue
        if len(parts) != TRAJECTORY_FIELDS:
            raise TrajectoryFormatError(
                f"expected {TRAJECTORY_FIELDS} fields, got {len(parts)}", lineno, source)
        try:
            idx = int(parts[0])
        except ValueError:
            raise TrajectoryFormatError(f"bad frame index {parts[0]!r}", lineno, source) from None
        try:
            vals = [float(p) for p in parts[1:]]
        except ValueError as exc:
            raise TrajectoryFormatError(f"malformed number ({exc})", lineno, source) from None
        if not all(math.isfinite(v) for v in vals):
            raise TrajectoryFormatError("non-finite value", lineno, source)
        if frames and idx <= frames[-1].frame_index:
            raise TrajectoryFormatError(
                f"frame_index {idx} not greater than {frames[-1].frame_index}", lineno, source)
        M = np.array(vals[4:]).reshape(3, 4)
        try:
            k = CameraIntrinsics(vals[0], vals[1], vals[2], vals[3], size[0], size[1])
            pose = Pose(M[:, :3], M[:, 3])
        except GeometryError as exc:
            raise TrajectoryFormatError(str(exc), lineno, source) from None
        frames.append(Frame(idx, k, pose))
    if size is None:
        raise TrajectoryFormatError("missing 'width height' header", None, source)
    return Trajectory(tuple(frames), calibrated)


def read_trajectory(path) -> Trajectory:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except UnicodeDecodeError as exc:
        raise TrajectoryFormatError(f"not UTF-8 text ({exc.reason})", None, str(path)) from None
    return parse_trajectory(text, source=str(path))


def save_trajectory(path, traj: Trajectory, image_size=None) -> Path:
    return atomic_write(path, write_trajectory(traj, image_size))


# --- raster container ------------------------------------------------------

MAGIC = b"CTRW"
HEADER = struct.Struct("<4sBBHII")
KIND_CODES = {"depth": 1, "flow": 2, "mask": 3, "features": 4, "plucker": 5}
KIND_NAMES = {v: k for k, v in KIND_CODES.items()}
DTYPE_CODES = {"float32": 1, "uint8": 2}
_KIND_DTYPE = {"depth": "float32", "flow": "float32", "mask": "uint8",
               "features": "float32", "plucker": "float32"}
_KIND_CHANNELS = {"depth": 1, "flow": 2, "mask": 1, "features": 1, "plucker": 6}


def _raster_shape(kind: str, h: int, w: int) -> tuple[int, ...]:
    c = _KIND_CHANNELS[kind]
    return (h, w) if c == 1 else (h, w, c)


def encode_raster(array, kind: str) -> bytes:
    if kind not in KIND_CODES:
        raise ValueError(f"unknown raster kind {kind!r}")
    dtype = np.dtype(_KIND_DTYPE[kind]).newbyteorder("<")
    a = np.asarray(array)
    if kind == "mask":
        a = a.astype(bool).astype(np.uint8)
    if a.ndim < 2:
        raise ValueError(f"{kind} raster needs at least 2 dimensions, got {a.shape}")
    h, w = a.shape[:2]
    if a.shape != _raster_shape(kind, h, w):
        raise ValueError(f"{kind} raster must have shape {_raster_shape(kind, h, w)}, got {a.shape}")
    header = HEADER.pack(MAGIC, KIND_CODES[kind], DTYPE_CODES[_KIND_DTYPE[kind]], 0, h, w)
    return header + np.ascontiguousarray(a, dtype=dtype).tobytes()


def decode_raster(data: bytes, kind: str | None = None, source: str | None = None
                  ) -> tuple[str, np.ndarray]:
    """Decode container bytes into (kind, array); ``kind`` if given must match."""
    loc = source or "<bytes>"
    if len(data) < HEADER.size:
        raise RasterFormatError(
            f"truncated header: expected {HEADER.size} bytes, got {len(data)}", loc)
    magic, kcode, dcode, reserved, h, w = HEADER.unpack_from(data)
    if magic != MAGIC:
        raise RasterFormatError(f"bad magic {magic!r}, expected {MAGIC!r}", f"{loc}@0")
    if kcode not in KIND_NAMES:
        raise RasterFormatError(f"unknown kind code {kcode}", f"{loc}@4")
    file_kind = KIND_NAMES[kcode]
    if kind is not None and kind != file_kind:
        raise RasterFormatError(f"expected {kind} raster, file holds {file_kind}", f"{loc}@4")
    want_dtype = _KIND_DTYPE[file_kind]
    if dcode != DTYPE_CODES[want_dtype]:
        raise RasterFormatError(
            f"dtype code {dcode} does not match {file_kind} ({want_dtype})", f"{loc}@5")
    if reserved != 0:
        raise RasterFormatError(f"reserved field must be 0, got {reserved}", f"{loc}@6")
    if h == 0 or w == 0:
        raise RasterFormatError(f"empty raster {h}x{w}", f"{loc}@8")
    shape = _raster_shape(file_kind, h, w)
    dtype = np.dtype(want_dtype).newbyteorder("<")
    expected = HEADER.size + int(np.prod(shape)) * dtype.itemsize
    if len(data) != expected:
        what = "truncated payload" if len(data) < expected else "trailing bytes"
        raise RasterFormatError(f"{what}: expected {expected} bytes, got {len(data)}", loc)
    a = np.frombuffer(data, dtype=dtype, offset=HEADER.size).reshape(shape)
    a = a.astype(dtype.newbyteorder("="))
    if file_kind == "mask":
        if np.any(a > 1):
            raise RasterFormatError("mask values must be 0 or 1", loc)
        return file_kind, a.astype(bool)
    if file_kind == "depth":
        if np.any(np.isinf(a)):
            raise RasterFormatError("depth contains infinite values", loc)
    elif not np.all(np.isfinite(a)):
        raise RasterFormatError(f"{file_kind} contains non-finite values", loc)
    return file_kind, a


def read_raster(path, kind: str | None = None) -> np.ndarray:
    """Read a raster file; NaN depth entries are kept (see ``depth_validity``)."""
    path = Path(path)
    return decode_raster(path.read_bytes(), kind, str(path))[1]


def write_raster(path, array, kind: str) -> Path:
    return atomic_write(path, encode_raster(array, kind))


def depth_validity(depth: np.ndarray) -> np.ndarray:
    with np.errstate(invalid="ignore"):
        return np.isfinite(depth) & (depth > 0)


# --- manifest --------------------------------------------------------------

MANIFEST_VERSION = 1
_ENTRY_PATHS = ("trajectory", "depth_dir", "flow_dir", "mask_dir")


@dataclass(frozen=True)
class ManifestEntry:
    video_id: str
    trajectory: Path
    depth_dir: Path
    flow_dir: Path
    mask_dir: Path
    features: Path | None = None


@dataclass(frozen=True)
class DatasetManifest:
    entries: tuple[ManifestEntry, ...]
    version: int = MANIFEST_VERSION

    def __iter__(self):
        return iter(self.entries)

    def __len__(self):
        return len(self.entries)


def parse_manifest(text: str, root=".", source: str | None = None) -> DatasetManifest:
    """Parse manifest JSON; relative paths resolve against ``root``."""
    loc = source or "<manifest>"
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ManifestError(f"invalid JSON: {exc.msg}", f"{loc}:{exc.lineno}") from None
    if not isinstance(doc, dict) or not isinstance(doc.get("entries"), list):
        raise ManifestError("manifest must be an object with an 'entries' list", loc)
    version = doc.get("version", MANIFEST_VERSION)
    if version != MANIFEST_VERSION:
        raise ManifestError(f"unsupported manifest version {version!r}", loc)
    root = Path(root)
    seen = set()
    entries = []
    for i, e in enumerate(doc["entries"]):
        where = f"{loc}:entries[{i}]"
        if not isinstance(e, dict):
            raise ManifestError("entry must be an object", where)
        vid = e.get("video_id")
        if not isinstance(vid, str) or not vid:
            raise ManifestError("video_id must be a non-empty string", where)
        if vid in seen:
            raise ManifestError(f"duplicate video_id {vid!r}", where)
        seen.add(vid)
        paths = {}
        for key in _ENTRY_PATHS:
            p = e.get(key)
            if not isinstance(p, str) or not p:
                raise ManifestError(f"{key} must be a non-empty string", where)
            paths[key] = root / p
        feat = e.get("features")
        if feat is not None and (not isinstance(feat, str) or not feat):
            raise ManifestError("features must be a non-empty string when given", where)
        entries.append(ManifestEntry(vid, features=root / feat if feat else None, **paths))
    return DatasetManifest(tuple(entries), version)


def read_manifest(path) -> DatasetManifest:
    path = Path(path)
    return parse_manifest(path.read_text(encoding="utf-8"), path.parent, str(path))


def write_manifest(manifest: DatasetManifest, root=".") -> str:
    root = Path(root)

    def rel(p):
        try:
            return Path(p).relative_to(root).as_posix()
        except ValueError:
            return Path(p).as_posix()

    entries = []
    for e in manifest.entries:
        d = {"video_id": e.video_id, **{k: rel(getattr(e, k)) for k in _ENTRY_PATHS}}
        if e.features is not None:
            d["features"] = rel(e.features)
        entries.append(d)
    return json.dumps({"version": manifest.version, "entries": entries}, indent=2, sort_keys=True) + "\n"


# --- report ----------------------------------------------------------------

REPORT_SECTIONS = ("calibration", "profile", "balance", "metrics")
SIGNIFICANT_DIGITS = 9


def _normalize(x):
    if isinstance(x, dict):
        return {str(k): _normalize(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_normalize(v) for v in x]
    if isinstance(x, np.ndarray):
        return [_normalize(v) for v in x.tolist()]
    if isinstance(x, (bool, np.bool_)):
        return bool(x)
    if isinstance(x, (int, np.integer)):
        return int(x)
    if isinstance(x, (float, np.floating)):
        x = float(x)
        if not math.isfinite(x):
            return None
        return float(format(x, f".{SIGNIFICANT_DIGITS}g"))
    if x is None or isinstance(x, str):
        return x
    if isinstance(x, Path):
        return x.as_posix()
    raise TypeError(f"cannot serialize {type(x).__name__} in a report")


def write_report(results: dict | None = None, meta: dict | None = None) -> str:
    """Serialize a result bundle as JSON with sorted keys and 9 significant digits.

    Top-level keys are ``meta`` (always present) plus any of ``calibration``,
    ``profile``, ``balance`` and ``metrics``.
    """
    results = dict(results or {})
    results.pop("meta", None)
    unknown = set(results) - set(REPORT_SECTIONS)
    if unknown:
        raise ValueError(f"unknown report sections: {sorted(unknown)}")
    doc = {"meta": {"tool": "camtraj", "version": __version__, **(meta or {})}}
    doc.update(results)
    return json.dumps(_normalize(doc), indent=2, sort_keys=True, allow_nan=False) + "\n"


def parse_report(text: str) -> dict:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise FormatError(f"invalid JSON: {exc.msg}", f"line {exc.lineno}") from None
    if not isinstance(doc, dict) or "meta" not in doc:
        raise FormatError("report must be an object with a 'meta' section")
    unknown = set(doc) - {"meta", *REPORT_SECTIONS}
    if unknown:
        raise FormatError(f"unknown report sections: {sorted(unknown)}")
    return doc
