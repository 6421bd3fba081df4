"""Pipeline configuration.

Config files are JSON objects; every section and key is optional::

    {
      "ransac":   {"iterations": 1024, "inlier_threshold_rel": 0.05,
                   "huber_delta": 0.5, "min_inlier_ratio": 0.3, "rng_seed": 0},
      "analysis": {"n": 6, "gamma": 15.0, "view_change_threshold": 20.0,
                   "turn_threshold": 15.0},
      "balance":  {"cap": "auto"},
      "guidance": {"w_text": 7.5, "w_cam": 8.0},
      "filter":   {"min_flow": null},
      "keyframes": 8,
      "stride": 4
    }

Command-line flags override file values.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

from .analysis import AnalysisParams
from .calibration import RansacParams
from .conditioning import GuidanceWeights
from .io import FormatError

_SECTIONS = {
    "ransac": RansacParams,
    "analysis": AnalysisParams,
    "guidance": GuidanceWeights,
}


@dataclass(frozen=True)
class Config:
    ransac: RansacParams = field(default_factory=RansacParams)
    analysis: AnalysisParams = field(default_factory=AnalysisParams)
    guidance: GuidanceWeights = field(default_factory=GuidanceWeights)
    balance_cap: int | str = "auto"
    min_flow: float | None = None
    keyframes: int = 8
    stride: int = 4

    def __post_init__(self):
        if self.keyframes < 1:
            raise ValueError("keyframes must be >= 1")
        if self.stride < 1:
            raise ValueError("stride must be >= 1")
        if self.balance_cap != "auto" and (not isinstance(self.balance_cap, int) or self.balance_cap < 1):
            raise ValueError(f"balance cap must be a positive integer or 'auto', got {self.balance_cap!r}")

    def with_seed(self, seed: int | None) -> "Config":
        if seed is None:
            return self
        return replace(self, ransac=replace(self.ransac, rng_seed=int(seed)))

    def to_dict(self) -> dict:
        out = {name: {f.name: getattr(getattr(self, name), f.name) for f in fields(cls)}
               for name, cls in _SECTIONS.items()}
        out["balance"] = {"cap": self.balance_cap}
        out["filter"] = {"min_flow": self.min_flow}
        out["keyframes"] = self.keyframes
        out["stride"] = self.stride
        return out


def config_from_dict(doc: dict, source: str = "<config>") -> Config:
    if not isinstance(doc, dict):
        raise FormatError("config must be a JSON object", source)
    allowed = {*_SECTIONS, "balance", "filter", "keyframes", "stride"}
    unknown = set(doc) - allowed
    if unknown:
        raise FormatError(f"unknown config keys: {sorted(unknown)}", source)
    kwargs = {}
    for name, cls in _SECTIONS.items():
        section = doc.get(name, {})
        valid = {f.name for f in fields(cls)}
        bad = set(section) - valid
        if bad:
            raise FormatError(f"unknown {name} keys: {sorted(bad)}", source)
        try:
            kwargs[name] = cls(**section)
        except (TypeError, ValueError) as exc:
            raise FormatError(f"{name}: {exc}", source) from None
    for name, key, target in (("balance", "cap", "balance_cap"), ("filter", "min_flow", "min_flow")):
        section = doc.get(name, {})
        bad = set(section) - {key}
        if bad:
            raise FormatError(f"unknown {name} keys: {sorted(bad)}", source)
        if key in section:
            kwargs[target] = section[key]
    for key in ("keyframes", "stride"):
        if key in doc:
            kwargs[key] = doc[key]
    try:
        return Config(**kwargs)
    except (TypeError, ValueError) as exc:
        raise FormatError(str(exc), source) from None


def load_config(path) -> Config:
    path = Path(path)
    try:
        doc = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise FormatError(f"invalid JSON: {exc.msg}", f"{path}:{exc.lineno}") from None
    return config_from_dict(doc, str(path))
