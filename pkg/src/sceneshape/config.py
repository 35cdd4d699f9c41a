"""Run configuration: defaults < JSON config file < command-line flags."""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field, fields, is_dataclass
from pathlib import Path
from typing import Any, Optional

from .errors import ConfigError
from .losses import MSG_SCALES, SR_TAU, TRIM_FRACTION
from .metrics import DBE_MAX_DIST
from .recovery import FOCAL_SEARCH, SHIFT_SEARCH, SegmentParams

CONFIG_VERSION = 1


@dataclass
class SearchConfig:
    lower: float
    upper: float
    step: float
    tol: float = 1e-4


@dataclass
class RecoveryConfig:
    shift: SearchConfig = field(default_factory=lambda: SearchConfig(
        SHIFT_SEARCH.lower, SHIFT_SEARCH.upper, SHIFT_SEARCH.step, SHIFT_SEARCH.tol))
    focal: SearchConfig = field(default_factory=lambda: SearchConfig(
        FOCAL_SEARCH.lower, FOCAL_SEARCH.upper, FOCAL_SEARCH.step, FOCAL_SEARCH.tol))
    normal_window: int = SegmentParams.window
    cluster_eps: float = SegmentParams.eps
    min_segment: int = SegmentParams.min_pts
    grow_steps: int = SegmentParams.grow_steps
    fov_guess: float = 60.0


@dataclass
class SynthConfig:
    count: int = 4
    resolution: int = 128
    fov: float = 60.0


@dataclass
class DistortConfig:
    mode: str = "shift"
    # None: draw from the training ranges with the run seed
    delta_d: Optional[float] = None
    alpha_f: Optional[float] = None


@dataclass
class CompletionConfig:
    pattern: dict = field(default_factory=lambda: {"kind": "uniform", "count": 500})
    outlier_fraction: float = 0.0
    screening: float = 1e-4


@dataclass
class LossConfig:
    tau: float = SR_TAU
    msg_scales: int = MSG_SCALES
    trim_fraction: float = TRIM_FRACTION
    gradcheck_fixtures: int = 20


@dataclass
class EvalConfig:
    align: str = "scale_shift"
    dbe_max_dist: float = DBE_MAX_DIST


@dataclass
class RunConfig:
    version: int = CONFIG_VERSION
    seed: int = 0
    out: str = "out"
    synth: SynthConfig = field(default_factory=SynthConfig)
    distort: DistortConfig = field(default_factory=DistortConfig)
    recovery: RecoveryConfig = field(default_factory=RecoveryConfig)
    completion: CompletionConfig = field(default_factory=CompletionConfig)
    losses: LossConfig = field(default_factory=LossConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)

    def to_dict(self) -> dict:
        return asdict(self)

    def canonical_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))

    def sha256(self) -> str:
        return hashlib.sha256(self.canonical_json().encode()).hexdigest()

    def segment_params(self) -> SegmentParams:
        r = self.recovery
        return SegmentParams(window=r.normal_window, eps=r.cluster_eps, min_pts=r.min_segment,
                             grow_steps=r.grow_steps)


def _merge(obj, data: dict, where: str):
    known = {f.name: f for f in fields(obj)}
    for key, value in data.items():
        if key not in known:
            raise ConfigError(f"unknown config key {where}{key!r}")
        cur = getattr(obj, key)
        if is_dataclass(cur):
            if not isinstance(value, dict):
                raise ConfigError(f"config key {where}{key!r} must be an object")
            _merge(cur, value, f"{where}{key}.")
        else:
            if cur is not None and value is not None and not isinstance(cur, dict):
                want = type(cur)
                if want is float and isinstance(value, int) and not isinstance(value, bool):
                    value = float(value)
                if not isinstance(value, want) or isinstance(value, bool) != isinstance(cur, bool):
                    raise ConfigError(f"config key {where}{key!r} expects {want.__name__}, "
                                      f"got {type(value).__name__}")
            setattr(obj, key, value)
    return obj


def load_config(path: Optional[str] = None, overrides: Optional[dict] = None) -> RunConfig:
    """Defaults, then the JSON file at ``path``, then ``overrides``.

    Override keys use dotted paths, e.g. ``{"recovery.shift.step": 0.02}``.
    """
    cfg = RunConfig()
    if path is not None:
        p = Path(path)
        if not p.exists():
            raise ConfigError(f"config file not found: {path}")
        try:
            data = json.loads(p.read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config file is not valid JSON: {exc}") from None
        if not isinstance(data, dict):
            raise ConfigError("config file must hold a JSON object")
        version = data.get("version", CONFIG_VERSION)
        if version != CONFIG_VERSION:
            raise ConfigError(f"unsupported config version {version}")
        _merge(cfg, data, "")
    for dotted, value in (overrides or {}).items():
        if value is None:
            continue
        nested: Any = value
        for part in reversed(dotted.split(".")):
            nested = {part: nested}
        _merge(cfg, nested, "")
    return cfg
