"""Pipeline configuration: JSON config files plus CLI flag overrides.

Unknown keys are rejected so typos fail loudly. Defaults that come from the
problem domain (tile size 270, 25% overlap, pen thresholds 0.9/0.2, unit
cost weights) live here; the pen pixel-rule cutoffs and all heuristic
segmenter thresholds are tool defaults and fully configurable.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

from .errors import ConfigError
from .penmark import CLEAN_BACKENDS, PenRules, PenThresholds
from .segmenter import HeuristicParams, SegBackendConfig
from .selector import Weights


@dataclass
class PenConfig:
    thresholds: PenThresholds = field(default_factory=PenThresholds)
    rules: PenRules = field(default_factory=PenRules)
    cleaning_backend: str = "fill"

    def __post_init__(self) -> None:
        if self.cleaning_backend not in CLEAN_BACKENDS:
            raise ConfigError(f"unknown cleaning backend {self.cleaning_backend!r}")


@dataclass
class BaselineConfig:
    t_bg: float = 0.5
    t_art: float = 0.1


@dataclass
class PipelineConfig:
    tile_w: int = 270
    tile_h: int = 270
    overlap: float = 0.25
    thumb_w: int = 5000
    thumb_h: int = 5000
    dilate_iters: int = 1
    workers: int = 1
    seed: int = 0
    c_max: float = 1.0
    save_tiles: bool = False
    mosaic_downsample: int = 1
    pen: PenConfig = field(default_factory=PenConfig)
    segmentation: SegBackendConfig = field(default_factory=SegBackendConfig)
    weights: Weights = field(default_factory=Weights)
    baseline: BaselineConfig = field(default_factory=BaselineConfig)

    def __post_init__(self) -> None:
        if self.tile_w <= 0 or self.tile_h <= 0:
            raise ConfigError("tile dimensions must be positive")
        if not 0.0 <= self.overlap < 1.0:
            raise ConfigError("overlap must be in [0, 1)")
        if self.thumb_w <= 0 or self.thumb_h <= 0:
            raise ConfigError("thumbnail dimensions must be positive")
        if self.workers < 1:
            raise ConfigError("workers must be >= 1")
        if self.mosaic_downsample < 1:
            raise ConfigError("mosaic_downsample must be >= 1")

    def to_dict(self) -> dict:
        d = {
            "tile_w": self.tile_w,
            "tile_h": self.tile_h,
            "overlap": self.overlap,
            "thumb_w": self.thumb_w,
            "thumb_h": self.thumb_h,
            "dilate_iters": self.dilate_iters,
            "workers": self.workers,
            "seed": self.seed,
            "c_max": self.c_max,
            "save_tiles": self.save_tiles,
            "mosaic_downsample": self.mosaic_downsample,
            "pen": {
                "p_max": self.pen.thresholds.p_max,
                "p_min": self.pen.thresholds.p_min,
                "dark_max": self.pen.rules.dark_max,
                "diff_min": self.pen.rules.diff_min,
                "channel_min": self.pen.rules.channel_min,
                "cleaning_backend": self.pen.cleaning_backend,
            },
            "segmentation": {
                "kind": self.segmentation.kind,
                "maskdir": str(self.segmentation.maskdir)
                if self.segmentation.maskdir else None,
                "sidecar_cmd": self.segmentation.sidecar_cmd,
                "sidecar_procs": self.segmentation.sidecar_procs,
                "sidecar_timeout": self.segmentation.sidecar_timeout,
                "heuristic": asdict(self.segmentation.heuristic),
            },
            "weights": asdict(self.weights),
            "baseline": asdict(self.baseline),
        }
        return d


def _check_keys(raw: dict, allowed: set[str], where: str) -> None:
    unknown = set(raw) - allowed
    if unknown:
        raise ConfigError(f"unknown config key(s) in {where}: {sorted(unknown)}")


def config_from_dict(raw: dict) -> PipelineConfig:
    _check_keys(raw, {
        "tile_w", "tile_h", "overlap", "thumb_w", "thumb_h", "dilate_iters",
        "workers", "seed", "c_max", "save_tiles", "mosaic_downsample",
        "pen", "segmentation", "weights", "baseline",
    }, "config")

    try:
        pen_raw = raw.get("pen", {})
        _check_keys(pen_raw, {"p_max", "p_min", "dark_max", "diff_min",
                              "channel_min", "cleaning_backend"}, "pen")
        pen = PenConfig(
            thresholds=PenThresholds(p_max=pen_raw.get("p_max", 0.9),
                                     p_min=pen_raw.get("p_min", 0.2)),
            rules=PenRules(dark_max=pen_raw.get("dark_max", 60),
                           diff_min=pen_raw.get("diff_min", 50),
                           channel_min=pen_raw.get("channel_min", 100)),
            cleaning_backend=pen_raw.get("cleaning_backend", "fill"),
        )

        seg_raw = raw.get("segmentation", {})
        _check_keys(seg_raw, {"kind", "maskdir", "sidecar_cmd", "sidecar_procs",
                              "sidecar_timeout", "heuristic"}, "segmentation")
        heur_raw = seg_raw.get("heuristic", {})
        _check_keys(heur_raw, {"bg_lightness", "bg_saturation", "fold_saturation",
                               "fold_lightness", "blur_variance", "blur_window"},
                    "segmentation.heuristic")
        segmentation = SegBackendConfig(
            kind=seg_raw.get("kind", "heuristic"),
            maskdir=Path(seg_raw["maskdir"]) if seg_raw.get("maskdir") else None,
            sidecar_cmd=seg_raw.get("sidecar_cmd"),
            sidecar_procs=seg_raw.get("sidecar_procs", 1),
            sidecar_timeout=seg_raw.get("sidecar_timeout", 30.0),
            heuristic=HeuristicParams(**heur_raw),
        )

        weights_raw = raw.get("weights", {})
        _check_keys(weights_raw, {"lambda_fo", "lambda_bl", "lambda_bg"}, "weights")
        baseline_raw = raw.get("baseline", {})
        _check_keys(baseline_raw, {"t_bg", "t_art"}, "baseline")

        return PipelineConfig(
            tile_w=raw.get("tile_w", 270),
            tile_h=raw.get("tile_h", 270),
            overlap=raw.get("overlap", 0.25),
            thumb_w=raw.get("thumb_w", 5000),
            thumb_h=raw.get("thumb_h", 5000),
            dilate_iters=raw.get("dilate_iters", 1),
            workers=raw.get("workers", 1),
            seed=raw.get("seed", 0),
            c_max=raw.get("c_max", 1.0),
            save_tiles=raw.get("save_tiles", False),
            mosaic_downsample=raw.get("mosaic_downsample", 1),
            pen=pen,
            segmentation=segmentation,
            weights=Weights(**weights_raw),
            baseline=BaselineConfig(**baseline_raw),
        )
    except (ValueError, TypeError) as exc:
        raise ConfigError(str(exc)) from exc


def load_config(path: Path | None, overrides: dict | None = None) -> PipelineConfig:
    """Load a JSON config (optional) and apply flat CLI overrides on top."""
    raw: dict = {}
    if path is not None:
        try:
            with open(path, encoding="utf-8") as f:
                raw = json.load(f)
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        except json.JSONDecodeError as exc:
            raise ConfigError(f"invalid JSON in {path}: {exc}") from exc
        if not isinstance(raw, dict):
            raise ConfigError(f"config root must be a JSON object: {path}")
    if overrides:
        raw = _deep_merge(raw, overrides)
    return config_from_dict(raw)


def _deep_merge(base: dict, extra: dict) -> dict:
    out = dict(base)
    for key, value in extra.items():
        if isinstance(value, dict) and isinstance(out.get(key), dict):
            out[key] = _deep_merge(out[key], value)
        else:
            out[key] = value
    return out
