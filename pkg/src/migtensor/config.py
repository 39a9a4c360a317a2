"""Pipeline configuration: one JSON file plus command-line overrides.

Relative paths inside a config file resolve against the file's directory,
so a config travels with its data. Command-line flags always win over
file values.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional

from .ingestion import ConfigError, FilterPolicy
from .residence import MonthCalendar
from .solver import FitConfig

FORMATS = ("csv", "jsonl")
DETECTION_MODES = ("strict", "modal")


@dataclass(frozen=True)
class PipelineConfig:
    epoch_year: int
    epoch_month: int
    months: int
    registry: Path
    input: Path
    out_dir: Path
    centroids: Optional[Path] = None
    format: str = "csv"
    window_k: int = 1
    detection_mode: str = "strict"
    filter_policy: FilterPolicy = field(default_factory=FilterPolicy)
    fit: FitConfig = field(default_factory=FitConfig)
    top_k: int = 10
    n_top: int = 5
    threads: int = 1

    def __post_init__(self):
        if self.format not in FORMATS:
            raise ConfigError(f"format must be one of {FORMATS}, got {self.format!r}")
        if self.detection_mode not in DETECTION_MODES:
            raise ConfigError(f"detection_mode must be one of {DETECTION_MODES}")
        if self.window_k < 1 or 2 * self.window_k > self.months:
            raise ConfigError(
                f"window_k={self.window_k} out of range for {self.months} months")
        if self.top_k < 1 or self.n_top < 1:
            raise ConfigError("top_k and n_top must be positive")
        if self.threads < 1:
            raise ConfigError("threads must be positive")
        self.calendar  # validates epoch

    @property
    def calendar(self) -> MonthCalendar:
        return MonthCalendar(self.epoch_year, self.epoch_month, self.months)


def _build(raw: dict, base: Path) -> PipelineConfig:
    def path_of(key, required=True):
        value = raw.get(key)
        if value is None:
            if required:
                raise ConfigError(f"config is missing required path {key!r}")
            return None
        p = Path(value)
        return p if p.is_absolute() else base / p

    try:
        epoch = raw["epoch"]
        filter_policy = FilterPolicy(**raw.get("filter", {}))
        fit_raw = dict(raw.get("fit", {}))
        fit = FitConfig(**fit_raw)
        return PipelineConfig(
            epoch_year=int(epoch["year"]),
            epoch_month=int(epoch["month"]),
            months=int(raw["months"]),
            registry=path_of("registry"),
            input=path_of("input"),
            out_dir=path_of("out_dir"),
            centroids=path_of("centroids", required=False),
            format=raw.get("format", "csv"),
            window_k=int(raw.get("window_k", 1)),
            detection_mode=raw.get("detection_mode", "strict"),
            filter_policy=filter_policy,
            fit=fit,
            top_k=int(raw.get("top_k", 10)),
            n_top=int(raw.get("n_top", 5)),
            threads=int(raw.get("threads", 1)),
        )
    except ConfigError:
        raise
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"bad config: {exc}") from exc


def load_config(path) -> PipelineConfig:
    path = Path(path)
    try:
        with open(path, "r", encoding="utf-8") as fh:
            raw = json.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {path} is not valid JSON: {exc}") from exc
    if not isinstance(raw, dict):
        raise ConfigError(f"config {path} must hold a JSON object")
    return _build(raw, path.parent)


# CLI override name -> (target, field); fit fields are nested
_PLAIN_OVERRIDES = {
    "input": ("input", Path),
    "format": ("format", str),
    "out_dir": ("out_dir", Path),
    "window_k": ("window_k", int),
    "detection_mode": ("detection_mode", str),
    "top_k": ("top_k", int),
    "n_top": ("n_top", int),
    "threads": ("threads", int),
}
_FIT_OVERRIDES = {
    "rank": ("rank", int),
    "seed": ("seed", int),
    "restarts": ("restarts", int),
    "max_iters": ("max_iters", int),
    "rel_tol": ("rel_tol", float),
}


def apply_overrides(config: PipelineConfig, overrides: dict) -> PipelineConfig:
    """Apply non-None CLI override values on top of a loaded config."""
    plain, fit_kwargs = {}, {}
    for key, value in overrides.items():
        if value is None:
            continue
        if key in _PLAIN_OVERRIDES:
            name, cast = _PLAIN_OVERRIDES[key]
            plain[name] = cast(value)
        elif key in _FIT_OVERRIDES:
            name, cast = _FIT_OVERRIDES[key]
            fit_kwargs[name] = cast(value)
        else:
            raise ConfigError(f"unknown override {key!r}")
    try:
        if fit_kwargs:
            plain["fit"] = replace(config.fit, **fit_kwargs)
        return replace(config, **plain) if plain else config
    except ValueError as exc:
        raise ConfigError(f"bad override: {exc}") from exc
