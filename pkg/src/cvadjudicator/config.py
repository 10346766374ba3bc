"""Layered run configuration: command-line flag > config file > built-in default."""

from __future__ import annotations

from dataclasses import dataclass, fields
from importlib import resources
from pathlib import Path
from typing import Any, Mapping

import yaml

from .gateway import BackendDescriptor

METHODS = ("tree_of_thoughts", "summarizer_adjudicator", "both")


class ConfigError(Exception):
    pass


def asset_path(*parts: str) -> str:
    return str(resources.files("cvadjudicator").joinpath("assets", *parts))


@dataclass
class RunConfig:
    corpus_path: str | None = None
    gold_events_path: str | None = None
    gold_adjudication_path: str | None = None
    verbalizer_path: str = asset_path("verbalizer.yaml")
    extraction_template_path: str = asset_path("templates", "extraction.txt")
    tree_path: str = asset_path("tree.yaml")
    guideline_path: str = asset_path("guidelines.txt")
    rubric_path: str = asset_path("rubric.yaml")
    abbreviations_path: str = asset_path("abbreviations.txt")
    summarize_template_path: str = asset_path("templates", "baseline_summarize.txt")
    baseline_template_path: str = asset_path("templates", "baseline_adjudicate.txt")
    cleart_template_path: str = asset_path("templates", "cleart.txt")
    adjudication_backend: BackendDescriptor | None = None
    evaluator_backend: BackendDescriptor | None = None
    method: str = "tree_of_thoughts"
    out_dir: str = "runs/latest"
    max_in_flight: int = 4
    truncation_events: int = 50
    retry_count: int = 3
    record_fixtures_path: str | None = None

    def __post_init__(self):
        if self.method not in METHODS:
            raise ConfigError(f"method must be one of {METHODS}, got {self.method!r}")
        if self.max_in_flight < 1:
            raise ConfigError("max_in_flight must be positive")

    def to_dict(self) -> dict:
        values = {}
        for f in fields(self):
            value = getattr(self, f.name)
            if isinstance(value, BackendDescriptor):
                value = value.to_dict()
            values[f.name] = value
        return values


_INT_FIELDS = {"max_in_flight", "truncation_events", "retry_count"}
_BACKEND_FIELDS = {"adjudication_backend", "evaluator_backend"}


def _coerce(name: str, value: Any) -> Any:
    if value is None:
        return None
    if name in _INT_FIELDS:
        return int(value)
    if name in _BACKEND_FIELDS:
        if isinstance(value, (BackendDescriptor, Mapping)):
            return value if isinstance(value, BackendDescriptor) else dict(value)
        raise ConfigError(f"{name} must be a mapping")
    return value


def load_config_file(path: str | Path) -> dict:
    with open(path, encoding="utf-8") as handle:
        data = yaml.safe_load(handle) or {}
    if not isinstance(data, dict):
        raise ConfigError(f"config file {path} must contain a mapping")
    return data


def resolve_config(
    file_values: Mapping[str, Any] | None = None,
    flag_values: Mapping[str, Any] | None = None,
) -> RunConfig:
    """Merge the three layers into a validated RunConfig.

    Backend fields merge key-by-key across layers so a flag can override just
    the kind while the config file supplies the rest of the descriptor.
    """
    known = {f.name for f in fields(RunConfig)}
    merged: dict[str, Any] = {}
    for layer in (file_values or {}, flag_values or {}):
        unknown = set(layer) - known
        if unknown:
            raise ConfigError(f"unknown config fields: {sorted(unknown)}")
        for name, value in layer.items():
            if value is None:
                continue
            value = _coerce(name, value)
            if name in _BACKEND_FIELDS and isinstance(merged.get(name), dict) and isinstance(value, dict):
                merged[name] = {**merged[name], **value}
            else:
                merged[name] = value
    retry_count = merged.get("retry_count", RunConfig.retry_count)
    for name in _BACKEND_FIELDS:
        if isinstance(merged.get(name), dict):
            descriptor = dict(merged[name])
            # the run-level retry count applies unless the descriptor sets its own
            descriptor.setdefault("max_retries", retry_count)
            try:
                merged[name] = BackendDescriptor.from_dict(descriptor)
            except (TypeError, ValueError) as exc:
                raise ConfigError(f"invalid {name}: {exc}") from exc
    try:
        return RunConfig(**merged)
    except TypeError as exc:
        raise ConfigError(str(exc)) from exc
