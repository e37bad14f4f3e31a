from __future__ import annotations

from pathlib import Path
from typing import Any, Dict, Mapping, Optional

import yaml
from pydantic import ValidationError

from app.schemas.experiment import ExperimentConfig
from app.utils.errors import ConfigError


def _merge(base: Dict[str, Any], updates: Mapping[str, Any]) -> Dict[str, Any]:
    merged = dict(base)
    for key, value in updates.items():
        if isinstance(value, Mapping) and isinstance(merged.get(key), Mapping):
            merged[key] = _merge(dict(merged[key]), value)
        else:
            merged[key] = value
    return merged


def _validate(payload: Mapping[str, Any]) -> ExperimentConfig:
    try:
        return ExperimentConfig.model_validate(payload)
    except ValidationError as exc:
        first = exc.errors()[0]
        where = ".".join(str(part) for part in first["loc"]) or "config"
        raise ConfigError(f"{where}: {first['msg']}") from exc


def load_experiment_config(path: str | Path | None = None, overrides: Optional[Mapping[str, Any]] = None) -> ExperimentConfig:
    """Reads a YAML config (or the defaults when ``path`` is None) and applies nested overrides."""
    payload: Dict[str, Any] = {}
    if path is not None:
        config_path = Path(path)
        if not config_path.exists():
            raise ConfigError(f"config file not found: {config_path}")
        try:
            loaded = yaml.safe_load(config_path.read_text(encoding="utf-8"))
        except yaml.YAMLError as exc:
            raise ConfigError(f"{config_path} is not valid YAML: {exc}") from exc
        if loaded is not None and not isinstance(loaded, dict):
            raise ConfigError(f"{config_path} must contain a mapping at the top level")
        payload = loaded or {}
    if overrides:
        payload = _merge(payload, overrides)
    return _validate(payload)


def cli_overrides(
    seed: Optional[int] = None,
    k: Optional[int] = None,
    path_cap: Optional[int] = None,
    out: Optional[str] = None,
    lambdas: Optional[list[float]] = None,
    thresholds: Optional[list[float]] = None,
    dataset_file: Optional[str] = None,
) -> Dict[str, Any]:
    """Nested override mapping from command line flags; ``seed`` reseeds every stage."""
    overrides: Dict[str, Any] = {}
    if seed is not None:
        overrides.update(
            {
                "seed": seed,
                "synthetic": {"seed": seed},
                "topology": {"seed": seed},
                "clusters": {"seed": seed},
                "training": {"seed": seed},
            }
        )
    if k is not None:
        overrides.setdefault("clusters", {})["k"] = k
    if path_cap is not None:
        overrides.setdefault("topology", {})["path_cap"] = path_cap
    if out is not None:
        overrides["output_dir"] = out
    if lambdas:
        overrides["lambdas"] = sorted(lambdas)
    if thresholds:
        overrides["thresholds"] = sorted(thresholds)
    if dataset_file is not None:
        overrides["dataset_file"] = dataset_file
        overrides["synthetic"] = None
    return overrides


def dump_config(config: ExperimentConfig, path: str | Path) -> Path:
    target = Path(path)
    target.parent.mkdir(parents=True, exist_ok=True)
    target.write_text(yaml.safe_dump(config.model_dump(mode="json"), sort_keys=False), encoding="utf-8")
    return target
