"""Run configuration: one TOML file, overridable from the command line.

Every stage reads the same config object, so a run is fully described by
the config file plus its --set overrides; the audit sidecars hash exactly
that record.
"""

from __future__ import annotations

import copy
import hashlib
import json
from dataclasses import dataclass, field
from datetime import date, datetime
from pathlib import Path
from typing import Any, Optional

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from .catalog import EpochConfig
from .detect import DetectorConfig
from .errors import ConfigError

DEFAULTS: dict[str, Any] = {
    "paths": {
        "catalog": "catalog.csv",
        "rasters_dir": "rasters",
        "footprints": "footprints.geojson",
        "reference_points": "points.geojson",
        "output_dir": "out",
        "scene_spec": "scene.json",
    },
    "epochs": {
        "war_onset": date(2023, 10, 7),
        "conflict_window": [date(2023, 10, 12), date(2024, 10, 31)],
        "pre_window": [date(2020, 6, 1), date(2023, 10, 6)],
        "counterfactual_shift_months": 24,
    },
    "detector": {
        "k": -0.20,
        "z_threshold": -2.0,
        "sigma_floor": 1e-6,
        "persistence_window_days": 31,
    },
    "planning": {
        "window_days": 30,
        "max_bperp_m": 250.0,
        "tolerance_days": 6,
        "min_pairs": 15,
        "max_pairs": 25,
    },
    "evaluation": {
        "grace_steps": 9,
        "bins": 100,
        "scope": "valid-only",
        "coverage_threshold": 0.99,
        "stable_region": [],  # [xmin, ymin, xmax, ymax] in the working CRS
    },
    "simulate": {
        "width": 64,
        "height": 64,
        "seed": 20231007,
        "max_timesteps": 6,
    },
    "fetch": {
        "endpoint": "",  # empty means read LTCCD_API_URL
        "max_retries": 2,
        "poll_initial_s": 5.0,
        "poll_cap_s": 120.0,
        "looks": "10x2",
    },
    "run": {
        "crs": 32636,
        "max_timesteps": 0,  # 0 means every conflict acquisition
        "jobs": 4,
    },
}


def _coerce_date(value: Any, where: str) -> date:
    if isinstance(value, date) and not isinstance(value, datetime):
        return value
    if isinstance(value, datetime):
        return value.date()
    if isinstance(value, str):
        try:
            return date.fromisoformat(value)
        except ValueError as exc:
            raise ConfigError(f"{where}: {exc}") from exc
    raise ConfigError(f"{where}: expected a date, got {value!r}")


def _merge(base: dict, override: dict) -> dict:
    merged = dict(base)
    for key, value in override.items():
        if isinstance(value, dict) and isinstance(merged.get(key), dict):
            merged[key] = _merge(merged[key], value)
        else:
            merged[key] = value
    return merged


def parse_override(text: str) -> tuple[list[str], Any]:
    """Parse one --set KEY=VALUE override with a dotted key path."""
    if "=" not in text:
        raise ConfigError(f"override {text!r} is not KEY=VALUE")
    key, raw = text.split("=", 1)
    path = key.strip().split(".")
    if not all(path):
        raise ConfigError(f"override {text!r} has an empty key segment")
    raw = raw.strip()
    for parser in (json.loads, date.fromisoformat):
        try:
            return path, parser(raw)
        except (ValueError, TypeError):
            continue
    return path, raw


def apply_override(tree: dict, path: list[str], value: Any) -> None:
    node = tree
    for part in path[:-1]:
        node = node.setdefault(part, {})
        if not isinstance(node, dict):
            raise ConfigError(f"override path {'.'.join(path)} crosses a non-table value")
    node[path[-1]] = value


@dataclass
class RunConfig:
    """Validated parameters for one pipeline run."""

    config_path: Optional[Path]
    tree: dict
    base_dir: Path
    epochs: EpochConfig = field(init=False)
    detector: DetectorConfig = field(init=False)

    def __post_init__(self):
        e = self.tree["epochs"]
        where = "epochs"
        try:
            self.epochs = EpochConfig(
                conflict_window=tuple(_coerce_date(d, where) for d in e["conflict_window"]),
                pre_window=tuple(_coerce_date(d, where) for d in e["pre_window"]),
                war_onset=_coerce_date(e["war_onset"], where),
                counterfactual_shift=int(e["counterfactual_shift_months"]),
            )
            self.detector = DetectorConfig(**{
                k: (int(v) if k == "persistence_window_days" else float(v))
                for k, v in self.tree["detector"].items()
            })
        except (KeyError, TypeError, ValueError) as exc:
            raise ConfigError(f"invalid configuration: {exc}") from exc
        scope = self.tree["evaluation"]["scope"]
        if scope not in ("valid-only", "all"):
            raise ConfigError(f"evaluation.scope must be valid-only or all, got {scope!r}")

    def section(self, name: str) -> dict:
        return self.tree[name]

    def path(self, name: str, must_exist: bool = False) -> Path:
        try:
            raw = self.tree["paths"][name]
        except KeyError:
            raise ConfigError(f"paths.{name} is not configured") from None
        p = Path(raw)
        if not p.is_absolute():
            p = self.base_dir / p
        if must_exist and not p.exists():
            raise ConfigError(f"paths.{name} does not exist: {p}")
        return p

    def output_dir(self) -> Path:
        out = self.path("output_dir")
        out.mkdir(parents=True, exist_ok=True)
        return out

    def content_hash(self) -> str:
        """Stable hash over the effective (merged, overridden) configuration."""
        canonical = json.dumps(self.tree, sort_keys=True, default=str).encode()
        return hashlib.sha256(canonical).hexdigest()


def load_config(path, overrides: tuple[str, ...] = ()) -> RunConfig:
    """Read a TOML config, apply --set overrides, and validate."""
    config_path = Path(path)
    try:
        with open(config_path, "rb") as fh:
            user_tree = tomllib.load(fh)
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {config_path}") from None
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"config file {config_path} is not valid TOML: {exc}") from exc
    # deep-copy so overrides can never reach back into the shared defaults
    tree = _merge(copy.deepcopy(DEFAULTS), user_tree)
    for text in overrides:
        key_path, value = parse_override(text)
        apply_override(tree, key_path, value)
    return RunConfig(
        config_path=config_path,
        tree=tree,
        base_dir=config_path.resolve().parent,
    )
