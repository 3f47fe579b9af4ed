"""Pipeline configuration: defaults, config files, and flag overrides.

Precedence is flags > config file > built-in defaults. Config files are
JSON or TOML (by extension) with sections mirroring the dataclasses:

    {"background": {"mode": "chroma-key", "key_color": [0, 255, 0], "tolerance": 40.0},
     "grid": {"rows": 16, "cols": 16, "patch_size": 7, "dedup_threshold": 12.0},
     "backend": {"variant": "threshold", "threshold_mode": "otsu"},
     "accept_threshold": 0.5,
     "machine": {"mm_per_pixel": 1.0, "safe_z": 5.0, "cut_z": -1.0},
     "optimize_travel": false}
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass

from .gcode import MachineConfig
from .imaging import BackgroundModel, CORNER_SAMPLE
from .prompts import PromptGridConfig
from .segmentation import BackendConfig

try:
    import tomllib  # Python >= 3.11
except ModuleNotFoundError:  # pragma: no cover - depends on interpreter
    import tomli as tomllib


class ConfigError(Exception):
    pass


@dataclass(frozen=True)
class PipelineConfig:
    background: BackgroundModel
    grid: PromptGridConfig
    backend: BackendConfig
    accept_threshold: float = 0.5
    machine: MachineConfig | None = None
    optimize_travel: bool = False

    def __post_init__(self):
        if not (0.0 <= self.accept_threshold <= 1.0):
            raise ConfigError("accept_threshold must lie in [0, 1]")

    def require_machine(self) -> MachineConfig:
        if self.machine is None:
            raise ConfigError("machine config needs mm_per_pixel (no built-in default)")
        return self.machine


def default_pipeline_config() -> PipelineConfig:
    return PipelineConfig(
        background=BackgroundModel(mode=CORNER_SAMPLE, tolerance=40.0),
        grid=PromptGridConfig(),
        backend=BackendConfig(),
    )


def load_config_file(path: str | os.PathLike) -> dict:
    path = os.fspath(path)
    try:
        if path.endswith(".toml"):
            with open(path, "rb") as fh:
                return tomllib.load(fh)
        with open(path, "r", encoding="utf-8") as fh:
            return json.load(fh)
    except FileNotFoundError:
        raise
    except (json.JSONDecodeError, UnicodeDecodeError, tomllib.TOMLDecodeError) as exc:
        raise ConfigError(f"{path}: cannot parse config: {exc}") from exc


def _merge(base: dict, override: dict) -> dict:
    out = dict(base)
    for key, value in override.items():
        if value is None:
            continue
        if isinstance(value, dict) and isinstance(out.get(key), dict):
            out[key] = _merge(out[key], value)
        else:
            out[key] = value
    return out


def pipeline_config_from_dict(doc: dict | None, overrides: dict | None = None) -> PipelineConfig:
    """Build a PipelineConfig from a config-file dict plus flag overrides."""
    merged = _merge(doc or {}, overrides or {})
    try:
        bg_doc = merged.get("background", {})
        background = BackgroundModel(
            mode=bg_doc.get("mode", CORNER_SAMPLE),
            key_color=tuple(bg_doc["key_color"]) if "key_color" in bg_doc else None,
            tolerance=float(bg_doc.get("tolerance", 40.0)),
        )
        grid_doc = merged.get("grid", {})
        grid = PromptGridConfig(
            rows=int(grid_doc.get("rows", 16)),
            cols=int(grid_doc.get("cols", 16)),
            patch_size=int(grid_doc.get("patch_size", 7)),
            dedup_threshold=float(grid_doc.get("dedup_threshold", 12.0)),
            dedup_mode=grid_doc.get("dedup_mode", "greedy"),
        )
        be_doc = merged.get("backend", {})
        backend = BackendConfig(
            variant=be_doc.get("variant", "threshold"),
            threshold_mode=be_doc.get("threshold_mode", "otsu"),
            fixed_threshold=int(be_doc.get("fixed_threshold", 128)),
            color_tol=float(be_doc.get("color_tol", 30.0)),
            connectivity=int(be_doc.get("connectivity", 4)),
            exchange_dir=str(be_doc.get("exchange_dir", "")),
            worker_cmd=tuple(be_doc.get("worker_cmd", ())),
            worker_timeout_s=float(be_doc.get("worker_timeout_s", 60.0)),
        )
        machine = None
        m_doc = merged.get("machine", {})
        if "mm_per_pixel" in m_doc:
            machine = MachineConfig(
                mm_per_pixel=float(m_doc["mm_per_pixel"]),
                safe_z=float(m_doc.get("safe_z", 5.0)),
                cut_z=float(m_doc.get("cut_z", -1.0)),
                feed_rate=float(m_doc.get("feed_rate", 300.0)),
                plunge_rate=float(m_doc.get("plunge_rate", 100.0)),
                spindle_rpm=int(m_doc.get("spindle_rpm", 10000)),
                tool_diameter=(float(m_doc["tool_diameter"])
                               if m_doc.get("tool_diameter") is not None else None),
            )
        return PipelineConfig(
            background=background,
            grid=grid,
            backend=backend,
            accept_threshold=float(merged.get("accept_threshold", 0.5)),
            machine=machine,
            optimize_travel=bool(merged.get("optimize_travel", False)),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"invalid configuration: {exc}") from exc
