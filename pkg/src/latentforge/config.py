"""JSON configuration for the editing pipeline.

Every key is optional; defaults follow the reference setup (50 DDIM steps,
guidance 1 for the source branch and 7.5 for the edit branches, filter
sigma 0.3). Unknown keys are rejected.
"""
from __future__ import annotations

import dataclasses
import json
import os
from dataclasses import dataclass, field
from pathlib import Path

from .errors import ConfigError, InvalidArgument
from .refine import RefineParams

SEED_ENV = "LATENTFORGE_SEED"
EDIT_KINDS = {"rigid-object": (10, 30), "non-rigid": (30, 50)}
MASK_SOURCES = ("attention", "rect", "file")


@dataclass
class ScheduleConfig:
    T: int = 50
    kind: str = "scaled-linear"
    beta_start: float = 0.00085
    beta_end: float = 0.012
    base_steps: int = 1000


@dataclass
class DenoiserConfig:
    backend: str = "hybrid"
    seed: int = 0
    shape: tuple = (4, 64, 64)
    sigma0_sq: float = 0.05
    patch: int = 4
    dim: int = 32
    gain: float = 0.02


@dataclass
class MaskConfig:
    source: str = "attention"
    rect: tuple | None = None  # (x0, y0, x1, y1) in latent cells
    path: str | None = None  # PGM for source="file"
    threshold: float = 0.3
    word_set: str = "target"  # which set difference yields candidate words
    caption: str | None = None  # caption for the trigram scorer; defaults to p_src


@dataclass
class PipelineConfig:
    p_src: str = "a sitting dog"
    p_tar: str = "a jumping dog"
    seed: int = 0
    source_latent: str | None = None  # FLXL file; sampled from the toy world when absent
    schedule: ScheduleConfig = field(default_factory=ScheduleConfig)
    denoiser: DenoiserConfig = field(default_factory=DenoiserConfig)
    mask: MaskConfig = field(default_factory=MaskConfig)
    refine: RefineParams = field(default_factory=RefineParams)
    cfg_source: float = 1.0
    cfg_edit: float = 7.5
    edit_kind: str = "non-rigid"
    t_R_range: tuple | None = None  # overrides the edit-kind range
    t_R: int | None = None  # forces the re-inversion depth
    alpha_R: float = 0.5
    beta_R: float = 0.5
    inject: bool = True
    inject_layers: tuple = ("dec",)
    output_dir: str | None = None

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        if not self.p_src.split() or not self.p_tar.split():
            raise ConfigError("p_src and p_tar must be non-empty")
        if self.cfg_source != 1:
            raise ConfigError(f"cfg_source must be 1 (source reconstruction), got {self.cfg_source}")
        if self.cfg_edit < 1:
            raise ConfigError(f"cfg_edit must be >= 1, got {self.cfg_edit}")
        if self.edit_kind not in EDIT_KINDS:
            raise ConfigError(f"edit_kind must be one of {sorted(EDIT_KINDS)}, got {self.edit_kind!r}")
        if self.mask.source not in MASK_SOURCES:
            raise ConfigError(f"mask.source must be one of {MASK_SOURCES}, got {self.mask.source!r}")
        if self.mask.source == "rect" and (self.mask.rect is None or len(self.mask.rect) != 4):
            raise ConfigError("mask.source='rect' needs mask.rect = [x0, y0, x1, y1]")
        if self.mask.source == "file" and not self.mask.path:
            raise ConfigError("mask.source='file' needs mask.path")
        lo, hi = self.tr_range
        if not 1 <= lo < hi <= self.schedule.T:
            raise ConfigError(f"t_R range [{lo}, {hi}] must satisfy 1 <= t_R1 < t_R2 <= T={self.schedule.T}")
        if self.t_R is not None and not 1 <= self.t_R <= self.schedule.T:
            raise ConfigError(f"t_R={self.t_R} outside [1, {self.schedule.T}]")

    @property
    def tr_range(self) -> tuple[int, int]:
        if self.t_R_range is not None:
            return tuple(int(x) for x in self.t_R_range)
        return EDIT_KINDS[self.edit_kind]

    def replace(self, **changes) -> "PipelineConfig":
        return dataclasses.replace(self, **changes)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, data: dict, env: dict | None = None) -> "PipelineConfig":
        env = os.environ if env is None else env
        data = dict(data)
        nested = {"schedule": ScheduleConfig, "denoiser": DenoiserConfig, "mask": MaskConfig}
        try:
            if SEED_ENV in env:
                data["seed"] = int(env[SEED_ENV])
            kwargs = {}
            for key, value in data.items():
                if key in nested:
                    kwargs[key] = _build(nested[key], value, key)
                elif key == "refine":
                    continue
                elif key in _fields(cls):
                    kwargs[key] = _tupled(value)
                else:
                    raise ConfigError(f"unknown config key {key!r}")
            refine = dict(data.get("refine") or {})
            refine.setdefault("seed", int(data.get("seed", 0)))
            kwargs["refine"] = _build(RefineParams, refine, "refine")
            return cls(**kwargs)
        except ConfigError:
            raise
        except (TypeError, ValueError, InvalidArgument) as exc:
            raise ConfigError(str(exc)) from exc


def _fields(cls) -> set[str]:
    return {f.name for f in dataclasses.fields(cls)}


def _tupled(value):
    return tuple(value) if isinstance(value, list) else value


def _build(cls, value, section: str):
    if not isinstance(value, dict):
        raise ConfigError(f"section {section!r} must be an object")
    unknown = set(value) - _fields(cls)
    if unknown:
        raise ConfigError(f"unknown keys in {section!r}: {sorted(unknown)}")
    return cls(**{k: _tupled(v) for k, v in value.items()})


def load_config(path) -> PipelineConfig:
    try:
        data = json.loads(Path(path).read_text())
    except FileNotFoundError as exc:
        raise ConfigError(f"config file not found: {path}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from exc
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: top level must be an object")
    return PipelineConfig.from_dict(data)


_NULLABLE = {"rect": "array", "t_R_range": "array", "t_R": "integer", "alpha": "number"}
_JSON_TYPES = {bool: "boolean", int: "integer", float: "number", str: "string", tuple: "array"}


def _field_schema(f) -> dict:
    default = f.default if f.default is not dataclasses.MISSING else f.default_factory()
    if dataclasses.is_dataclass(default):
        return _object_schema(type(default))
    if default is None:
        return {"type": [_NULLABLE.get(f.name, "string"), "null"], "default": None}
    return {"type": _JSON_TYPES[type(default)], "default": list(default) if isinstance(default, tuple) else default}


def _object_schema(cls) -> dict:
    return {
        "type": "object",
        "additionalProperties": False,
        "properties": {f.name: _field_schema(f) for f in dataclasses.fields(cls)},
    }


def config_schema() -> dict:
    """JSON Schema (draft 2020-12) describing every accepted key and its default."""
    schema = _object_schema(PipelineConfig)
    schema["$schema"] = "https://json-schema.org/draft/2020-12/schema"
    schema["title"] = "latentforge pipeline config"
    props = schema["properties"]
    props["edit_kind"]["enum"] = sorted(EDIT_KINDS)
    props["mask"]["properties"]["source"]["enum"] = list(MASK_SOURCES)
    props["mask"]["properties"]["word_set"]["enum"] = ["target", "source"]
    props["cfg_source"]["const"] = 1.0
    props["cfg_edit"]["minimum"] = 1.0
    return schema
