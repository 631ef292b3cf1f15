"""Harness configuration: one JSON document bundling every module's settings.

A config is ``{"schema": "mosquito_pnp.config/1", ...}`` with sections
``layout``, ``pipeline``, ``controller``, ``motion``, ``noise`` and
``variability`` plus ``output_dir`` and ``seed``. Sections may be partial;
missing keys take the dataclass defaults. Unknown keys are rejected.
"""
from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

from .controller import ControllerConfig, NoiseProfile
from .errors import ConfigurationError, MosquitoPnPError
from .robot import MotionProfile
from .scene import SpecimenVariability, WorkcellLayout
from .vision import PipelineParams

SCHEMA = "mosquito_pnp.config/1"
PRESETS = ("default", "calibrated")
OUTPUT_ENV = "MOSQUITO_PNP_OUTPUT"
_KEYS = ("schema", "layout", "pipeline", "controller", "motion", "noise", "variability", "output_dir", "seed")


def _pipeline_from_dict(data: dict) -> PipelineParams:
    unknown = set(data) - {f.name for f in dataclasses.fields(PipelineParams)}
    if unknown:
        raise ConfigurationError(f"unknown PipelineParams keys: {sorted(unknown)}")
    return PipelineParams(**{k: tuple(v) if isinstance(v, list) else v for k, v in data.items()})


@dataclass(frozen=True)
class HarnessConfig:
    layout: WorkcellLayout = field(default_factory=WorkcellLayout)
    pipeline: PipelineParams = field(default_factory=PipelineParams)
    controller: ControllerConfig = field(default_factory=ControllerConfig)
    motion: MotionProfile = field(default_factory=MotionProfile)
    noise: NoiseProfile = field(default_factory=NoiseProfile)
    variability: SpecimenVariability = field(default_factory=SpecimenVariability)
    output_dir: str = "out"
    seed: int = 0

    def __post_init__(self):
        if not isinstance(self.seed, int) or isinstance(self.seed, bool) or self.seed < 0:
            raise ConfigurationError("seed must be a non-negative integer")
        if not isinstance(self.output_dir, str) or not self.output_dir:
            raise ConfigurationError("output_dir must be a non-empty string")
        if self.noise.foreshortening != self.controller.correct_foreshortening:
            raise ConfigurationError("noise.foreshortening and controller.correct_foreshortening must agree")
        self.controller.check_layout(self.layout)

    def to_dict(self) -> dict:
        return {
            "schema": SCHEMA,
            "layout": self.layout.to_dict(),
            "pipeline": self.pipeline.to_dict(),
            "controller": self.controller.to_dict(),
            "motion": self.motion.to_dict(),
            "noise": self.noise.to_dict(),
            "variability": self.variability.to_dict(),
            "output_dir": self.output_dir,
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "HarnessConfig":
        if not isinstance(data, dict):
            raise ConfigurationError("config must be a mapping")
        if data.get("schema") != SCHEMA:
            raise ConfigurationError(f"unsupported config schema {data.get('schema')!r}; expected {SCHEMA!r}")
        unknown = set(data) - set(_KEYS)
        if unknown:
            raise ConfigurationError(f"unknown config keys: {sorted(unknown)}")
        for key in _KEYS[1:7]:
            if key in data and not isinstance(data[key], dict):
                raise ConfigurationError(f"section {key!r} must be a mapping")
        try:
            kwargs = {
                "layout": WorkcellLayout.from_dict(data.get("layout", {})),
                "pipeline": _pipeline_from_dict(data.get("pipeline", {})),
                "controller": ControllerConfig.from_dict(data.get("controller", {})),
                "motion": MotionProfile.from_dict(data.get("motion", {})),
                "noise": NoiseProfile.from_dict(data.get("noise", {})),
                "variability": SpecimenVariability.from_dict(data.get("variability", {})),
            }
        except MosquitoPnPError as exc:
            raise ConfigurationError(str(exc)) from exc
        except TypeError as exc:
            raise ConfigurationError(f"bad config value: {exc}") from exc
        for key in ("output_dir", "seed"):
            if key in data:
                kwargs[key] = data[key]
        return cls(**kwargs)

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    def with_overrides(self, **changes) -> "HarnessConfig":
        return dataclasses.replace(self, **changes)


def loads(text: str) -> HarnessConfig:
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigurationError(f"config is not valid JSON: {exc}") from exc
    return HarnessConfig.from_dict(data)


def preset_text(name: str) -> str:
    if name not in PRESETS:
        raise ConfigurationError(f"unknown preset {name!r}; choose from {PRESETS}")
    return resources.files("mosquito_pnp").joinpath("data").joinpath(f"{name}.json").read_text()


def load_config(name_or_path: str | Path) -> HarnessConfig:
    """A preset name (``default``, ``calibrated``) or a path to a JSON config."""
    if str(name_or_path) in PRESETS:
        return loads(preset_text(str(name_or_path)))
    path = Path(name_or_path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigurationError(f"cannot read config {str(path)!r}: {exc.strerror}") from exc
    return loads(text)


def save_config(cfg: HarnessConfig, path: str | Path) -> None:
    Path(path).write_text(cfg.dumps())
