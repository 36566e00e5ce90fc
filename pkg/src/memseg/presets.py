"""Bundled configuration presets.

"desk" trains in CPU minutes on synthetic data; "paper" preserves the
full-scale hyperparameters (C=1024 features, lr 1e-5, batch 8, 120
epochs) for hardware that can afford them. Presets are plain JSON so
runs can be reproduced from a committed file.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

from .data import ValidationError
from .engine import EngineConfig
from .interaction import InteractionNetConfig, InteractionTrainConfig
from .memory import FeatureConfig
from .simulate import SimulatorConfig
from .synthetic import SyntheticVolumeSpec
from .training import TrainConfig

BUILTIN_PRESETS = ("desk", "paper")


@dataclass(frozen=True)
class Preset:
    name: str
    feature: FeatureConfig
    interaction: InteractionNetConfig
    engine: EngineConfig
    memory_train: TrainConfig
    interaction_train: InteractionTrainConfig
    quality_train: TrainConfig
    simulator: SimulatorConfig
    data: SyntheticVolumeSpec
    num_volumes: int
    samples_per_volume: int


def _preset_from_dict(d: dict) -> Preset:
    eng = d["engine"]
    sim = d["simulator"]
    dat = d["data"]
    return Preset(
        name=d["name"],
        feature=FeatureConfig.from_dict(d["feature"]),
        interaction=InteractionNetConfig.from_dict(d["interaction"]),
        engine=EngineConfig(memory_interval=int(eng["memory_interval"]),
                            max_rounds=int(eng["max_rounds"]),
                            binarize_threshold=float(eng["binarize_threshold"])),
        memory_train=TrainConfig(**d["memory_train"]),
        interaction_train=InteractionTrainConfig(**d["interaction_train"]),
        quality_train=TrainConfig(**d["quality_train"]),
        simulator=SimulatorConfig(**sim),
        data=SyntheticVolumeSpec(shape=tuple(dat["shape"]), kind=dat.get("kind", "blob"),
                                 drift_px=float(dat["drift_px"]),
                                 radius_range=tuple(dat["radius_range"]),
                                 noise_level=float(dat["noise_level"]),
                                 contrast=float(dat["contrast"]),
                                 seed=int(dat.get("seed", 0))),
        num_volumes=int(d["num_volumes"]),
        samples_per_volume=int(d["samples_per_volume"]),
    )


def load_preset(name_or_path: str) -> Preset:
    """A bundled preset by name, or any JSON file by path."""
    if name_or_path in BUILTIN_PRESETS:
        text = (resources.files("memseg") / "presets" / f"{name_or_path}.json").read_text()
    else:
        p = Path(name_or_path)
        if not p.exists():
            raise ValidationError(
                f"unknown preset {name_or_path!r}; use one of {BUILTIN_PRESETS} or a JSON path")
        text = p.read_text()
    return _preset_from_dict(json.loads(text))
