"""Shared fixtures, chiefly the trained desk-preset model bundle.

Training the desk bundle takes a few CPU-minutes, so the weights are
cached under tests/_desk_cache/ together with a fingerprint of the
sources that influence training. Any change to those files retrains on
the next run; otherwise the cached weights are reused and the recorded
training time still reflects a real measured run.
"""

from __future__ import annotations

import hashlib
import json
import sys
import time
from dataclasses import dataclass
from pathlib import Path

import pytest

import memseg
from memseg.engine import ModelBundle
from memseg.presets import Preset, load_preset
from memseg.synthetic import generate_dataset
from memseg.training import (make_memory_samples, train_interaction_pipeline,
                             train_memory_net, train_quality_head)

CACHE_DIR = Path(__file__).resolve().parent / "_desk_cache"
STAMP_FILE = "train_stamp.json"
TRAIN_SOURCES = ("data.py", "memory.py", "interaction.py", "training.py",
                 "simulate.py", "synthetic.py", "engine.py", "presets/desk.json")

NUM_TRAIN_VOLUMES = 50
TRAIN_DATA_SEED = 1
SAMPLE_SEED = 2
NUM_HELD_OUT_VOLUMES = 20
HELD_OUT_SEED = 777


@dataclass(frozen=True)
class TrainedDesk:
    """The desk bundle plus provenance the acceptance suite asserts on."""

    bundle: ModelBundle
    preset: Preset
    weights_dir: Path
    train_seconds: float
    num_train_volumes: int


def _fingerprint() -> str:
    root = Path(memseg.__file__).resolve().parent
    digest = hashlib.sha256()
    for name in TRAIN_SOURCES:
        digest.update(name.encode())
        digest.update((root / name).read_bytes())
    digest.update(f"{NUM_TRAIN_VOLUMES}:{TRAIN_DATA_SEED}:{SAMPLE_SEED}".encode())
    return digest.hexdigest()


def _train_desk_bundle(preset: Preset) -> tuple[ModelBundle, float]:
    start = time.monotonic()
    volumes = generate_dataset(NUM_TRAIN_VOLUMES, preset.data, seed=TRAIN_DATA_SEED)
    samples = make_memory_samples(volumes, per_volume=preset.samples_per_volume,
                                  seed=SAMPLE_SEED)
    segmenter, _ = train_memory_net(samples, preset.memory_train,
                                    feature_cfg=preset.feature)
    interaction, _ = train_interaction_pipeline(volumes, cfg=preset.interaction,
                                                hparams=preset.interaction_train,
                                                sim_cfg=preset.simulator)
    segmenter, _ = train_quality_head(segmenter, samples, hparams=preset.quality_train)
    bundle = ModelBundle(interaction=interaction, segmenter=segmenter)
    return bundle, time.monotonic() - start


@pytest.fixture(scope="session")
def desk() -> TrainedDesk:
    preset = load_preset("desk")
    fingerprint = _fingerprint()
    stamp_path = CACHE_DIR / STAMP_FILE
    if stamp_path.exists():
        stamp = json.loads(stamp_path.read_text())
        if stamp.get("fingerprint") == fingerprint:
            return TrainedDesk(ModelBundle.load(CACHE_DIR), preset, CACHE_DIR,
                               float(stamp["train_seconds"]), NUM_TRAIN_VOLUMES)
    print(f"\n[conftest] training the desk bundle on {NUM_TRAIN_VOLUMES} volumes "
          "(a few minutes; cached for later runs)", file=sys.stderr, flush=True)
    bundle, seconds = _train_desk_bundle(preset)
    CACHE_DIR.mkdir(parents=True, exist_ok=True)
    bundle.save(CACHE_DIR)
    stamp_path.write_text(json.dumps({"fingerprint": fingerprint,
                                      "train_seconds": seconds}, indent=2) + "\n")
    print(f"[conftest] desk bundle trained in {seconds:.0f}s", file=sys.stderr,
          flush=True)
    return TrainedDesk(bundle, preset, CACHE_DIR, seconds, NUM_TRAIN_VOLUMES)


@pytest.fixture(scope="session")
def held_out(desk: TrainedDesk):
    """Evaluation volumes drawn far away from every training seed."""
    return generate_dataset(NUM_HELD_OUT_VOLUMES, desk.preset.data,
                            seed=HELD_OUT_SEED)
