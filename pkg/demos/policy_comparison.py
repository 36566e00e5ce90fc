"""Compare slice-selection policies on a small synthetic benchmark.

Trains a tiny bundle, then runs the same multi-round evaluation three
times with different ways of picking the next slice to annotate:

  random   pick any slice that has not been annotated yet
  quality  pick the slice the quality head scores lowest
  oracle   pick the truly worst slice using ground truth (upper bound)

Prints a mean-DSC-per-round table. With the tiny settings here the gaps
are small; the desk preset (``memseg benchmark``) separates them further.

Run from the repository root:

    python3 demos/policy_comparison.py
"""

from memseg.engine import EngineConfig, ModelBundle
from memseg.evaluation import run_benchmark
from memseg.interaction import InteractionNetConfig
from memseg.memory import FeatureConfig
from memseg.simulate import SimulatorConfig
from memseg.synthetic import SyntheticVolumeSpec, generate_dataset
from memseg.training import (TrainConfig, make_memory_samples,
                             train_interaction_pipeline, train_memory_net,
                             train_quality_head)

ROUNDS = 5


def train_tiny_bundle(volumes) -> ModelBundle:
    quick = TrainConfig(learning_rate=1e-3, batch_size=4, epochs=12, seed=0)
    samples = make_memory_samples(volumes, per_volume=2, seed=2)
    segmenter, _ = train_memory_net(
        samples, quick, feature_cfg=FeatureConfig(widths=(8, 16, 24, 32)))
    interaction, _ = train_interaction_pipeline(
        volumes,
        cfg=InteractionNetConfig(roi_input_size=32, roi_margin_fraction=1.5,
                                 widths=(8, 16)),
        hparams=quick, sim_cfg=SimulatorConfig(seed=0))
    segmenter, _ = train_quality_head(
        segmenter, samples,
        hparams=TrainConfig(learning_rate=1e-3, batch_size=16, epochs=12, seed=0))
    return ModelBundle(interaction=interaction, segmenter=segmenter)


def main() -> None:
    spec = SyntheticVolumeSpec(shape=(48, 48, 10), kind="blob", drift_px=1.5,
                               radius_range=(8.0, 12.0), noise_level=0.05,
                               contrast=0.4)
    print("training a tiny bundle on 12 volumes ...")
    bundle = train_tiny_bundle(generate_dataset(12, spec, seed=1))
    held_out = generate_dataset(6, spec, seed=500)

    engine_cfg = EngineConfig(memory_interval=4, max_rounds=ROUNDS)
    results = {
        policy: run_benchmark(held_out, bundle, "extreme_points", rounds=ROUNDS,
                              policy=policy, sim_cfg=SimulatorConfig(seed=0),
                              engine_cfg=engine_cfg, master_seed=0)
        for policy in ("random", "quality", "oracle")
    }

    header = "  ".join(f"r{r + 1:<6d}" for r in range(ROUNDS))
    print(f"\nmean DSC per round ({len(held_out)} held-out volumes, extreme points)")
    print(f"{'policy':<9} {header}")
    for policy, result in results.items():
        row = "  ".join(f"{m:.4f}" for m in result.mean_per_round)
        print(f"{policy:<9} {row}")


if __name__ == "__main__":
    main()
