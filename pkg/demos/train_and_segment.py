"""End-to-end walkthrough: train a small model bundle, then segment a
held-out volume interactively.

Everything stays tiny (48x48x6 volumes, two epochs per network) so the
whole script runs in well under a minute on a laptop CPU. Swap in
``load_preset("desk")`` and more volumes for a configuration with real
accuracy; the flow is identical.

Run from the repository root:

    python3 demos/train_and_segment.py
"""

import numpy as np

from memseg.data import dsc
from memseg.engine import EngineConfig, ModelBundle, Session
from memseg.evaluation import pick_round_one_slice
from memseg.interaction import InteractionNetConfig
from memseg.memory import FeatureConfig
from memseg.simulate import SimulatorConfig, simulate_guidance
from memseg.synthetic import SyntheticVolumeSpec, generate_dataset
from memseg.training import (TrainConfig, make_memory_samples,
                             train_interaction_pipeline, train_memory_net,
                             train_quality_head)


def main() -> None:
    # A small corpus of drifting-blob volumes with paired ground truth.
    spec = SyntheticVolumeSpec(shape=(48, 48, 10), kind="blob", drift_px=1.5,
                               radius_range=(8.0, 12.0), noise_level=0.05,
                               contrast=0.4)
    volumes = generate_dataset(12, spec, seed=1)
    held_out = generate_dataset(1, spec, seed=99)

    # Train the three networks: propagation backbone, guidance-conditioned
    # interaction net, and the per-slice quality head (in that order; the
    # quality head regresses against the frozen backbone's mistakes).
    quick = TrainConfig(learning_rate=1e-3, batch_size=4, epochs=12, seed=0)
    samples = make_memory_samples(volumes, per_volume=2, seed=2)
    segmenter, losses = train_memory_net(
        samples, quick, feature_cfg=FeatureConfig(widths=(8, 16, 24, 32)))
    print(f"memory net:      final loss {losses[-1]:.4f}")

    interaction, losses = train_interaction_pipeline(
        volumes,
        cfg=InteractionNetConfig(roi_input_size=32, roi_margin_fraction=1.5,
                                 widths=(8, 16)),
        hparams=quick, sim_cfg=SimulatorConfig(seed=0))
    print(f"interaction net: final loss {losses[-1]:.4f}")

    segmenter, losses = train_quality_head(
        segmenter, samples,
        hparams=TrainConfig(learning_rate=1e-3, batch_size=16, epochs=12, seed=0))
    print(f"quality head:    final loss {losses[-1]:.4f}")

    bundle = ModelBundle(interaction=interaction, segmenter=segmenter)

    # Interactive loop on a volume the model has never seen. Round one:
    # the "user" draws a box on the slice with the largest object; the
    # engine segments that slice and propagates outward. Later rounds
    # annotate whichever slice the quality head trusts least.
    volume, gt = held_out[0]
    session = Session(volume, bundle, EngineConfig(memory_interval=4))
    sim = SimulatorConfig(seed=0)

    k = pick_round_one_slice(gt)
    for round_index in range(4):
        guidance = simulate_guidance("bounding_box", gt[:, :, k].astype(bool),
                                     sim.with_seed(round_index), slice_index=k)
        if round_index == 0:
            session.initialize(guidance)
            session.propagate(k)
        else:
            session.refine_round(guidance)
        score = dsc(session.mask_volume(), gt)
        worst = session.suggest_next_slice()
        scores = np.array(session.state.quality_scores)
        print(f"round {round_index + 1}: volume DSC {score:.3f}, "
              f"mean predicted quality {scores.mean():.3f}, next slice {worst}")
        if worst is None:
            break
        k = worst


if __name__ == "__main__":
    main()
