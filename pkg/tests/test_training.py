"""Training pipelines: sequence sampling, loss protocol, reproducibility."""

import numpy as np
import pytest
import torch

from memseg.data import TrainingError, ValidationError, binarize, iou
from memseg.memory import FeatureConfig, MemorySegmenter, build_memory_segmenter
from memseg.presets import load_preset
from memseg.synthetic import SyntheticVolumeSpec, generate_dataset
from memseg.training import (
    MemTrainSample,
    TrainConfig,
    build_quality_dataset,
    corrupt_mask,
    make_memory_samples,
    sequential_propagation_loss,
    train_interaction_pipeline,
    train_memory_net,
    train_quality_head,
    write_loss_csv,
)

SMALL_CFG = FeatureConfig(widths=(8, 16, 24, 32))
SMALL_SPEC = SyntheticVolumeSpec(shape=(48, 48, 8), kind="blob",
                                 radius_range=(8.0, 12.0))


@pytest.fixture(scope="module")
def small_volumes():
    return generate_dataset(10, SMALL_SPEC, seed=3)


@pytest.fixture(scope="module")
def small_samples(small_volumes):
    return make_memory_samples(small_volumes, per_volume=1, seed=4)


class TestSampling:
    def test_indices_strictly_increasing(self, small_samples):
        for s in small_samples:
            assert all(b > a for a, b in zip(s.slice_indices, s.slice_indices[1:]))
            assert s.images.shape == (5, 48, 48)
            assert s.masks.shape == (5, 48, 48)

    def test_per_volume_count(self, small_volumes):
        samples = make_memory_samples(small_volumes, per_volume=3, seed=0)
        assert len(samples) == 3 * len(small_volumes)

    def test_short_volume_rejected(self):
        vols = generate_dataset(1, SyntheticVolumeSpec(shape=(48, 48, 4), kind="disk",
                                                       radius_range=(8.0, 12.0)), seed=0)
        with pytest.raises(ValidationError, match="slices"):
            make_memory_samples(vols, per_volume=1)

    def test_unordered_indices_rejected(self):
        imgs = np.zeros((5, 16, 16), dtype=np.float32)
        with pytest.raises(ValidationError, match="increasing"):
            MemTrainSample(images=imgs, masks=imgs.copy(),
                           slice_indices=(0, 2, 1, 3, 4))


class TestSequentialProtocol:
    def test_memory_grows_one_cell_per_step(self, small_samples):
        model = build_memory_segmenter(SMALL_CFG, seed=0)
        images = torch.from_numpy(small_samples[0].images)[None, :, None].float()
        masks = torch.from_numpy(small_samples[0].masks)[None, :, None].float()
        loss, memory_sizes = sequential_propagation_loss(model, images, masks)
        assert memory_sizes == [1, 2, 3, 4]
        assert torch.isfinite(loss)

    def test_loss_decreases_over_five_epochs(self, small_samples):
        cfg = TrainConfig(learning_rate=1e-3, batch_size=4, epochs=5, seed=0)
        _, losses = train_memory_net(small_samples, cfg, feature_cfg=SMALL_CFG)
        assert len(losses) == 5
        assert losses[-1] < losses[0]

    def test_empty_dataset_rejected(self):
        with pytest.raises(ValidationError):
            train_memory_net([], TrainConfig(epochs=1))

    def test_indivisible_slice_size_rejected(self):
        imgs = np.zeros((5, 24, 24), dtype=np.float32)
        sample = MemTrainSample(images=imgs, masks=imgs.copy(),
                                slice_indices=(0, 1, 2, 3, 4))
        with pytest.raises(ValidationError, match="stride"):
            train_memory_net([sample], TrainConfig(epochs=1), feature_cfg=SMALL_CFG)

    def test_nan_weights_raise_training_error(self, small_samples):
        model = build_memory_segmenter(SMALL_CFG, seed=0)
        with torch.no_grad():
            next(model.query_encoder.parameters()).fill_(float("nan"))
        with pytest.raises(TrainingError, match="epoch 1"):
            train_memory_net(small_samples[:2], TrainConfig(epochs=1), model=model)

    def test_paper_hyperparams_construct(self):
        cfg = TrainConfig(learning_rate=1e-5, batch_size=8, epochs=120)
        assert (cfg.learning_rate, cfg.batch_size, cfg.epochs) == (1e-5, 8, 120)
        preset = load_preset("paper")
        assert preset.memory_train.learning_rate == 1e-5
        assert preset.memory_train.batch_size == 8
        assert preset.memory_train.epochs == 120

    def test_float64_reproducible_to_six_decimals(self, small_samples):
        cfg = TrainConfig(learning_rate=1e-3, batch_size=2, epochs=3, seed=5,
                          float64=True)
        _, a = train_memory_net(small_samples[:4], cfg, feature_cfg=SMALL_CFG)
        _, b = train_memory_net(small_samples[:4], cfg, feature_cfg=SMALL_CFG)
        assert [round(x, 6) for x in a] == [round(x, 6) for x in b]


class TestCorruption:
    def test_binary_output_same_shape(self):
        rng = np.random.default_rng(0)
        mask = np.zeros((32, 32), dtype=np.float32)
        mask[8:20, 8:20] = 1
        for _ in range(20):
            out = corrupt_mask(mask, rng)
            assert out.shape == mask.shape
            assert set(np.unique(out)) <= {0.0, 1.0}

    def test_deterministic_for_fixed_rng(self):
        mask = np.zeros((16, 16), dtype=np.float32)
        mask[4:10, 4:10] = 1
        a = corrupt_mask(mask, np.random.default_rng(42))
        b = corrupt_mask(mask, np.random.default_rng(42))
        np.testing.assert_array_equal(a, b)


@pytest.fixture(scope="module")
def trained_pair(small_samples):
    model = build_memory_segmenter(SMALL_CFG, seed=1)
    dataset = build_quality_dataset(model, small_samples[:4], seed=2)
    return model, dataset


class TestQualityHead:
    def test_targets_are_valid_ious(self, trained_pair):
        _, (fused, masks, targets) = trained_pair
        t = targets.numpy()
        assert fused.shape[0] == masks.shape[0] == t.shape[0]
        assert (t >= 0).all() and (t <= 1).all()
        # the gt candidate itself pins a 1.0; corruptions broaden coverage
        assert (t == 1.0).any()
        assert t.min() < 0.5

    def test_identity_candidate_has_iou_one(self):
        gt = np.zeros((8, 8), dtype=np.uint8)
        gt[2:5, 2:5] = 1
        assert iou(binarize(gt.astype(np.float32)), gt) == 1.0

    def test_head_training_decreases_loss(self, small_samples):
        model = build_memory_segmenter(SMALL_CFG, seed=1)
        cfg = TrainConfig(learning_rate=1e-3, batch_size=16, epochs=5, seed=0)
        model, losses = train_quality_head(model, small_samples[:4], hparams=cfg)
        assert len(losses) == 5
        assert losses[-1] < losses[0]

    def test_scores_bounded_after_training(self, small_samples):
        model = build_memory_segmenter(SMALL_CFG, seed=1)
        cfg = TrainConfig(learning_rate=1e-3, batch_size=16, epochs=2, seed=0)
        model, _ = train_quality_head(model, small_samples[:2], hparams=cfg)
        fused, masks, _ = build_quality_dataset(model, small_samples[:1], seed=7)
        with torch.no_grad():
            scores = torch.sigmoid(model.quality_batch(fused, masks))
        assert (scores >= 0).all() and (scores <= 1).all()


class TestInteractionPipeline:
    def test_runs_and_reports_losses(self, small_volumes):
        from memseg.interaction import InteractionNetConfig, InteractionTrainConfig
        cfg = InteractionNetConfig(roi_input_size=32, widths=(8, 16))
        hp = InteractionTrainConfig(learning_rate=1e-3, batch_size=4, epochs=2, seed=0)
        model, losses = train_interaction_pipeline(small_volumes[:3], cfg=cfg,
                                                   hparams=hp, per_volume=2)
        assert len(losses) == 2
        assert all(np.isfinite(losses))


class TestLossCSV:
    def test_format_and_round_trip(self, tmp_path):
        path = tmp_path / "loss.csv"
        write_loss_csv(path, [0.5, 0.25, 0.125])
        lines = path.read_text().strip().splitlines()
        assert lines[0] == "epoch,loss"
        assert lines[1] == "1,0.500000"
        assert lines[3] == "3,0.125000"
