"""Training pipelines for the guidance network, the propagation model
and its quality head, on synthetic volumes.

The propagation model trains on 5-slice sequences: the first slice enters
the memory with its ground-truth mask, the remaining four are segmented in
order, and after each step the just-segmented slice joins the memory with
its predicted mask, mirroring how inference walks a volume.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np
import torch
import torch.nn.functional as F
from scipy import ndimage

from .data import INTERACTION_TYPES, TrainingError, ValidationError, binarize, iou
from .interaction import (
    InteractionInput,
    InteractionNetConfig,
    InteractionTrainConfig,
    train_interaction_net,
)
from .memory import FeatureConfig, MemorySegmenter, attention_readout
from .simulate import SimulatorConfig, simulate_guidance

SAMPLE_SLICES = 5


@dataclass(frozen=True)
class TrainConfig:
    """Optimizer settings; the desk defaults trade accuracy for CPU minutes."""

    learning_rate: float = 1e-4
    batch_size: int = 4
    epochs: int = 30
    seed: int = 0
    float64: bool = False

    def __post_init__(self) -> None:
        if self.learning_rate <= 0 or self.batch_size < 1 or self.epochs < 1:
            raise ValidationError("learning rate, batch size and epochs must be positive")


@dataclass(frozen=True)
class MemTrainSample:
    """Five temporally ordered slices with ground truth from one volume."""

    images: np.ndarray
    masks: np.ndarray
    slice_indices: tuple[int, ...]

    def __post_init__(self) -> None:
        if self.images.shape[0] != SAMPLE_SLICES or self.masks.shape != self.images.shape:
            raise ValidationError(
                f"expected {SAMPLE_SLICES} paired slices, got images {self.images.shape} "
                f"and masks {self.masks.shape}")
        if len(self.slice_indices) != SAMPLE_SLICES:
            raise ValidationError("one slice index per slice required")
        if any(b <= a for a, b in zip(self.slice_indices, self.slice_indices[1:])):
            raise ValidationError(
                f"slice indices must be strictly increasing, got {self.slice_indices}")


def make_memory_samples(volumes, per_volume: int = 2, seed: int = 0) -> list[MemTrainSample]:
    """Draw ordered 5-slice training sequences from (Volume, gt) pairs."""
    rng = np.random.default_rng(seed)
    samples = []
    for volume, gt in volumes:
        c = volume.num_slices
        if c < SAMPLE_SLICES:
            raise ValidationError(f"volume has {c} slices, need >= {SAMPLE_SLICES}")
        for _ in range(per_volume):
            ks = np.sort(rng.choice(c, size=SAMPLE_SLICES, replace=False))
            samples.append(MemTrainSample(
                images=np.stack([volume.slice_image(k) for k in ks]).astype(np.float32),
                masks=np.stack([gt[:, :, k] for k in ks]).astype(np.float32),
                slice_indices=tuple(int(k) for k in ks),
            ))
    return samples


def sequential_propagation_loss(model: MemorySegmenter, images: torch.Tensor,
                                gts: torch.Tensor):
    """Loss of one batched 5-slice sequence, plus the memory size at each step.

    images/gts: (B, 5, 1, h, w). Slice 0 joins the memory with its ground
    truth; each later slice is segmented and then appended with its
    (detached) prediction before the next step.
    """
    mem_k, mem_v = [], []
    k0, v0 = model.encode_memory_batch(images[:, 0], gts[:, 0])
    mem_k.append(k0)
    mem_v.append(v0)
    prev_img = images[:, 0]
    prev_mask = gts[:, 0]
    step_losses = []
    memory_sizes = []
    for j in range(1, SAMPLE_SLICES):
        if j > 1:
            k, v = model.encode_memory_batch(prev_img, prev_mask)
            mem_k.append(k)
            mem_v.append(v)
        memory_sizes.append(len(mem_k))
        qk, qv = model.encode_query_batch(images[:, j])
        readout = attention_readout(torch.stack(mem_k, dim=1), torch.stack(mem_v, dim=1), qk)
        logits = model.decode_batch(torch.cat([readout, qv], dim=1))
        step_losses.append(F.binary_cross_entropy_with_logits(logits, gts[:, j]))
        prev_img = images[:, j]
        prev_mask = torch.sigmoid(logits).detach()
    return torch.stack(step_losses).mean(), memory_sizes


def _sample_tensors(samples: list[MemTrainSample], dtype: torch.dtype):
    images = torch.stack([torch.from_numpy(s.images) for s in samples])[:, :, None]
    masks = torch.stack([torch.from_numpy(s.masks) for s in samples])[:, :, None]
    return images.to(dtype), masks.to(dtype)


def train_memory_net(samples: list[MemTrainSample], hparams: TrainConfig | None = None,
                     model: MemorySegmenter | None = None,
                     feature_cfg: FeatureConfig | None = None):
    """Fit the propagation model on ordered-slice sequences.

    Returns (model, per-epoch mean losses). The quality head is left
    untouched; train it afterwards with train_quality_head.
    """
    hparams = hparams or TrainConfig()
    if not samples:
        raise ValidationError("no training samples provided")
    torch.manual_seed(hparams.seed)
    if model is None:
        model = MemorySegmenter(feature_cfg or FeatureConfig())
    dtype = torch.float64 if hparams.float64 else torch.float32
    if hparams.float64:
        model.double()
    h, w = samples[0].images.shape[1:]
    stride = model.cfg.stride
    if h % stride or w % stride:
        raise ValidationError(
            f"training slices must be multiples of the stride {stride}, got {h}x{w}")

    images, masks = _sample_tensors(samples, dtype)
    params = [p for name, p in model.named_parameters() if not name.startswith("quality_head")]
    opt = torch.optim.Adam(params, lr=hparams.learning_rate)
    order_rng = np.random.default_rng(hparams.seed)
    n = images.shape[0]
    losses: list[float] = []
    model.train()
    for epoch in range(hparams.epochs):
        order = order_rng.permutation(n)
        total = 0.0
        for start in range(0, n, hparams.batch_size):
            idx = torch.from_numpy(order[start:start + hparams.batch_size].copy())
            loss, _ = sequential_propagation_loss(model, images[idx], masks[idx])
            if not torch.isfinite(loss):
                raise TrainingError(f"loss diverged at epoch {epoch + 1}")
            opt.zero_grad()
            loss.backward()
            opt.step()
            total += float(loss.detach()) * idx.numel()
        losses.append(total / n)
    model.eval()
    return model, losses


def corrupt_mask(mask: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """A degraded variant of a binary mask for quality-target coverage."""
    op = rng.integers(0, 4)
    out = mask.astype(bool)
    if op == 0:
        out = ndimage.binary_erosion(out, iterations=int(rng.integers(1, 4)))
    elif op == 1:
        out = ndimage.binary_dilation(out, iterations=int(rng.integers(1, 4)))
    elif op == 2:
        dy, dx = rng.integers(-8, 9, size=2)
        out = np.roll(out, (dy, dx), axis=(0, 1))
        if dy > 0:
            out[:dy] = False
        elif dy < 0:
            out[dy:] = False
        if dx > 0:
            out[:, :dx] = False
        elif dx < 0:
            out[:, dx:] = False
    else:
        out = np.zeros_like(out)
    return out.astype(np.float32)


@torch.no_grad()
def build_quality_dataset(model: MemorySegmenter, samples: list[MemTrainSample],
                          seed: int = 0, variants_per_query: int = 3):
    """(fused features, candidate mask, true IoU) triples for head training.

    Each query's own prediction, its ground truth, and several corrupted
    masks all become examples, so targets cover the whole [0, 1] range.
    """
    rng = np.random.default_rng(seed)
    fused_list, mask_list, target_list = [], [], []
    model.eval()
    for s_idx, sample in enumerate(samples):
        images = torch.from_numpy(sample.images)[:, None].float()
        masks = torch.from_numpy(sample.masks)[:, None].float()
        mk, mv = model.encode_memory_batch(images[:1], masks[:1])
        for j in range(1, SAMPLE_SLICES):
            qk, qv = model.encode_query_batch(images[j:j + 1])
            readout = attention_readout(mk[:, None], mv[:, None], qk)
            fused = torch.cat([readout, qv], dim=1)[0]
            logits = model.decode_batch(fused[None])
            pred = torch.sigmoid(logits)[0, 0].numpy()
            gt = sample.masks[j]
            candidates = [pred, gt.astype(np.float32)]
            for _ in range(variants_per_query):
                base = pred if rng.random() < 0.5 else gt
                candidates.append(corrupt_mask(binarize(base), rng))
            for cand in candidates:
                fused_list.append(fused)
                small = F.interpolate(torch.from_numpy(cand.astype(np.float32))[None, None],
                                      size=fused.shape[-2:], mode="bilinear",
                                      align_corners=False)[0]
                mask_list.append(small)
                target_list.append(iou(binarize(cand), gt))
    return (torch.stack(fused_list), torch.stack(mask_list),
            torch.tensor(target_list, dtype=torch.float32))


def train_quality_head(model: MemorySegmenter, samples: list[MemTrainSample],
                       hparams: TrainConfig | None = None):
    """Regress predicted quality onto true IoU with the backbone frozen."""
    hparams = hparams or TrainConfig(learning_rate=1e-3, batch_size=16, epochs=20)
    if not samples:
        raise ValidationError("no training samples provided")
    fused, masks, targets = build_quality_dataset(model, samples, seed=hparams.seed)
    if hparams.float64:
        model.double()
        fused, masks, targets = fused.double(), masks.double(), targets.double()
    torch.manual_seed(hparams.seed)
    opt = torch.optim.Adam(model.quality_head.parameters(), lr=hparams.learning_rate)
    rng = np.random.default_rng(hparams.seed)
    n = fused.shape[0]
    losses: list[float] = []
    model.quality_head.train()
    for epoch in range(hparams.epochs):
        order = rng.permutation(n)
        total = 0.0
        for start in range(0, n, hparams.batch_size):
            idx = torch.from_numpy(order[start:start + hparams.batch_size].copy())
            scores = torch.sigmoid(model.quality_batch(fused[idx], masks[idx]))
            loss = F.mse_loss(scores, targets[idx])
            if not torch.isfinite(loss):
                raise TrainingError(f"loss diverged at epoch {epoch + 1}")
            opt.zero_grad()
            loss.backward()
            opt.step()
            total += float(loss.detach()) * idx.numel()
        losses.append(total / n)
    model.eval()
    return model, losses


def build_interaction_dataset(volumes, sim_cfg: SimulatorConfig, per_volume: int = 3,
                              seed: int = 0):
    """(InteractionInput, gt) pairs mixing all guidance types.

    Half the samples use the neutral 0.5 previous mask (first round), the
    other half a corrupted ground truth standing in for an earlier round's
    estimate.
    """
    rng = np.random.default_rng(seed)
    pairs = []
    counter = 0
    for volume, gt in volumes:
        c = volume.num_slices
        for _ in range(per_volume):
            k = int(rng.integers(0, c))
            gt_slice = gt[:, :, k]
            if not gt_slice.any():
                continue
            itype = INTERACTION_TYPES[counter % len(INTERACTION_TYPES)]
            counter += 1
            guidance = simulate_guidance(itype, gt_slice,
                                         sim_cfg.with_seed(int(rng.integers(0, 2 ** 31))),
                                         slice_index=k)
            if rng.random() < 0.5:
                prev = np.full(gt_slice.shape, 0.5, dtype=np.float32)
            else:
                prev = corrupt_mask(gt_slice, rng) * 0.9 + 0.05
            pairs.append((InteractionInput(image=volume.slice_image(k),
                                           prev_mask=prev,
                                           guidance=guidance.pixels),
                          gt_slice.astype(np.uint8)))
    return pairs


def train_interaction_pipeline(volumes, cfg: InteractionNetConfig | None = None,
                               hparams: InteractionTrainConfig | None = None,
                               sim_cfg: SimulatorConfig | None = None,
                               per_volume: int = 3):
    """Simulate guidance over a volume set and fit the interaction net."""
    cfg = cfg or InteractionNetConfig()
    hparams = hparams or InteractionTrainConfig()
    if sim_cfg is None:
        h = volumes[0][0].shape[0] if volumes else 96
        sim_cfg = SimulatorConfig.scaled_for(h)
    dataset = build_interaction_dataset(volumes, sim_cfg, per_volume, seed=hparams.seed)
    return train_interaction_net(dataset, cfg, hparams)


def write_loss_csv(path, losses: list[float]) -> None:
    """Fixed-format loss curve: epoch index and loss to 6 decimals."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["epoch", "loss"])
        for i, loss in enumerate(losses, start=1):
            writer.writerow([i, f"{loss:.6f}"])
