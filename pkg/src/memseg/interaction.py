"""Interactive-slice segmentation from user guidance.

Guidance (scribble, box fill, or extreme-point stamps) defines a region of
interest; the slice, the previous mask and the guidance map are cropped to
it, resized to a fixed square, pushed through a small U-shaped network and
pasted back, so everything outside the ROI stays exactly zero.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .checkpoint import load_checkpoint, load_arrays_into_module, module_to_arrays, save_checkpoint
from .data import (
    GuidanceMap,
    NumericError,
    ROIBox,
    SliceMask,
    TrainingError,
    ValidationError,
)
from .imgops import resize2d

MIN_ROI_SIDE = 16


@dataclass(frozen=True)
class InteractionInput:
    """One interactive-slice problem: image, previous mask, guidance map."""

    image: np.ndarray
    prev_mask: np.ndarray
    guidance: np.ndarray

    def __post_init__(self) -> None:
        if not (self.image.shape == self.prev_mask.shape == self.guidance.shape):
            raise ValidationError(
                f"image {self.image.shape}, prev_mask {self.prev_mask.shape} and "
                f"guidance {self.guidance.shape} must share one shape")
        if self.image.ndim != 2:
            raise ValidationError("interaction input arrays must be 2D")
        for name, arr in (("image", self.image), ("prev_mask", self.prev_mask)):
            if arr.min() < 0.0 or arr.max() > 1.0:
                raise ValidationError(f"{name} values must lie in [0, 1]")
        uniq = np.unique(self.guidance)
        if not np.isin(uniq, (0, 1)).all():
            raise ValidationError("guidance must be binary")

    def stacked(self) -> np.ndarray:
        """The three channels as one (h, w, 3) tensor."""
        return np.stack([self.image, self.prev_mask,
                         self.guidance.astype(self.image.dtype)], axis=-1)


@dataclass(frozen=True)
class InteractionNetConfig:
    roi_input_size: int = 96
    roi_margin_fraction: float = 0.10
    widths: tuple[int, ...] = (16, 32, 64)
    num_groups: int = 4

    def __post_init__(self) -> None:
        if self.roi_input_size < 32 or self.roi_input_size % 16 != 0:
            raise ValidationError("roi_input_size must be >= 32 and divisible by 16")
        if self.roi_margin_fraction <= 0:
            raise ValidationError("roi_margin_fraction must be positive")
        if len(self.widths) < 2:
            raise ValidationError("the encoder-decoder needs at least two levels")

    def to_dict(self) -> dict:
        return {"roi_input_size": self.roi_input_size,
                "roi_margin_fraction": self.roi_margin_fraction,
                "widths": list(self.widths),
                "num_groups": self.num_groups}

    @classmethod
    def from_dict(cls, d: dict) -> "InteractionNetConfig":
        return cls(roi_input_size=int(d["roi_input_size"]),
                   roi_margin_fraction=float(d["roi_margin_fraction"]),
                   widths=tuple(d["widths"]),
                   num_groups=int(d["num_groups"]))


def _expand_to_min_side(lo: int, hi: int, min_side: int, bound: int) -> tuple[int, int]:
    side = hi - lo
    if side >= min_side:
        return lo, hi
    need = min_side - side
    lo -= need // 2
    hi += need - need // 2
    if lo < 0:
        hi += -lo
        lo = 0
    if hi > bound:
        lo -= hi - bound
        hi = bound
    return max(lo, 0), hi


def compute_roi(guidance: GuidanceMap | np.ndarray, image_shape: tuple[int, int],
                margin: float = 0.10, min_side: int = MIN_ROI_SIDE) -> ROIBox:
    """Tight box around guidance pixels, each side grown by ``margin`` of its length.

    Degenerate guidance (e.g. a single click) is expanded to ``min_side`` so
    the crop never collapses.
    """
    arr = guidance.pixels if isinstance(guidance, GuidanceMap) else np.asarray(guidance)
    rows, cols = np.nonzero(arr)
    if rows.size == 0:
        raise ValidationError("guidance map has no foreground pixels")
    h, w = image_shape
    r_lo, r_hi = int(rows.min()), int(rows.max()) + 1
    c_lo, c_hi = int(cols.min()), int(cols.max()) + 1
    r_ext = math.ceil(margin * (r_hi - r_lo))
    c_ext = math.ceil(margin * (c_hi - c_lo))
    r_lo, r_hi = max(0, r_lo - r_ext), min(h, r_hi + r_ext)
    c_lo, c_hi = max(0, c_lo - c_ext), min(w, c_hi + c_ext)
    r_lo, r_hi = _expand_to_min_side(r_lo, r_hi, min(min_side, h), h)
    c_lo, c_hi = _expand_to_min_side(c_lo, c_hi, min(min_side, w), w)
    return ROIBox(row_min=r_lo, row_max=r_hi, col_min=c_lo, col_max=c_hi)


class _ConvBlock(nn.Sequential):
    def __init__(self, cin: int, cout: int, groups: int):
        super().__init__(
            nn.Conv2d(cin, cout, 3, padding=1),
            nn.GroupNorm(groups, cout),
            nn.ReLU(inplace=True),
            nn.Conv2d(cout, cout, 3, padding=1),
            nn.GroupNorm(groups, cout),
            nn.ReLU(inplace=True),
        )


class InteractionUNet(nn.Module):
    """Small U-shaped encoder-decoder: 3 channels in, 1 logit map out."""

    def __init__(self, cfg: InteractionNetConfig | None = None):
        super().__init__()
        self.cfg = cfg or InteractionNetConfig()
        widths = self.cfg.widths
        g = self.cfg.num_groups
        self.down = nn.ModuleList()
        prev = 3
        for wd in widths:
            self.down.append(_ConvBlock(prev, wd, g))
            prev = wd
        self.pool = nn.MaxPool2d(2)
        self.up = nn.ModuleList()
        for wd in reversed(widths[:-1]):
            self.up.append(_ConvBlock(prev + wd, wd, g))
            prev = wd
        self.head = nn.Conv2d(prev, 1, 1)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        skips = []
        for i, block in enumerate(self.down):
            if i > 0:
                x = self.pool(x)
            x = block(x)
            skips.append(x)
        for block, skip in zip(self.up, reversed(skips[:-1])):
            x = F.interpolate(x, size=skip.shape[-2:], mode="bilinear", align_corners=False)
            x = block(torch.cat([x, skip], dim=1))
        return self.head(x)


def _roi_tensor(x: InteractionInput, roi: ROIBox, size: int) -> torch.Tensor:
    """Crop the three channels to the ROI and resize to (size, size)."""
    img = resize2d(roi.crop(x.image).astype(np.float32), (size, size), "bilinear")
    prev = resize2d(roi.crop(x.prev_mask).astype(np.float32), (size, size), "bilinear")
    guide = resize2d(roi.crop(x.guidance).astype(np.float32), (size, size), "nearest")
    return torch.from_numpy(np.stack([img, prev, guide])[None].astype(np.float32))


@torch.no_grad()
def segment_interactive_slice(x: InteractionInput, cfg: InteractionNetConfig,
                              model: InteractionUNet, slice_index: int = 0,
                              round_index: int = 0) -> SliceMask:
    """Segment the annotated slice inside its guidance ROI.

    The prediction is resized back to the ROI and pasted into a zero
    canvas, so probability mass outside the ROI is exactly 0.
    """
    roi = compute_roi(x.guidance, x.image.shape, cfg.roi_margin_fraction)
    inp = _roi_tensor(x, roi, cfg.roi_input_size)
    model.eval()
    probs_small = torch.sigmoid(model(inp))[0, 0].numpy()
    if not np.isfinite(probs_small).all():
        raise NumericError("interaction network produced non-finite output")
    probs_roi = resize2d(probs_small, (roi.height, roi.width), "bilinear")
    full = np.zeros(x.image.shape, dtype=np.float32)
    full[roi.row_min:roi.row_max, roi.col_min:roi.col_max] = np.clip(probs_roi, 0.0, 1.0)
    return SliceMask(probabilities=full, slice_index=slice_index, round=round_index)


@dataclass(frozen=True)
class InteractionTrainConfig:
    learning_rate: float = 1e-4
    batch_size: int = 4
    epochs: int = 30
    seed: int = 0


def train_interaction_net(dataset, cfg: InteractionNetConfig | None = None,
                          hparams: InteractionTrainConfig | None = None,
                          model: InteractionUNet | None = None):
    """Fit the guidance network on (InteractionInput, binary gt mask) pairs.

    The loss is the mean per-pixel binary cross-entropy inside each
    sample's ROI. Returns (model, per-epoch mean losses).
    """
    cfg = cfg or InteractionNetConfig()
    hparams = hparams or InteractionTrainConfig()
    if not dataset:
        raise ValidationError("training dataset is empty")

    torch.manual_seed(hparams.seed)
    if model is None:
        model = InteractionUNet(cfg)
    size = cfg.roi_input_size

    inputs, targets = [], []
    for x, gt in dataset:
        gt = np.asarray(gt)
        if gt.shape != x.image.shape:
            raise ValidationError("ground-truth mask shape differs from the input")
        roi = compute_roi(x.guidance, x.image.shape, cfg.roi_margin_fraction)
        inputs.append(_roi_tensor(x, roi, size)[0])
        gt_roi = resize2d(roi.crop(gt).astype(np.float32), (size, size), "nearest")
        targets.append(torch.from_numpy(gt_roi.astype(np.float32))[None])
    inputs = torch.stack(inputs)
    targets = torch.stack(targets)

    opt = torch.optim.Adam(model.parameters(), lr=hparams.learning_rate)
    rng = np.random.default_rng(hparams.seed)
    n = inputs.shape[0]
    losses: list[float] = []
    model.train()
    for epoch in range(hparams.epochs):
        order = rng.permutation(n)
        epoch_loss = 0.0
        for start in range(0, n, hparams.batch_size):
            idx = torch.from_numpy(order[start:start + hparams.batch_size].copy())
            logits = model(inputs[idx])
            loss = F.binary_cross_entropy_with_logits(logits, targets[idx])
            if not torch.isfinite(loss):
                raise TrainingError(f"loss diverged at epoch {epoch + 1}")
            opt.zero_grad()
            loss.backward()
            opt.step()
            epoch_loss += float(loss.detach()) * idx.numel()
        losses.append(epoch_loss / n)
    model.eval()
    return model, losses


def save_interaction_net(model: InteractionUNet, path) -> None:
    save_checkpoint(path, module_to_arrays(model), {"interaction": model.cfg.to_dict()})


def load_interaction_net(path) -> InteractionUNet:
    arrays, config = load_checkpoint(path)
    model = InteractionUNet(InteractionNetConfig.from_dict(config["interaction"]))
    load_arrays_into_module(model, arrays)
    model.eval()
    return model
