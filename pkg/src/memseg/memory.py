"""Key-value memory network for slice-to-slice mask propagation.

A memory bank holds encoded (image, mask) pairs from already-segmented
slices. Segmenting a new slice reads from that bank with cosine-similarity
attention, fuses the retrieved summary with the query's own features, and
decodes a full-resolution probability mask. A small regression head rates
each prediction's quality from the same fused features so the engine can
rank slices for refinement.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .checkpoint import load_checkpoint, load_arrays_into_module, module_to_arrays, save_checkpoint
from .data import NumericError, ValidationError
from .imgops import pad_to_multiple, resize2d

COSINE_EPS = 1e-8


@dataclass(frozen=True)
class FeatureConfig:
    """Shapes of the shared feature space.

    ``channels`` is the trunk output width C; keys project to C/8 and
    values to C/2, so C must be divisible by 8. The spatial stride is
    2 ** len(widths) (default 16).
    """

    widths: tuple[int, ...] = (16, 32, 48, 64)
    num_groups: int = 4

    def __post_init__(self) -> None:
        if len(self.widths) < 1:
            raise ValidationError("widths must be non-empty")
        if self.channels % 8 != 0:
            raise ValidationError(f"trunk width {self.channels} must be divisible by 8")
        for w in self.widths:
            if w % self.num_groups != 0:
                raise ValidationError(f"width {w} not divisible by {self.num_groups} norm groups")

    @property
    def channels(self) -> int:
        return self.widths[-1]

    @property
    def stride(self) -> int:
        return 2 ** len(self.widths)

    @property
    def key_channels(self) -> int:
        return self.channels // 8

    @property
    def value_channels(self) -> int:
        return self.channels // 2

    def to_dict(self) -> dict:
        return {"widths": list(self.widths), "num_groups": self.num_groups}

    @classmethod
    def from_dict(cls, d: dict) -> "FeatureConfig":
        return cls(widths=tuple(d["widths"]), num_groups=int(d["num_groups"]))


@dataclass(frozen=True)
class QueryEmbedding:
    """Encoded query slice: key (H, W, C/8) and value (H, W, C/2)."""

    key: np.ndarray
    value: np.ndarray
    slice_index: int


@dataclass(frozen=True)
class MemoryCell:
    """One (image, mask) pair eligible for the memory bank."""

    slice_index: int
    image: np.ndarray
    mask: np.ndarray
    is_annotated: bool = False

    def __post_init__(self) -> None:
        if self.image.shape != self.mask.shape:
            raise ValidationError(
                f"memory cell image {self.image.shape} and mask {self.mask.shape} differ")


@dataclass
class MemoryBank:
    """Stacked keys (N, H, W, C/8) and values (N, H, W, C/2) plus provenance."""

    keys: np.ndarray
    values: np.ndarray
    slice_indices: list[int] = field(default_factory=list)
    cells: list[MemoryCell] | None = None

    def __post_init__(self) -> None:
        if self.keys.ndim != 4 or self.values.ndim != 4:
            raise ValidationError("memory bank arrays must be (N, H, W, C)")
        if self.keys.shape[:3] != self.values.shape[:3]:
            raise ValidationError(
                f"bank key grid {self.keys.shape[:3]} and value grid {self.values.shape[:3]} differ")
        if len(self.slice_indices) != self.keys.shape[0]:
            raise ValidationError("one slice index per memory entry required")

    def __len__(self) -> int:
        return self.keys.shape[0]


@dataclass(frozen=True)
class MemoryReadOutput:
    """Result of one attention read: the retrieved summary and the fused map."""

    summarized: np.ndarray
    fused: np.ndarray
    read_weights: np.ndarray | None = None


@dataclass(frozen=True)
class QualityScore:
    value: float
    slice_index: int

    def __post_init__(self) -> None:
        if not (0.0 <= self.value <= 1.0):
            raise ValidationError(f"quality score {self.value} outside [0, 1]")


def cosine_similarities(mem_keys: torch.Tensor, query_keys: torch.Tensor,
                        eps: float = COSINE_EPS) -> torch.Tensor:
    """Cosine similarity of every memory location against every query location.

    mem_keys (B, N, Ck, H, W) and query_keys (B, Ck, Hq, Wq) give a
    (B, N*H*W, Hq*Wq) matrix. Norms are stabilized with a small epsilon
    so zero-norm key vectors never divide by zero.
    """
    if mem_keys.ndim != 5:
        raise ValidationError("memory keys must be (B, N, C, H, W)")
    if query_keys.ndim != 4:
        raise ValidationError("query keys must be (B, C, H, W)")
    b, n, ck, h, w = mem_keys.shape
    if query_keys.shape[0] != b or query_keys.shape[1] != ck:
        raise ValidationError("query key channels must match memory key channels")
    hq, wq = query_keys.shape[2:]
    mk = mem_keys.permute(0, 1, 3, 4, 2).reshape(b, n * h * w, ck)
    qk = query_keys.permute(0, 2, 3, 1).reshape(b, hq * wq, ck)
    mk = mk / (mk.norm(dim=2, keepdim=True) + eps)
    qk = qk / (qk.norm(dim=2, keepdim=True) + eps)
    return torch.bmm(mk, qk.transpose(1, 2))


def attention_readout(
    mem_keys: torch.Tensor,
    mem_values: torch.Tensor,
    query_keys: torch.Tensor,
    eps: float = COSINE_EPS,
    return_weights: bool = False,
):
    """Cosine-similarity attention over every memory location.

    mem_keys: (B, N, Ck, H, W), mem_values: (B, N, Cv, H, W),
    query_keys: (B, Ck, Hq, Wq). Each query location attends to all
    N*H*W memory locations; the softmax normalizes over that axis and the
    weighted sum of memory values gives the (B, Cv, Hq, Wq) readout.
    """
    if mem_values.ndim != 5:
        raise ValidationError("memory values must be (B, N, C, H, W)")
    b, n, ck, h, w = mem_keys.shape
    cv = mem_values.shape[2]
    if mem_values.shape[0] != b or mem_values.shape[1] != n or mem_values.shape[3:] != (h, w):
        raise ValidationError("memory keys and values disagree on (B, N, H, W)")
    hq, wq = query_keys.shape[2:]

    sim = cosine_similarities(mem_keys, query_keys, eps)  # (B, N*H*W, Hq*Wq)
    weights = torch.softmax(sim, dim=1)
    mv = mem_values.permute(0, 1, 3, 4, 2).reshape(b, n * h * w, cv)
    readout = torch.bmm(mv.transpose(1, 2), weights).reshape(b, cv, hq, wq)
    if return_weights:
        return readout, weights
    return readout


def read_memory(bank: MemoryBank, query_key: np.ndarray, return_weights: bool = False):
    """Attention read for one query slice; arrays are channel-last numpy.

    Returns the summarized value map (H, W, C/2), plus the
    (N*H*W, H*W) weight matrix when requested.
    """
    if len(bank) == 0:
        raise ValidationError("memory bank is empty")
    if query_key.shape != bank.keys.shape[1:]:
        raise ValidationError(
            f"query key shape {query_key.shape} does not match bank entries {bank.keys.shape[1:]}")
    mk = torch.as_tensor(bank.keys).permute(0, 3, 1, 2)[None]
    mv = torch.as_tensor(bank.values).permute(0, 3, 1, 2)[None]
    qk = torch.as_tensor(query_key).permute(2, 0, 1)[None]
    with torch.no_grad():
        out = attention_readout(mk, mv, qk, return_weights=return_weights)
    if return_weights:
        readout, weights = out
        return readout[0].permute(1, 2, 0).numpy(), weights[0].numpy()
    return out[0].permute(1, 2, 0).numpy()


def fuse(summarized: np.ndarray, query_value: np.ndarray) -> np.ndarray:
    """Concatenate retrieved summary and query value along channels (summary first)."""
    if summarized.shape != query_value.shape:
        raise ValidationError(
            f"summary {summarized.shape} and query value {query_value.shape} must match")
    return np.concatenate([summarized, query_value], axis=-1)


class SliceEncoder(nn.Module):
    """Strided conv trunk (stride 2 per stage) with 1x1 key/value heads."""

    def __init__(self, in_channels: int, cfg: FeatureConfig):
        super().__init__()
        layers: list[nn.Module] = []
        prev = in_channels
        for width in cfg.widths:
            layers += [
                nn.Conv2d(prev, width, 3, stride=2, padding=1),
                nn.GroupNorm(cfg.num_groups, width),
                nn.ReLU(inplace=True),
            ]
            prev = width
        layers += [
            nn.Conv2d(prev, prev, 3, padding=1),
            nn.GroupNorm(cfg.num_groups, prev),
            nn.ReLU(inplace=True),
        ]
        self.trunk = nn.Sequential(*layers)
        self.key_head = nn.Conv2d(prev, cfg.key_channels, 1)
        self.value_head = nn.Conv2d(prev, cfg.value_channels, 1)

    def forward(self, x: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        feats = self.trunk(x)
        return self.key_head(feats), self.value_head(feats)


class ContextDecoder(nn.Module):
    """Parallel dilated branches (rates 2, 4, 8, summed) then x16 upsampling to logits."""

    def __init__(self, cfg: FeatureConfig, dilations: tuple[int, ...] = (2, 4, 8)):
        super().__init__()
        c = cfg.channels
        self.branches = nn.ModuleList(
            [nn.Conv2d(c, c, 3, padding=d, dilation=d) for d in dilations])
        self.post = nn.Sequential(nn.GroupNorm(cfg.num_groups, c), nn.ReLU(inplace=True))
        stages: list[nn.Module] = []
        ch = c
        for _ in range(int(math.log2(cfg.stride))):
            nxt = max(8, ch // 2)
            stages.append(nn.Sequential(
                nn.Upsample(scale_factor=2, mode="bilinear", align_corners=False),
                nn.Conv2d(ch, nxt, 3, padding=1),
                nn.GroupNorm(cfg.num_groups, nxt),
                nn.ReLU(inplace=True),
            ))
            ch = nxt
        self.refine = nn.Sequential(*stages)
        self.head = nn.Conv2d(ch, 1, 1)

    def forward(self, fused: torch.Tensor) -> torch.Tensor:
        x = self.branches[0](fused)
        for branch in self.branches[1:]:
            x = x + branch(fused)
        x = self.post(x)
        x = self.refine(x)
        return self.head(x)


class QualityHead(nn.Module):
    """Three 3x3 convs, pooled, then three fully connected layers to one logit."""

    def __init__(self, in_channels: int, width: int = 64, num_groups: int = 4):
        super().__init__()
        convs: list[nn.Module] = []
        prev = in_channels
        for _ in range(3):
            convs += [
                nn.Conv2d(prev, width, 3, padding=1),
                nn.GroupNorm(num_groups, width),
                nn.ReLU(inplace=True),
            ]
            prev = width
        self.convs = nn.Sequential(*convs)
        self.pool = nn.AdaptiveAvgPool2d(4)
        self.fc = nn.Sequential(
            nn.Linear(width * 16, 128), nn.ReLU(inplace=True),
            nn.Linear(128, 64), nn.ReLU(inplace=True),
            nn.Linear(64, 1),
        )

    def forward(self, fused_with_mask: torch.Tensor) -> torch.Tensor:
        x = self.convs(fused_with_mask)
        x = self.pool(x).flatten(1)
        return self.fc(x).squeeze(1)


class MemorySegmenter(nn.Module):
    """Full propagation model: encoders, attention read, decoder, quality head."""

    def __init__(self, cfg: FeatureConfig | None = None):
        super().__init__()
        self.cfg = cfg or FeatureConfig()
        self.query_encoder = SliceEncoder(1, self.cfg)
        self.memory_encoder = SliceEncoder(2, self.cfg)
        self.decoder = ContextDecoder(self.cfg)
        self.quality_head = QualityHead(self.cfg.channels + 1)

    # -- batched tensor paths (used by training) --------------------------

    def encode_query_batch(self, images: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        return self.query_encoder(images)

    def encode_memory_batch(self, images: torch.Tensor, masks: torch.Tensor):
        return self.memory_encoder(torch.cat([images, masks], dim=1))

    def decode_batch(self, fused: torch.Tensor) -> torch.Tensor:
        """Fused (B, C, H, W) to mask logits (B, 1, H*stride, W*stride)."""
        return self.decoder(fused)

    def quality_batch(self, fused: torch.Tensor, masks_small: torch.Tensor) -> torch.Tensor:
        """Quality logits (B,) from fused features plus the downsampled mask."""
        return self.quality_head(torch.cat([fused, masks_small], dim=1))

    # -- numpy-facing inference ops ---------------------------------------

    def _prep(self, slice2d: np.ndarray) -> tuple[torch.Tensor, tuple[int, int]]:
        arr = np.asarray(slice2d, dtype=np.float32)
        if arr.ndim != 2:
            raise ValidationError(f"expected a 2D slice, got shape {arr.shape}")
        if min(arr.shape) < self.cfg.stride:
            raise ValidationError(
                f"slice {arr.shape} smaller than the feature stride {self.cfg.stride}")
        t = torch.from_numpy(arr)[None, None]
        return pad_to_multiple(t, self.cfg.stride)

    @torch.no_grad()
    def encode_query(self, slice2d: np.ndarray, slice_index: int = 0) -> QueryEmbedding:
        t, _ = self._prep(slice2d)
        key, value = self.query_encoder(t)
        return QueryEmbedding(
            key=key[0].permute(1, 2, 0).numpy(),
            value=value[0].permute(1, 2, 0).numpy(),
            slice_index=slice_index,
        )

    @torch.no_grad()
    def encode_memory(self, cell: MemoryCell) -> tuple[np.ndarray, np.ndarray]:
        img, _ = self._prep(cell.image)
        msk, _ = self._prep(np.asarray(cell.mask, dtype=np.float32))
        key, value = self.memory_encoder(torch.cat([img, msk], dim=1))
        return key[0].permute(1, 2, 0).numpy(), value[0].permute(1, 2, 0).numpy()

    def build_bank(self, cells: list[MemoryCell],
                   cache: dict[int, tuple[np.ndarray, np.ndarray]] | None = None) -> MemoryBank:
        """Encode cells (reusing any cached encodings) into a stacked bank."""
        if not cells:
            raise ValidationError("cannot build a memory bank from zero cells")
        keys, values, indices = [], [], []
        for cell in cells:
            if cache is not None and cell.slice_index in cache:
                k, v = cache[cell.slice_index]
            else:
                k, v = self.encode_memory(cell)
                if cache is not None:
                    cache[cell.slice_index] = (k, v)
            keys.append(k)
            values.append(v)
            indices.append(cell.slice_index)
        return MemoryBank(keys=np.stack(keys), values=np.stack(values),
                          slice_indices=indices, cells=list(cells))

    @torch.no_grad()
    def decode_segmentation(self, fused: np.ndarray) -> np.ndarray:
        """Fused (H, W, C) to probabilities (H*stride, W*stride)."""
        t = torch.as_tensor(fused, dtype=torch.float32).permute(2, 0, 1)[None]
        probs = torch.sigmoid(self.decoder(t))[0, 0].numpy()
        if not np.isfinite(probs).all():
            raise NumericError("decoder produced non-finite probabilities")
        return probs

    @torch.no_grad()
    def assess_quality(self, fused: np.ndarray, mask_probs: np.ndarray,
                       slice_index: int = 0) -> QualityScore:
        """Score one prediction in [0, 1] from fused features and its mask."""
        h, w = fused.shape[:2]
        small = resize2d(np.asarray(mask_probs, dtype=np.float32), (h, w), mode="bilinear")
        t = torch.as_tensor(fused, dtype=torch.float32).permute(2, 0, 1)[None]
        m = torch.from_numpy(small.astype(np.float32))[None, None]
        logit = self.quality_batch(t, m)
        value = float(torch.sigmoid(logit)[0])
        if not math.isfinite(value):
            raise NumericError("quality head produced a non-finite score")
        return QualityScore(value=value, slice_index=slice_index)

    @torch.no_grad()
    def segment_query(self, bank: MemoryBank, slice2d: np.ndarray,
                      slice_index: int = 0) -> tuple[np.ndarray, MemoryReadOutput, QualityScore]:
        """Segment one slice against a bank; returns (probs (h, w), read output, quality)."""
        h, w = np.asarray(slice2d).shape
        emb = self.encode_query(slice2d, slice_index)
        summarized = read_memory(bank, emb.key)
        fused = fuse(summarized, emb.value)
        probs = self.decode_segmentation(fused)[:h, :w]
        quality = self.assess_quality(fused, probs, slice_index)
        return probs, MemoryReadOutput(summarized=summarized, fused=fused), quality


def build_memory_segmenter(cfg: FeatureConfig | None = None, seed: int = 0) -> MemorySegmenter:
    """Deterministically initialized segmenter (eval mode)."""
    torch.manual_seed(seed)
    model = MemorySegmenter(cfg)
    model.eval()
    return model


def save_memory_segmenter(model: MemorySegmenter, path) -> None:
    save_checkpoint(path, module_to_arrays(model), {"feature": model.cfg.to_dict()})


def load_memory_segmenter(path) -> MemorySegmenter:
    arrays, config = load_checkpoint(path)
    model = MemorySegmenter(FeatureConfig.from_dict(config["feature"]))
    load_arrays_into_module(model, arrays)
    model.eval()
    return model
