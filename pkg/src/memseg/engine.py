"""Round-based interactive segmentation of one volume.

A session owns one volume and its evolving state. Each round: the user
annotates one slice, the guidance network segments it, and the memory
network propagates that segmentation bidirectionally across the volume.
Quality scores from propagation drive the suggestion of the next slice
to annotate.
"""

from __future__ import annotations

import os
from dataclasses import dataclass
from pathlib import Path

from .data import (
    BINARIZE_THRESHOLD,
    GuidanceMap,
    NumericError,
    SegmentationState,
    SliceMask,
    ValidationError,
    Volume,
    normalize_intensity,
)
from .interaction import (
    InteractionInput,
    InteractionUNet,
    load_interaction_net,
    save_interaction_net,
    segment_interactive_slice,
)
from .memory import (
    MemoryCell,
    MemorySegmenter,
    fuse,
    load_memory_segmenter,
    read_memory,
    save_memory_segmenter,
)

INTERACTION_WEIGHTS_FILE = "interaction.npz"
MEMORY_WEIGHTS_FILE = "memory.npz"


@dataclass(frozen=True)
class EngineConfig:
    """Volume-propagation knobs; ``memory_interval`` is the snapshot spacing N."""

    memory_interval: int = 5
    max_rounds: int = 16
    binarize_threshold: float = BINARIZE_THRESHOLD

    def __post_init__(self) -> None:
        if self.memory_interval < 1:
            raise ValidationError("memory_interval must be >= 1")
        if self.max_rounds < 1:
            raise ValidationError("max_rounds must be >= 1")
        if not (0.0 < self.binarize_threshold < 1.0):
            raise ValidationError("binarize threshold must lie strictly inside (0, 1)")


@dataclass
class ModelBundle:
    """The two trained networks a session needs."""

    interaction: InteractionUNet
    segmenter: MemorySegmenter

    def save(self, directory) -> None:
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        save_interaction_net(self.interaction, directory / INTERACTION_WEIGHTS_FILE)
        save_memory_segmenter(self.segmenter, directory / MEMORY_WEIGHTS_FILE)

    @classmethod
    def load(cls, directory) -> "ModelBundle":
        directory = Path(directory)
        inter = directory / INTERACTION_WEIGHTS_FILE
        mem = directory / MEMORY_WEIGHTS_FILE
        for p in (inter, mem):
            if not p.exists():
                raise FileNotFoundError(f"missing weights file: {p}")
        return cls(interaction=load_interaction_net(inter),
                   segmenter=load_memory_segmenter(mem))


def default_weights_dir() -> Path:
    """Weights location: $MEMSEG_WEIGHTS_DIR or ./weights."""
    return Path(os.environ.get("MEMSEG_WEIGHTS_DIR", "weights"))


def memory_slice_indices(annotated: set[int], interactive_index: int, query_index: int,
                         interval: int) -> list[int]:
    """Slice indices feeding the memory bank for one query.

    In order: the interactive slice and every other annotated slice,
    snapshots every ``interval`` slices strictly between the interactive
    and query slices (walking toward the query), then the slice adjacent
    to the query on the interactive side. Duplicates keep their first
    position.
    """
    i, k = interactive_index, query_index
    if k == i:
        raise ValidationError("the interactive slice cannot be its own query")
    step = 1 if k > i else -1
    indices = [i] + sorted(a for a in annotated if a != i)
    m = 1
    while True:
        s = i + step * interval * m
        if (k - s) * step <= 0:
            break
        indices.append(s)
        m += 1
    indices.append(k - step)
    out: list[int] = []
    for idx in indices:
        if idx not in out:
            out.append(idx)
    return out


class Session:
    """One volume, one logical thread of interactive segmentation."""

    def __init__(self, volume: Volume, models: ModelBundle,
                 config: EngineConfig | None = None):
        if volume.voxels.min() < 0.0 or volume.voxels.max() > 1.0:
            volume = normalize_intensity(volume)
        self.volume = volume
        self.models = models
        self.config = config or EngineConfig()
        self.state = SegmentationState.initial(volume)
        self._query_cache: dict = {}

    def slice_image(self, k: int):
        return self.volume.slice_image(k)

    # -- building blocks ---------------------------------------------------

    def initialize(self, guidance: GuidanceMap) -> SegmentationState:
        """Segment the annotated slice from guidance; pins it for this round on."""
        k = guidance.slice_index
        if not (0 <= k < self.volume.num_slices):
            raise ValidationError(
                f"guidance targets slice {k} outside [0, {self.volume.num_slices})")
        prev = self.state.masks[k].probabilities
        x = InteractionInput(image=self.slice_image(k), prev_mask=prev,
                             guidance=guidance.pixels)
        mask = segment_interactive_slice(x, self.models.interaction.cfg,
                                         self.models.interaction, slice_index=k,
                                         round_index=self.state.round)
        self.state.masks[k] = mask
        self.state.annotated_slices.add(k)
        self.state.quality_scores[k] = 1.0
        return self.state

    def _segment_slice(self, bank, k: int):
        emb = self._query_cache.get(k)
        if emb is None:
            emb = self.models.segmenter.encode_query(self.slice_image(k), k)
            self._query_cache[k] = emb
        summarized = read_memory(bank, emb.key)
        fused = fuse(summarized, emb.value)
        h, w = self.volume.shape[:2]
        probs = self.models.segmenter.decode_segmentation(fused)[:h, :w]
        quality = self.models.segmenter.assess_quality(fused, probs, k)
        return probs, quality.value

    def propagate(self, interactive_index: int) -> SegmentationState:
        """Bidirectional whole-volume propagation from the annotated slice.

        The forward and backward passes build their banks independently;
        only pinned annotated slices are shared between them.
        """
        i = interactive_index
        state = self.state
        if i not in state.annotated_slices:
            raise ValidationError(f"slice {i} has not been annotated this session")
        c = self.volume.num_slices
        encode_cache: dict = {}
        for pass_range in (range(i + 1, c), range(i - 1, -1, -1)):
            for k in pass_range:
                if k in state.annotated_slices:
                    state.masks[k] = state.masks[k].with_round(state.round)
                    state.quality_scores[k] = 1.0
                    continue
                indices = memory_slice_indices(state.annotated_slices, i, k,
                                               self.config.memory_interval)
                cells = [
                    MemoryCell(slice_index=idx, image=self.slice_image(idx),
                               mask=state.masks[idx].probabilities,
                               is_annotated=idx in state.annotated_slices)
                    for idx in indices
                ]
                bank = self.models.segmenter.build_bank(cells, encode_cache)
                try:
                    probs, quality = self._segment_slice(bank, k)
                except NumericError as exc:
                    raise NumericError(f"propagation failed at slice {k}: {exc}") from exc
                state.masks[k] = SliceMask(probs, k, state.round)
                state.quality_scores[k] = quality
        state.masks[i] = state.masks[i].with_round(state.round)
        state.quality_scores[i] = 1.0
        return state

    # -- round-level API ----------------------------------------------------

    def suggest_next_slice(self) -> int | None:
        """Lowest-quality non-annotated slice; None when every slice is annotated."""
        candidates = [(q, k) for k, q in enumerate(self.state.quality_scores)
                      if k not in self.state.annotated_slices]
        if not candidates:
            return None
        return min(candidates)[1]

    def refine_round(self, guidance: GuidanceMap) -> SegmentationState:
        """One full interaction round: annotate, then re-propagate the volume."""
        if self.state.round >= self.config.max_rounds:
            raise ValidationError(
                f"round limit reached ({self.config.max_rounds})")
        self.state.round += 1
        self.initialize(guidance)
        return self.propagate(guidance.slice_index)

    def mask_volume(self):
        return self.state.mask_volume(self.config.binarize_threshold)
