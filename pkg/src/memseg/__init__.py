"""Interactive volumetric segmentation with a quality-aware memory network.

A single annotated slice is propagated through the whole volume by a
key-value memory network; a quality head scores every slice so the
worst one can be sent back to the user for the next refinement round.
"""

__version__ = "0.1.0"

from .data import (GuidanceMap, ROIBox, SegmentationState, SliceMask, Volume,
                   binarize, dsc, iou, normalize_intensity)
from .engine import EngineConfig, ModelBundle, Session, default_weights_dir
from .interaction import InteractionNetConfig, InteractionUNet
from .memory import FeatureConfig, MemoryBank, MemoryCell, MemorySegmenter
from .presets import Preset, load_preset
from .synthetic import SyntheticVolumeSpec, generate_dataset, generate_synthetic_volume

__all__ = [
    "GuidanceMap", "ROIBox", "SegmentationState", "SliceMask", "Volume",
    "binarize", "dsc", "iou", "normalize_intensity",
    "EngineConfig", "ModelBundle", "Session", "default_weights_dir",
    "InteractionNetConfig", "InteractionUNet",
    "FeatureConfig", "MemoryBank", "MemoryCell", "MemorySegmenter",
    "Preset", "load_preset",
    "SyntheticVolumeSpec", "generate_dataset", "generate_synthetic_volume",
    "__version__",
]
