"""Small shared image-array helpers (resizing, padding)."""

from __future__ import annotations

import numpy as np
import torch
import torch.nn.functional as F


def resize2d(arr: np.ndarray, out_hw: tuple[int, int], mode: str = "bilinear") -> np.ndarray:
    """Resize a 2D array; bilinear for continuous data, nearest for labels."""
    arr = np.asarray(arr)
    if arr.shape == tuple(out_hw):
        return arr.copy()
    t = torch.as_tensor(arr)[None, None]
    if mode == "bilinear":
        out = F.interpolate(t.float() if t.dtype not in (torch.float32, torch.float64) else t,
                            size=tuple(out_hw), mode="bilinear", align_corners=False)
    elif mode == "nearest":
        out = F.interpolate(t.float(), size=tuple(out_hw), mode="nearest")
    else:
        raise ValueError(f"unknown resize mode {mode!r}")
    res = out[0, 0].numpy()
    if mode == "nearest":
        res = res.astype(arr.dtype)
    return res


def pad_to_multiple(t: torch.Tensor, multiple: int) -> tuple[torch.Tensor, tuple[int, int]]:
    """Replicate-pad the last two dims of (B, C, h, w) up to a multiple; returns (padded, (h, w))."""
    h, w = t.shape[-2:]
    ph = (-h) % multiple
    pw = (-w) % multiple
    if ph or pw:
        t = F.pad(t, (0, pw, 0, ph), mode="replicate")
    return t, (h, w)
