"""Portable weight checkpoints: named float arrays plus a JSON config.

A checkpoint is a single ``.npz`` archive whose entries are the parameter
arrays (names mirror the module's state dict) plus one reserved entry,
``__config__``, holding a JSON string that describes how to rebuild the
network. The format has no framework-specific pickling and can be read by
any npz-capable tool.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np
import torch

CONFIG_KEY = "__config__"


def save_checkpoint(path: "str | Path", arrays: dict, config: dict) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    if CONFIG_KEY in arrays:
        raise ValueError(f"array name {CONFIG_KEY!r} is reserved")
    payload = {k: np.asarray(v) for k, v in arrays.items()}
    payload[CONFIG_KEY] = np.array(json.dumps(config, sort_keys=True))
    np.savez(path, **payload)
    return path


def load_checkpoint(path: "str | Path") -> tuple[dict, dict]:
    """Returns (arrays, config)."""
    path = Path(path)
    with np.load(path, allow_pickle=False) as npz:
        if CONFIG_KEY not in npz:
            raise ValueError(f"{path} is not a memseg checkpoint (missing {CONFIG_KEY})")
        config = json.loads(str(npz[CONFIG_KEY]))
        arrays = {k: npz[k] for k in npz.files if k != CONFIG_KEY}
    return arrays, config


def module_to_arrays(module: torch.nn.Module) -> dict:
    return {name: tensor.detach().cpu().numpy() for name, tensor in module.state_dict().items()}


def load_arrays_into_module(module: torch.nn.Module, arrays: dict) -> None:
    state = {name: torch.as_tensor(np.asarray(arr)) for name, arr in arrays.items()}
    module.load_state_dict(state)
