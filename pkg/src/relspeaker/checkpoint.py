"""Checkpoint persistence: a directory holding manifest.json (config echo,
step count, metric snapshot) and params.npz keyed by parameter path.
Numpy archives round-trip float32 tensors bit-exactly.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np
import torch

from .config import RunConfig, config_from_dict, config_to_dict

MANIFEST_NAME = "manifest.json"
PARAMS_NAME = "params.npz"


def state_arrays(module: torch.nn.Module) -> dict[str, np.ndarray]:
    return {key: tensor.detach().cpu().numpy()
            for key, tensor in module.state_dict().items()}


def save_checkpoint(ckpt_dir, model: torch.nn.Module, config: RunConfig,
                    step: int, metrics: dict | None = None):
    ckpt_dir = Path(ckpt_dir)
    ckpt_dir.mkdir(parents=True, exist_ok=True)
    manifest = {
        "config": config_to_dict(config),
        "step": step,
        "metrics": metrics or {},
        "parameter_keys": sorted(model.state_dict().keys()),
    }
    with open(ckpt_dir / MANIFEST_NAME, "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    np.savez(ckpt_dir / PARAMS_NAME, **state_arrays(model))


def load_checkpoint(ckpt_dir) -> tuple[RunConfig, dict[str, np.ndarray], dict]:
    """Returns (config, parameter arrays keyed by path, manifest dict)."""
    ckpt_dir = Path(ckpt_dir)
    with open(ckpt_dir / MANIFEST_NAME) as fh:
        manifest = json.load(fh)
    config = config_from_dict(manifest["config"])
    with np.load(ckpt_dir / PARAMS_NAME) as npz:
        arrays = {k: npz[k] for k in npz.files}
    return config, arrays, manifest


def restore_state(module: torch.nn.Module, arrays: dict[str, np.ndarray]):
    state = {k: torch.as_tensor(v) for k, v in arrays.items()}
    module.load_state_dict(state)
