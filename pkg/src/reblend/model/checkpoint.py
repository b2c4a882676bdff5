"""Versioned checkpoints carrying weights, optimizer state, and RNG state.

A checkpoint stores everything needed to resume training bit-for-bit:
model/optimizer tensors, the training position (epoch, step), the torch RNG
state, and the fingerprint of the resolved configuration that produced it.
Loading verifies the format version and (unless forced) the fingerprint, so
a checkpoint cannot silently continue under different settings.
"""

from __future__ import annotations

import os
from dataclasses import asdict
from typing import Any

import torch

from ..errors import ConfigError
from .network import BlendDetector, ModelConfig

FORMAT_VERSION = 1


def save_checkpoint(
    path: str | os.PathLike[str],
    model: BlendDetector,
    optimizer: torch.optim.Optimizer | None = None,
    *,
    epoch: int = 0,
    step: int = 0,
    config_fingerprint: str = "",
    extra: dict[str, Any] | None = None,
) -> None:
    payload: dict[str, Any] = {
        "format_version": FORMAT_VERSION,
        "model_config": asdict(model.config),
        "model_state": model.state_dict(),
        "optimizer_state": optimizer.state_dict() if optimizer is not None else None,
        "epoch": int(epoch),
        "step": int(step),
        "config_fingerprint": config_fingerprint,
        "torch_rng_state": torch.get_rng_state(),
        "extra": extra or {},
    }
    tmp = str(path) + ".tmp"
    torch.save(payload, tmp)
    os.replace(tmp, path)


def load_checkpoint(
    path: str | os.PathLike[str],
    *,
    expected_fingerprint: str | None = None,
    force: bool = False,
    map_location: str = "cpu",
) -> dict[str, Any]:
    """Load and validate a checkpoint payload (weights not yet applied)."""
    try:
        payload = torch.load(path, map_location=map_location, weights_only=False)
    except (OSError, RuntimeError, ValueError) as exc:
        raise ConfigError(f"cannot load checkpoint {path}: {exc}") from exc
    version = payload.get("format_version")
    if version != FORMAT_VERSION:
        raise ConfigError(
            f"checkpoint {path} has format version {version!r}, expected {FORMAT_VERSION}"
        )
    if expected_fingerprint is not None and not force:
        found = payload.get("config_fingerprint", "")
        if found != expected_fingerprint:
            raise ConfigError(
                f"checkpoint {path} was written under config fingerprint {found[:12]!r}, "
                f"current is {expected_fingerprint[:12]!r}; pass force to override"
            )
    return payload


def restore_model(payload: dict[str, Any]) -> BlendDetector:
    """Build a detector from a checkpoint payload and load its weights."""
    cfg_map = dict(payload["model_config"])
    for key in ("edge_hidden", "map_taper"):
        cfg_map[key] = tuple(cfg_map[key])
    model = BlendDetector(ModelConfig(**cfg_map))
    model.load_state_dict(payload["model_state"])
    return model
