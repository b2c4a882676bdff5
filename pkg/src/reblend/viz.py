"""Qualitative panels: input face, edge overlay, map overlay, class score.

A panel lays out three tiles of equal size separated by margins, with a
caption strip underneath showing the manipulated-class probability.  The
overlays resample the half-resolution predictions up to the input size and
blend a heat colormap over the face.
"""

from __future__ import annotations

import os
from pathlib import Path
from typing import Sequence

import cv2
import numpy as np

from .errors import DataError

__all__ = ["colorize", "overlay", "render_panel", "visualize_predictions"]

MARGIN = 4
CAPTION_H = 16


def colorize(heat: np.ndarray) -> np.ndarray:
    """Map a [0, 1] heat array to an RGB uint8 image (jet colormap)."""
    arr = np.asarray(heat, dtype=np.float32)
    if arr.ndim != 2:
        raise ValueError(f"heat map must be 2-D, got shape {arr.shape}")
    u8 = np.round(np.clip(arr, 0.0, 1.0) * 255).astype(np.uint8)
    bgr = cv2.applyColorMap(u8, cv2.COLORMAP_JET)
    return cv2.cvtColor(bgr, cv2.COLOR_BGR2RGB)


def overlay(image: np.ndarray, heat: np.ndarray, strength: float = 0.55) -> np.ndarray:
    """Blend a heat map over an RGB [0, 1] image; returns uint8 RGB."""
    img = np.asarray(image, dtype=np.float32)
    if img.ndim != 3 or img.shape[2] != 3:
        raise ValueError(f"image must be H x W x 3, got shape {img.shape}")
    h, w = img.shape[:2]
    heat_arr = np.asarray(heat, dtype=np.float32)
    if heat_arr.shape != (h, w):
        heat_arr = cv2.resize(heat_arr, (w, h), interpolation=cv2.INTER_LINEAR)
    colored = colorize(heat_arr).astype(np.float32) / 255.0
    alpha = strength * np.clip(heat_arr, 0.0, 1.0)[:, :, None]
    mixed = img * (1.0 - alpha) + colored * alpha
    return np.round(np.clip(mixed, 0.0, 1.0) * 255).astype(np.uint8)


def render_panel(
    image: np.ndarray,
    edge_pred: np.ndarray,
    map_pred: np.ndarray,
    prob: float,
    label: int | None = None,
) -> np.ndarray:
    """Compose [input | edge overlay | map overlay] plus a caption strip.

    The panel is uint8 RGB with width 3 * W + 4 * MARGIN and height
    H + 2 * MARGIN + CAPTION_H.
    """
    img = np.asarray(image, dtype=np.float32)
    if img.ndim != 3 or img.shape[2] != 3:
        raise ValueError(f"image must be H x W x 3, got shape {img.shape}")
    h, w = img.shape[:2]
    tiles = [
        np.round(np.clip(img, 0, 1) * 255).astype(np.uint8),
        overlay(img, np.squeeze(edge_pred)),
        overlay(img, np.squeeze(map_pred)),
    ]
    panel_w = 3 * w + 4 * MARGIN
    panel_h = h + 2 * MARGIN + CAPTION_H
    panel = np.full((panel_h, panel_w, 3), 255, dtype=np.uint8)
    for i, tile in enumerate(tiles):
        x = MARGIN + i * (w + MARGIN)
        panel[MARGIN : MARGIN + h, x : x + w] = tile
    caption = f"score={prob:.3f}"
    if label is not None:
        caption += f"  label={'fake' if label else 'genuine'}"
    cv2.putText(
        panel, caption, (MARGIN, panel_h - 4), cv2.FONT_HERSHEY_SIMPLEX,
        0.35, (10, 10, 10), 1, cv2.LINE_AA,
    )
    return panel


def visualize_predictions(
    model,
    images: Sequence[np.ndarray] | np.ndarray,
    out_dir: str | os.PathLike[str],
    *,
    names: Sequence[str] | None = None,
    labels: Sequence[int] | None = None,
    batch_size: int = 8,
) -> list[str]:
    """Run the detector and write one panel PNG per input image."""
    import torch

    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
        probe = out / ".write_probe"
        probe.touch()
        probe.unlink()
    except OSError as exc:
        raise DataError(f"cannot write visualizations to {out}: {exc}") from exc
    stack = np.stack([np.asarray(im, dtype=np.float32) for im in images])
    model.eval()
    paths: list[str] = []
    with torch.no_grad():
        for start in range(0, len(stack), batch_size):
            chunk = stack[start : start + batch_size]
            output = model(torch.from_numpy(chunk.transpose(0, 3, 1, 2).copy()))
            for j in range(len(chunk)):
                idx = start + j
                name = names[idx] if names is not None else f"sample{idx:04d}"
                panel = render_panel(
                    chunk[j],
                    output.edge[j, 0].numpy(),
                    output.map[j, 0].numpy(),
                    float(output.prob[j]),
                    None if labels is None else int(labels[idx]),
                )
                path = out / f"{name}_panel.png"
                if not cv2.imwrite(str(path), cv2.cvtColor(panel, cv2.COLOR_RGB2BGR)):
                    raise DataError(f"cannot write panel {path}")
                paths.append(str(path))
    return paths
