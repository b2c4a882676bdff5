"""Sample shards: lossless on-disk form of synthesized training samples.

Layout under an output directory:

    samples/<sample_id>_image.png   8-bit RGB raster
    samples/<sample_id>_mask.png    16-bit grayscale target (value / 65535)
    samples/<sample_id>_edge.png    16-bit grayscale target
    samples/<sample_id>.json        metadata record (label, parameters, seed)
    summary.json                    corpus-level counts and histograms

PNG rasters and sorted-key JSON carry no timestamps, so two runs with the
same seed produce byte-identical shards.
"""

from __future__ import annotations

import hashlib
import json
import os
from pathlib import Path
from typing import Iterable

import cv2
import numpy as np

from ..errors import DataError
from .pipeline import BlendedSample

__all__ = ["sample_id", "write_shards", "load_sample", "shard_digest"]

_SCALE = 65535.0


def sample_id(sample: BlendedSample) -> str:
    kind = sample.meta.get("kind", "sample")
    return f"{sample.meta.get('video_id', 'v')}_{int(sample.meta.get('frame_idx', 0)):06d}_{kind}"


def _encode_meta(sample: BlendedSample) -> str:
    record = {"label": sample.label, **sample.meta}
    return json.dumps(record, sort_keys=True, indent=1) + "\n"


def write_shards(samples: Iterable[BlendedSample], out_dir: str | os.PathLike[str]) -> list[str]:
    """Write samples to ``out_dir``; returns the sample ids in written order."""
    out = Path(out_dir)
    (out / "samples").mkdir(parents=True, exist_ok=True)
    ids: list[str] = []
    labels = {0: 0, 1: 0}
    variants: dict[str, int] = {}
    for sample in samples:
        sample.validate()
        sid = sample_id(sample)
        if sid in ids:
            raise DataError(f"duplicate sample id {sid!r}; ids must be unique per shard set")
        base = out / "samples" / sid
        image_u8 = np.round(np.clip(sample.image, 0, 1) * 255.0).astype(np.uint8)
        if not cv2.imwrite(str(base) + "_image.png", cv2.cvtColor(image_u8, cv2.COLOR_RGB2BGR)):
            raise DataError(f"cannot write shard raster {base}_image.png")
        for tag, arr in (("mask", sample.mask_target), ("edge", sample.edge_target)):
            u16 = np.round(np.clip(arr, 0, 1) * _SCALE).astype(np.uint16)
            if not cv2.imwrite(f"{base}_{tag}.png", u16):
                raise DataError(f"cannot write shard raster {base}_{tag}.png")
        with open(f"{base}.json", "w", encoding="utf-8") as fh:
            fh.write(_encode_meta(sample))
        ids.append(sid)
        labels[sample.label] += 1
        variant = sample.meta.get("hull_variant")
        if variant:
            variants[variant] = variants.get(variant, 0) + 1
    summary = {
        "count": len(ids),
        "genuine": labels[0],
        "blended": labels[1],
        "hull_variants": dict(sorted(variants.items())),
        "sample_ids": ids,
    }
    with open(out / "summary.json", "w", encoding="utf-8") as fh:
        json.dump(summary, fh, sort_keys=True, indent=1)
        fh.write("\n")
    return ids


def load_sample(out_dir: str | os.PathLike[str], sid: str) -> BlendedSample:
    base = Path(out_dir) / "samples" / sid
    image_bgr = cv2.imread(str(base) + "_image.png", cv2.IMREAD_COLOR)
    if image_bgr is None:
        raise DataError(f"missing shard raster {base}_image.png")
    image = cv2.cvtColor(image_bgr, cv2.COLOR_BGR2RGB).astype(np.float32) / 255.0
    targets = {}
    for tag in ("mask", "edge"):
        raw = cv2.imread(f"{base}_{tag}.png", cv2.IMREAD_UNCHANGED)
        if raw is None:
            raise DataError(f"missing shard raster {base}_{tag}.png")
        targets[tag] = raw.astype(np.float32) / _SCALE
    try:
        with open(f"{base}.json", "r", encoding="utf-8") as fh:
            record = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise DataError(f"missing or invalid shard metadata {base}.json: {exc}") from exc
    label = int(record.pop("label"))
    return BlendedSample(
        image=image, mask_target=targets["mask"], edge_target=targets["edge"],
        label=label, meta=record,
    )


def shard_digest(out_dir: str | os.PathLike[str]) -> str:
    """SHA-256 over every shard file's path and bytes (order-independent)."""
    out = Path(out_dir)
    digest = hashlib.sha256()
    for path in sorted(out.rglob("*")):
        if path.is_file():
            digest.update(str(path.relative_to(out)).encode("utf-8"))
            digest.update(path.read_bytes())
    return digest.hexdigest()
