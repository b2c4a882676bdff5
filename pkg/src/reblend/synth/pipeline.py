"""End-to-end synthesis of blended training samples from genuine faces.

``generate_rbi`` runs the whole recipe on one genuine face:

  1. re-render the face through a reconstruction adapter, optionally
     perturbing the background latent with Gaussian noise;
  2. assign blending roles (reconstruction = source, original = target by
     default) and land the statistical transform stack on exactly one side;
  3. rasterize a convex-hull mask from the 81 landmarks (random variant);
  4. with probability 1/2, deform mask and source together;
  5. soften the mask with a random Gaussian and composite with a random
     blend magnitude;
  6. derive the boundary map 4 * M * (1 - M) and downsample both supervision
     targets to half resolution.

Genuine faces become samples with all-zero targets via ``genuine_sample``.
Every random magnitude is recorded in ``BlendedSample.meta`` so any sample
can be regenerated from its metadata and seed.
"""

from __future__ import annotations

import io
from dataclasses import dataclass, field

import cv2
import numpy as np
from PIL import Image

from ..data import FaceRecord, LANDMARK_COUNT
from ..errors import DataError
from .adapters import ReconstructorAdapter, reconstruct
from .ops import (
    DeformConfig,
    SstaConfig,
    assign_source_target,
    blend,
    blur_mask,
    build_hull_mask,
    deform_mask_and_source,
    edge_from_mask,
)

__all__ = [
    "SynthConfig",
    "AugmentConfig",
    "BlendedSample",
    "generate_rbi",
    "genuine_sample",
    "train_time_augment",
]


@dataclass(frozen=True)
class SynthConfig:
    """Every probability, range, and variant list of the synthesis recipe."""

    bg_noise_prob: float = 0.5
    bg_noise_sigma: tuple[float, float] = (0.1, 0.3)
    ssta: SstaConfig = field(default_factory=SstaConfig)
    ssta_source_prob: float = 0.5
    source_role: str = "reconstructed"
    hull_variants: tuple[str, ...] = ("full", "lower", "components", "dilated")
    hull_dilate_px: tuple[int, int] = (2, 12)
    deform: DeformConfig = field(default_factory=DeformConfig)
    mask_blur_sigma: tuple[float, float] = (1.0, 4.0)
    alpha_range: tuple[float, float] = (0.5, 1.0)

    def __post_init__(self) -> None:
        lo, hi = self.alpha_range
        if not (0.0 <= lo <= hi <= 1.0):
            raise ValueError(f"alpha_range must satisfy 0 <= lo <= hi <= 1, got {self.alpha_range}")
        if not (0.0 <= self.bg_noise_prob <= 1.0):
            raise ValueError(f"bg_noise_prob must be a probability, got {self.bg_noise_prob}")

    @classmethod
    def from_mapping(cls, m: dict) -> "SynthConfig":
        return cls(
            bg_noise_prob=float(m["bg_noise"]["prob"]),
            bg_noise_sigma=tuple(float(v) for v in m["bg_noise"]["sigma_range"]),  # type: ignore[arg-type]
            ssta=SstaConfig.from_mapping(m["ssta"]),
            ssta_source_prob=float(m["ssta"]["source_prob"]),
            source_role=str(m["source_role"]),
            hull_variants=tuple(m["hull"]["variants"]),
            hull_dilate_px=tuple(int(v) for v in m["hull"]["dilate_px"]),  # type: ignore[arg-type]
            deform=DeformConfig.from_mapping(m["deform"]),
            mask_blur_sigma=tuple(float(v) for v in m["mask_blur_sigma"]),  # type: ignore[arg-type]
            alpha_range=tuple(float(v) for v in m["alpha_range"]),  # type: ignore[arg-type]
        )


@dataclass(frozen=True)
class AugmentConfig:
    """Train-time robustness augmentation switches."""

    jpeg_prob: float = 0.5
    jpeg_quality: tuple[int, int] = (30, 100)
    brightness_contrast_prob: float = 0.5
    brightness: float = 0.1
    contrast: float = 0.2
    color_jitter_prob: float = 0.5
    hue_shift: float = 0.03
    sat_scale: float = 0.1

    @classmethod
    def from_mapping(cls, m: dict) -> "AugmentConfig":
        return cls(
            jpeg_prob=float(m["jpeg_prob"]),
            jpeg_quality=tuple(int(v) for v in m["jpeg_quality"]),  # type: ignore[arg-type]
            brightness_contrast_prob=float(m["brightness_contrast_prob"]),
            brightness=float(m["brightness"]),
            contrast=float(m["contrast"]),
            color_jitter_prob=float(m["color_jitter_prob"]),
            hue_shift=float(m["hue_shift"]),
            sat_scale=float(m["sat_scale"]),
        )

    @classmethod
    def none(cls) -> "AugmentConfig":
        return cls(jpeg_prob=0.0, brightness_contrast_prob=0.0, color_jitter_prob=0.0)


@dataclass
class BlendedSample:
    """One training sample: image plus half-resolution supervision targets."""

    image: np.ndarray
    mask_target: np.ndarray
    edge_target: np.ndarray
    label: int
    meta: dict = field(default_factory=dict)

    def validate(self) -> None:
        h, w = self.image.shape[:2]
        if self.mask_target.shape != (h // 2, w // 2):
            raise ValueError(
                f"mask_target shape {self.mask_target.shape} != expected {(h // 2, w // 2)}"
            )
        if self.edge_target.shape != self.mask_target.shape:
            raise ValueError("edge_target and mask_target shapes differ")
        if self.label not in (0, 1):
            raise ValueError(f"label must be 0 or 1, got {self.label}")


def _downsample_target(arr: np.ndarray) -> np.ndarray:
    h, w = arr.shape
    out = cv2.resize(arr, (w // 2, h // 2), interpolation=cv2.INTER_AREA)
    return np.clip(out, 0.0, 1.0).astype(np.float32)


def _require_face(face: FaceRecord) -> None:
    if face.landmarks is None or np.asarray(face.landmarks).shape != (LANDMARK_COUNT, 2):
        raise DataError(
            f"face {face.video_id}/{face.frame_idx} has no usable landmarks; "
            "landmarkless faces cannot be blended"
        )
    h, w = face.image.shape[:2]
    if h % 2 or w % 2:
        raise DataError(f"face crop must have even sides for half-resolution targets, got {h}x{w}")


def generate_rbi(
    face: FaceRecord,
    adapter: ReconstructorAdapter,
    rng: np.random.Generator,
    cfg: SynthConfig = SynthConfig(),
) -> BlendedSample:
    """Synthesize one blended (label 1) sample from a genuine face."""
    if face.label != "genuine":
        raise DataError(
            f"blended samples are synthesized from genuine faces only, got label {face.label!r}"
        )
    _require_face(face)
    image = np.asarray(face.image, dtype=np.float32)
    h, w = image.shape[:2]

    recon, recon_log = reconstruct(
        image, adapter, rng, noise_prob=cfg.bg_noise_prob, sigma_range=cfg.bg_noise_sigma
    )
    source, target, role_log = assign_source_target(
        image, recon, rng, cfg.ssta, source_prob=cfg.ssta_source_prob, source_role=cfg.source_role
    )
    hull = build_hull_mask(
        face.landmarks, (h, w), rng, variants=cfg.hull_variants, dilate_px=cfg.hull_dilate_px
    )
    mask_hard, source, deform_log = deform_mask_and_source(hull.mask, source, rng, cfg.deform)
    sigma = float(rng.uniform(*cfg.mask_blur_sigma))
    mask = blur_mask(mask_hard, sigma) if sigma > 0 else mask_hard
    alpha = float(rng.uniform(*cfg.alpha_range))
    blended = blend(source, target, mask, alpha)
    edge = edge_from_mask(mask)

    sample = BlendedSample(
        image=blended.astype(np.float32),
        mask_target=_downsample_target(mask),
        edge_target=_downsample_target(edge),
        label=1,
        meta={
            "video_id": face.video_id,
            "frame_idx": face.frame_idx,
            "kind": "blended",
            "alpha": alpha,
            "mask_blur_sigma": sigma,
            "hull_variant": hull.variant,
            "hull_params": hull.params,
            "deform": deform_log,
            "roles": role_log,
            "reconstruct": recon_log,
        },
    )
    sample.validate()
    return sample


def genuine_sample(face: FaceRecord) -> BlendedSample:
    """Wrap a genuine face as a label-0 sample with all-zero targets."""
    image = np.asarray(face.image, dtype=np.float32)
    h, w = image.shape[:2]
    if h % 2 or w % 2:
        raise DataError(f"face crop must have even sides for half-resolution targets, got {h}x{w}")
    zeros = np.zeros((h // 2, w // 2), dtype=np.float32)
    sample = BlendedSample(
        image=image.copy(),
        mask_target=zeros,
        edge_target=zeros.copy(),
        label=0,
        meta={"video_id": face.video_id, "frame_idx": face.frame_idx, "kind": "genuine"},
    )
    sample.validate()
    return sample


def jpeg_roundtrip(image: np.ndarray, quality: int) -> np.ndarray:
    """Encode and decode as JPEG (RGB-coded, full-resolution chroma).

    At quality 100 the round trip differs from the input by at most 2/255
    per channel; lower qualities introduce the familiar 8x8 block artifacts.
    """
    if not (1 <= quality <= 100):
        raise ValueError(f"JPEG quality must lie in [1, 100], got {quality}")
    arr = np.clip(np.asarray(image, dtype=np.float32), 0.0, 1.0)
    u8 = np.round(arr * 255.0).astype(np.uint8)
    buf = io.BytesIO()
    Image.fromarray(u8, mode="RGB").save(
        buf, format="JPEG", quality=int(quality), subsampling=0, keep_rgb=True
    )
    buf.seek(0)
    out = np.asarray(Image.open(buf).convert("RGB"), dtype=np.float32) / 255.0
    return out


def train_time_augment(
    image: np.ndarray, rng: np.random.Generator, cfg: AugmentConfig = AugmentConfig()
) -> tuple[np.ndarray, dict]:
    """Robustness augmentation applied to finished samples during training.

    Each component fires independently: JPEG recompression at a random
    quality, brightness/contrast jitter, and hue/saturation jitter.  The
    geometry is untouched, so supervision targets stay valid.
    """
    from .ops import adjust_brightness_contrast, jitter_hsv

    img = np.asarray(image, dtype=np.float32)
    log: dict = {}
    if rng.random() < cfg.jpeg_prob:
        quality = int(rng.integers(cfg.jpeg_quality[0], cfg.jpeg_quality[1] + 1))
        img = jpeg_roundtrip(img, quality)
        log["jpeg_quality"] = quality
    if rng.random() < cfg.brightness_contrast_prob:
        b = float(rng.uniform(-cfg.brightness, cfg.brightness))
        c = float(rng.uniform(-cfg.contrast, cfg.contrast))
        img = adjust_brightness_contrast(img, b, c)
        log["brightness_contrast"] = (b, c)
    if rng.random() < cfg.color_jitter_prob:
        hue = float(rng.uniform(-cfg.hue_shift, cfg.hue_shift))
        sat = float(rng.uniform(1.0 - cfg.sat_scale, 1.0 + cfg.sat_scale))
        img = jitter_hsv(img, hue, sat, 1.0)
        log["color_jitter"] = (hue, sat)
    return img.astype(np.float32, copy=False), log
