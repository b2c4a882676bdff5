"""Image-space operations used to synthesize blended forgery samples.

All images are float32 RGB arrays of shape H x W x 3 with values in [0, 1];
masks are float32 H x W in [0, 1].  Every random choice is drawn from an
explicit ``numpy.random.Generator`` and echoed back in a parameter log so a
sample can be reproduced or audited from its metadata alone.

Key choices:
  * the blend is the convex per-pixel mix  out = src * (a * M) + tgt * (1 - a * M)
    with a scalar magnitude a in [0.5, 1];
  * the edge target is 4 * M * (1 - M): zero on hard 0/1 regions, peaking at 1
    where the softened mask crosses 0.5, symmetric under M -> 1 - M;
  * mask and source deform together with identical sampled parameters (masks
    warp nearest-neighbour with zero fill, images bilinear with reflection);
  * the statistical transform stack lands on exactly one of source/target.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import cv2
import numpy as np

from ..data import BROWS, EYES, FOREHEAD, JAW, LANDMARK_COUNT, MOUTH, NOSE
from ..errors import DataError

HULL_VARIANTS = ("full", "lower", "components", "dilated")

_VARIANT_POINTS = {
    "full": list(range(LANDMARK_COUNT)),
    "lower": JAW + BROWS + NOSE + EYES + MOUTH,
    "components": BROWS + NOSE + EYES + MOUTH,
    "dilated": list(range(LANDMARK_COUNT)),
}


def _check_image(image: np.ndarray, name: str) -> np.ndarray:
    arr = np.asarray(image)
    if arr.ndim != 3 or arr.shape[2] != 3:
        raise ValueError(f"{name} must be H x W x 3, got shape {arr.shape}")
    return arr.astype(np.float32, copy=False)


def _check_mask(mask: np.ndarray, name: str = "mask") -> np.ndarray:
    arr = np.asarray(mask)
    if arr.ndim != 2:
        raise ValueError(f"{name} must be H x W, got shape {arr.shape}")
    if arr.size and (float(arr.min()) < 0.0 or float(arr.max()) > 1.0):
        raise ValueError(f"{name} values must lie in [0, 1]")
    return arr


def blend(source: np.ndarray, target: np.ndarray, mask: np.ndarray, alpha: float) -> np.ndarray:
    """Composite ``source`` over ``target`` through ``alpha * mask``.

    With alpha = 1 and a binary mask this is a hard paste; alpha scales the
    mix strength.  Output stays inside [min(src,tgt), max(src,tgt)] per pixel.
    """
    src = _check_image(source, "source")
    tgt = _check_image(target, "target")
    m = _check_mask(mask)
    if src.shape != tgt.shape:
        raise ValueError(f"source shape {src.shape} != target shape {tgt.shape}")
    if m.shape != src.shape[:2]:
        raise ValueError(f"mask shape {m.shape} does not match image shape {src.shape[:2]}")
    if not (0.0 <= alpha <= 1.0):
        raise ValueError(f"alpha must lie in [0, 1], got {alpha}")
    w = (alpha * m.astype(np.float32))[:, :, None]
    return src * w + tgt * (1.0 - w)


def edge_from_mask(mask: np.ndarray) -> np.ndarray:
    """Boundary-sensitivity map 4 * M * (1 - M) of a soft mask."""
    m = _check_mask(mask)
    return 4.0 * m * (1.0 - m)


def gaussian_kernel_size(sigma: float) -> int:
    """Odd kernel size covering +/- 2 sigma: 2 * ceil(2 * sigma) + 1."""
    if sigma <= 0:
        raise ValueError(f"sigma must be positive, got {sigma}")
    return 2 * int(np.ceil(2.0 * sigma)) + 1


def blur_mask(mask: np.ndarray, sigma: float) -> np.ndarray:
    """Soften a mask with a normalized Gaussian; output clipped to [0, 1]."""
    m = _check_mask(mask).astype(np.float32)
    k = gaussian_kernel_size(sigma)
    out = cv2.GaussianBlur(m, (k, k), sigmaX=sigma, sigmaY=sigma, borderType=cv2.BORDER_CONSTANT)
    return np.clip(out, 0.0, 1.0)


@dataclass
class BlendMask:
    """A mask plus the provenance of how it was built."""

    mask: np.ndarray
    variant: str
    deformed: bool = False
    params: dict = field(default_factory=dict)


def build_hull_mask(
    landmarks: np.ndarray,
    shape: tuple[int, int],
    rng: np.random.Generator,
    variants: tuple[str, ...] | list[str] = HULL_VARIANTS,
    dilate_px: tuple[int, int] = (2, 12),
) -> BlendMask:
    """Rasterize the convex hull of a landmark subset into a binary mask.

    One variant is drawn from ``variants``: ``full`` uses all 81 points,
    ``lower`` drops the forehead, ``components`` keeps only inner features
    (brows through mouth), and ``dilated`` grows the full hull by a random
    elliptical kernel.  Degenerate landmark sets (fewer than 3 distinct
    points, zero-area hull) raise DataError.
    """
    lms = np.asarray(landmarks, dtype=np.float64)
    if lms.shape != (LANDMARK_COUNT, 2):
        raise DataError(f"expected {LANDMARK_COUNT} landmark pairs, got shape {lms.shape}")
    if not variants:
        raise ValueError("variants must be non-empty")
    for v in variants:
        if v not in HULL_VARIANTS:
            raise ValueError(f"unknown hull variant {v!r}; known: {HULL_VARIANTS}")
    variant = str(variants[int(rng.integers(len(variants)))])
    h, w = shape
    pts = lms[_VARIANT_POINTS[variant]]
    pts = np.clip(pts, [0, 0], [w - 1, h - 1])
    pts_i = np.round(pts).astype(np.int32)
    if len(np.unique(pts_i, axis=0)) < 3:
        raise DataError("degenerate landmarks: fewer than 3 distinct hull points")
    hull = cv2.convexHull(pts_i)
    canvas = np.zeros((h, w), dtype=np.uint8)
    cv2.fillConvexPoly(canvas, hull, 1)
    params: dict = {}
    if variant == "dilated":
        lo, hi = int(dilate_px[0]), int(dilate_px[1])
        radius = int(rng.integers(lo, hi + 1))
        kernel = cv2.getStructuringElement(cv2.MORPH_ELLIPSE, (2 * radius + 1, 2 * radius + 1))
        canvas = cv2.dilate(canvas, kernel)
        params["dilate_radius"] = radius
    mask = canvas.astype(np.float32)
    if float(mask.sum()) <= 0.0:
        raise DataError("degenerate landmarks: hull has zero area")
    return BlendMask(mask=mask, variant=variant, params=params)


@dataclass(frozen=True)
class DeformConfig:
    prob: float = 0.5
    translate_frac: float = 0.03
    rotate_deg: float = 5.0
    scale_range: tuple[float, float] = (0.97, 1.03)
    elastic_alpha: float = 6.0
    elastic_sigma: float = 8.0

    @classmethod
    def from_mapping(cls, m: dict) -> "DeformConfig":
        return cls(
            prob=float(m["prob"]),
            translate_frac=float(m["translate_frac"]),
            rotate_deg=float(m["rotate_deg"]),
            scale_range=tuple(float(v) for v in m["scale_range"]),  # type: ignore[arg-type]
            elastic_alpha=float(m["elastic_alpha"]),
            elastic_sigma=float(m["elastic_sigma"]),
        )


def deform_mask_and_source(
    mask: np.ndarray,
    source: np.ndarray,
    rng: np.random.Generator,
    cfg: DeformConfig = DeformConfig(),
) -> tuple[np.ndarray, np.ndarray, dict]:
    """Apply one shared affine + elastic warp to the mask and the source.

    The geometric parameters are sampled once and used for both arrays; only
    the resampling differs (nearest + zero fill for the mask, bilinear +
    reflection for the image).  With probability 1 - prob the inputs pass
    through untouched.
    """
    m = _check_mask(mask).astype(np.float32)
    src = _check_image(source, "source")
    if m.shape != src.shape[:2]:
        raise ValueError(f"mask shape {m.shape} does not match source shape {src.shape[:2]}")
    if rng.random() >= cfg.prob:
        return m, src, {"applied": False}
    h, w = m.shape
    angle = float(rng.uniform(-cfg.rotate_deg, cfg.rotate_deg))
    scale = float(rng.uniform(*cfg.scale_range))
    tx = float(rng.uniform(-cfg.translate_frac, cfg.translate_frac) * w)
    ty = float(rng.uniform(-cfg.translate_frac, cfg.translate_frac) * h)
    matrix = cv2.getRotationMatrix2D((w / 2.0, h / 2.0), angle, scale)
    matrix[0, 2] += tx
    matrix[1, 2] += ty

    dx = rng.uniform(-1.0, 1.0, size=(h, w)).astype(np.float32)
    dy = rng.uniform(-1.0, 1.0, size=(h, w)).astype(np.float32)
    k = gaussian_kernel_size(cfg.elastic_sigma)
    dx = cv2.GaussianBlur(dx, (k, k), cfg.elastic_sigma) * cfg.elastic_alpha
    dy = cv2.GaussianBlur(dy, (k, k), cfg.elastic_sigma) * cfg.elastic_alpha
    xs, ys = np.meshgrid(np.arange(w, dtype=np.float32), np.arange(h, dtype=np.float32))
    map_x, map_y = xs + dx, ys + dy

    def _warp(arr: np.ndarray, interp: int, border: int) -> np.ndarray:
        affined = cv2.warpAffine(arr, matrix, (w, h), flags=interp, borderMode=border)
        return cv2.remap(affined, map_x, map_y, interpolation=interp, borderMode=border)

    out_mask = _warp(m, cv2.INTER_NEAREST, cv2.BORDER_CONSTANT)
    out_src = _warp(src, cv2.INTER_LINEAR, cv2.BORDER_REFLECT_101)
    log = {
        "applied": True,
        "angle_deg": angle,
        "scale": scale,
        "translate": (tx, ty),
        "elastic_alpha": cfg.elastic_alpha,
        "elastic_sigma": cfg.elastic_sigma,
    }
    return np.clip(out_mask, 0.0, 1.0), np.clip(out_src, 0.0, 1.0), log


# --- statistical appearance transforms -------------------------------------


def shift_channels(image: np.ndarray, offsets: tuple[float, float, float]) -> np.ndarray:
    """Add a constant per-channel offset; output clipped to [0, 1]."""
    img = _check_image(image, "image")
    return np.clip(img + np.asarray(offsets, dtype=np.float32), 0.0, 1.0)


def jitter_hsv(image: np.ndarray, hue: float, sat: float, val: float) -> np.ndarray:
    """Rotate hue by ``hue`` (fraction of the circle), scale S by ``sat`` and V by ``val``."""
    img = _check_image(image, "image")
    if hue == 0.0 and sat == 1.0 and val == 1.0:
        return img.copy()
    hsv = cv2.cvtColor(img, cv2.COLOR_RGB2HSV)
    hsv[:, :, 0] = (hsv[:, :, 0] + hue * 360.0) % 360.0
    hsv[:, :, 1] = np.clip(hsv[:, :, 1] * sat, 0.0, 1.0)
    hsv[:, :, 2] = np.clip(hsv[:, :, 2] * val, 0.0, 1.0)
    return np.clip(cv2.cvtColor(hsv, cv2.COLOR_HSV2RGB), 0.0, 1.0)


def adjust_brightness_contrast(image: np.ndarray, brightness: float, contrast: float) -> np.ndarray:
    """Scale contrast about mid-gray by (1 + contrast), then add ``brightness``."""
    img = _check_image(image, "image")
    if brightness == 0.0 and contrast == 0.0:
        return img.copy()
    out = (img - 0.5) * (1.0 + contrast) + 0.5 + brightness
    return np.clip(out, 0.0, 1.0)


def blur_or_sharpen(image: np.ndarray, mode: str, amount: float) -> np.ndarray:
    """Apply exactly one of Gaussian blur (``amount`` = sigma) or unsharp
    masking (``amount`` = strength, fixed sigma 1)."""
    img = _check_image(image, "image")
    if mode == "none":
        return img.copy()
    if mode == "blur":
        k = gaussian_kernel_size(amount)
        return cv2.GaussianBlur(img, (k, k), amount)
    if mode == "sharpen":
        base = cv2.GaussianBlur(img, (gaussian_kernel_size(1.0), ) * 2, 1.0)
        return np.clip(img + amount * (img - base), 0.0, 1.0)
    raise ValueError(f"mode must be blur, sharpen, or none; got {mode!r}")


@dataclass(frozen=True)
class SstaConfig:
    """Magnitude bounds for the statistical appearance transform stack.

    Setting a magnitude to zero (or a scale range to a point) disables that
    component exactly: the identity configuration returns the input untouched.
    """

    channel_shift: float = 0.06
    hue_shift: float = 0.05
    sat_scale: float = 0.2
    val_scale: float = 0.15
    brightness: float = 0.15
    contrast: float = 0.25
    blur_sigma: tuple[float, float] = (0.6, 1.6)
    sharpen_amount: tuple[float, float] = (0.3, 1.0)

    @classmethod
    def from_mapping(cls, m: dict) -> "SstaConfig":
        return cls(
            channel_shift=float(m["channel_shift"]),
            hue_shift=float(m["hue_shift"]),
            sat_scale=float(m["sat_scale"]),
            val_scale=float(m["val_scale"]),
            brightness=float(m["brightness"]),
            contrast=float(m["contrast"]),
            blur_sigma=tuple(float(v) for v in m["blur_sigma"]),  # type: ignore[arg-type]
            sharpen_amount=tuple(float(v) for v in m["sharpen_amount"]),  # type: ignore[arg-type]
        )

    @classmethod
    def identity(cls) -> "SstaConfig":
        return cls(
            channel_shift=0.0, hue_shift=0.0, sat_scale=0.0, val_scale=0.0,
            brightness=0.0, contrast=0.0, blur_sigma=(0.0, 0.0), sharpen_amount=(0.0, 0.0),
        )


def ssta(
    image: np.ndarray, rng: np.random.Generator, cfg: SstaConfig = SstaConfig()
) -> tuple[np.ndarray, dict]:
    """Apply the full statistical transform stack with random magnitudes.

    Order: per-channel shift, HSV jitter, brightness/contrast, then exactly
    one of blur or sharpen (a fair coin picks which).  Components whose
    sampled magnitude is the identity are skipped so the all-zero
    configuration reproduces the input bit for bit.
    """
    img = _check_image(image, "image")
    log: dict = {}

    offsets = tuple(float(v) for v in rng.uniform(-cfg.channel_shift, cfg.channel_shift, size=3))
    log["channel_shift"] = offsets
    if any(offsets):
        img = shift_channels(img, offsets)  # type: ignore[arg-type]

    hue = float(rng.uniform(-cfg.hue_shift, cfg.hue_shift))
    sat = float(rng.uniform(1.0 - cfg.sat_scale, 1.0 + cfg.sat_scale))
    val = float(rng.uniform(1.0 - cfg.val_scale, 1.0 + cfg.val_scale))
    log["hsv"] = (hue, sat, val)
    if hue != 0.0 or sat != 1.0 or val != 1.0:
        img = jitter_hsv(img, hue, sat, val)

    b = float(rng.uniform(-cfg.brightness, cfg.brightness))
    c = float(rng.uniform(-cfg.contrast, cfg.contrast))
    log["brightness_contrast"] = (b, c)
    if b != 0.0 or c != 0.0:
        img = adjust_brightness_contrast(img, b, c)

    use_blur = bool(rng.random() < 0.5)
    if use_blur:
        sigma = float(rng.uniform(*cfg.blur_sigma))
        log["blur_or_sharpen"] = ("blur", sigma)
        if sigma > 0.0:
            img = blur_or_sharpen(img, "blur", sigma)
    else:
        amount = float(rng.uniform(*cfg.sharpen_amount))
        log["blur_or_sharpen"] = ("sharpen", amount)
        if amount > 0.0:
            img = blur_or_sharpen(img, "sharpen", amount)
    return img.astype(np.float32, copy=False), log


def assign_source_target(
    genuine: np.ndarray,
    reconstructed: np.ndarray,
    rng: np.random.Generator,
    cfg: SstaConfig = SstaConfig(),
    source_prob: float = 0.5,
    source_role: str = "reconstructed",
) -> tuple[np.ndarray, np.ndarray, dict]:
    """Assign blending roles and land the transform stack on exactly one side.

    By default the reconstructed image becomes the source (pasted inside the
    mask) and the genuine image the target; ``source_role='genuine'`` swaps
    the roles.  A coin with ``source_prob`` decides whether the transforms
    hit the source or the target, so exactly one of the pair is transformed.
    """
    if source_role not in ("reconstructed", "genuine"):
        raise ValueError(f"source_role must be reconstructed or genuine, got {source_role!r}")
    source, target = (reconstructed, genuine) if source_role == "reconstructed" else (genuine, reconstructed)
    transform_source = bool(rng.random() < source_prob)
    if transform_source:
        source, ssta_log = ssta(source, rng, cfg)
    else:
        target, ssta_log = ssta(target, rng, cfg)
    log = {
        "source_role": source_role,
        "transformed": "source" if transform_source else "target",
        "ssta": ssta_log,
    }
    return source, target, log
