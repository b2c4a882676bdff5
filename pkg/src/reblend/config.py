"""Layered run configuration with a stable content fingerprint.

Resolution order (later wins): built-in defaults -> named preset -> config
file (YAML) -> explicit overrides (``--set key=value`` on the CLI).  The
resolved mapping is flat-addressable with dotted keys and hashes to a
fingerprint computed over canonicalized ``key = value`` text, so the same
settings fingerprint identically regardless of platform, dict ordering, or
which layer supplied them.

Environment: ``REBLEND_CACHE`` may point at the face-crop cache root; it is
the only environment variable the toolkit reads.
"""

from __future__ import annotations

import copy
import hashlib
import io
import json
import os
from dataclasses import dataclass
from typing import Any, Iterator, Mapping

import yaml

from .errors import ConfigError

CACHE_ENV_VAR = "REBLEND_CACHE"

DEFAULTS: dict[str, Any] = {
    "seed": 20,
    "cache_root": None,
    "synth": {
        "reconstructor": "identity",
        "external_model": None,
        "autoencoder": {
            "image_size": 64,
            "latent_dim": 256,
            "epochs": 8,
            "lr": 2e-3,
            "batch_size": 32,
        },
        "bg_noise": {"prob": 0.5, "sigma_range": [0.1, 0.3]},
        "ssta": {
            "source_prob": 0.5,
            "channel_shift": 0.06,
            "hue_shift": 0.05,
            "sat_scale": 0.2,
            "val_scale": 0.15,
            "brightness": 0.15,
            "contrast": 0.25,
            "blur_sigma": [0.6, 1.6],
            "sharpen_amount": [0.3, 1.0],
        },
        "hull": {"variants": ["full", "lower", "components", "dilated"], "dilate_px": [2, 12]},
        "deform": {
            "prob": 0.5,
            "translate_frac": 0.03,
            "rotate_deg": 5.0,
            "scale_range": [0.97, 1.03],
            "elastic_alpha": 6.0,
            "elastic_sigma": 8.0,
        },
        "mask_blur_sigma": [1.0, 4.0],
        "alpha_range": [0.5, 1.0],
        "source_role": "reconstructed",
    },
    "augment": {
        "jpeg_prob": 0.5,
        "jpeg_quality": [30, 100],
        "brightness_contrast_prob": 0.5,
        "brightness": 0.1,
        "contrast": 0.2,
        "color_jitter_prob": 0.5,
        "hue_shift": 0.03,
        "sat_scale": 0.1,
    },
    "data": {
        "crop_size": 380,
        "crop_margin": 0.125,
        "train_frames_per_video": 20,
    },
    "model": {
        "variant": "reference",
        "input_size": 380,
        "pretrained_backbone": False,
        "bam_reduction": 16,
        "bam_dilation": 4,
        "sobel_norm": "batch",
    },
    "train": {
        "lr": 0.001,
        "momentum": 0.9,
        "weight_decay": 0.0,
        "batch_pairs": 16,
        "epochs": 80,
        "rho": 0.05,
        "lambda_map": 50.0,
        "lambda_edge": 100.0,
        "steps_per_epoch": None,
        "val_every": 0,
        "checkpoint_every": 1,
    },
    "eval": {
        "frame_frames": 5,
        "video_frames": 32,
        "fallback_score": 0.5,
        "batch_size": 16,
    },
    "sweep": {
        "grid": [[25, 25], [25, 50], [50, 50], [50, 100], [100, 50], [150, 300], [500, 1000]],
        "epochs": 1,
        "steps_per_epoch": 40,
    },
}

# Descriptive help for `config show`; one line per leaf key.
KEY_HELP: dict[str, str] = {
    "seed": "root seed; every random stream is derived from it by labeled hashing",
    "cache_root": "face-crop cache directory (REBLEND_CACHE overrides; null disables)",
    "synth.reconstructor": "reconstruction adapter: identity | toy_autoencoder | external",
    "synth.external_model": "path to a scripted external reconstructor (required for external)",
    "synth.autoencoder.image_size": "training/inference image side for the toy autoencoder",
    "synth.autoencoder.latent_dim": "total latent width, split evenly into identity/background halves",
    "synth.autoencoder.epochs": "toy autoencoder training epochs",
    "synth.autoencoder.lr": "toy autoencoder Adam learning rate",
    "synth.autoencoder.batch_size": "toy autoencoder batch size",
    "synth.bg_noise.prob": "probability of adding Gaussian noise to the background latent",
    "synth.bg_noise.sigma_range": "uniform range for the background-noise standard deviation",
    "synth.ssta.source_prob": "probability the statistical transforms land on the source (else target)",
    "synth.ssta.channel_shift": "max per-channel additive shift for the RGB transform",
    "synth.ssta.hue_shift": "max hue rotation as a fraction of the full hue circle",
    "synth.ssta.sat_scale": "max relative saturation change",
    "synth.ssta.val_scale": "max relative value/brightness change in HSV",
    "synth.ssta.brightness": "max additive brightness offset",
    "synth.ssta.contrast": "max relative contrast change about mid-gray",
    "synth.ssta.blur_sigma": "Gaussian blur sigma range for the blur arm",
    "synth.ssta.sharpen_amount": "unsharp-mask strength range for the sharpen arm",
    "synth.hull.variants": "mask variant pool drawn per sample: full/lower/components/dilated",
    "synth.hull.dilate_px": "elliptical dilation radius range (pixels) for the dilated variant",
    "synth.deform.prob": "probability of applying the shared mask+source deformation",
    "synth.deform.translate_frac": "max translation as a fraction of image side",
    "synth.deform.rotate_deg": "max rotation in degrees",
    "synth.deform.scale_range": "uniform isotropic scale range",
    "synth.deform.elastic_alpha": "elastic displacement magnitude in pixels",
    "synth.deform.elastic_sigma": "smoothing sigma of the elastic displacement field",
    "synth.mask_blur_sigma": "Gaussian sigma range for softening the blend mask",
    "synth.alpha_range": "uniform range of the blend magnitude",
    "synth.source_role": "which image is pasted inside the mask: reconstructed | genuine",
    "augment.jpeg_prob": "probability of JPEG recompression at train time",
    "augment.jpeg_quality": "inclusive JPEG quality range",
    "augment.brightness_contrast_prob": "probability of brightness/contrast jitter at train time",
    "augment.brightness": "max additive brightness offset at train time",
    "augment.contrast": "max relative contrast change at train time",
    "augment.color_jitter_prob": "probability of hue/saturation jitter at train time",
    "augment.hue_shift": "max hue rotation fraction at train time",
    "augment.sat_scale": "max relative saturation change at train time",
    "data.crop_size": "face crop output side in pixels",
    "data.crop_margin": "bbox margin per side as a fraction of box size",
    "data.train_frames_per_video": "frames sampled per training video when building manifests",
    "model.variant": "architecture size: reference | miniature",
    "model.input_size": "network input side; must be even and >= 32",
    "model.pretrained_backbone": "load pretrained backbone weights (needs network access)",
    "model.bam_reduction": "bottleneck attention channel reduction",
    "model.bam_dilation": "bottleneck attention spatial dilation",
    "model.sobel_norm": "normalization inside the edge gate: batch | instance | none",
    "train.lr": "base learning rate of the momentum-SGD update",
    "train.momentum": "SGD momentum",
    "train.weight_decay": "L2 weight decay",
    "train.batch_pairs": "genuine/blended pairs per batch (batch size is twice this)",
    "train.epochs": "training epochs",
    "train.rho": "sharpness-aware perturbation radius; 0 disables the two-pass update",
    "train.lambda_map": "weight of the manipulation-map loss",
    "train.lambda_edge": "weight of the blending-edge loss",
    "train.steps_per_epoch": "optional cap on optimizer steps per epoch (null = full pass)",
    "train.val_every": "run validation every N epochs (0 disables)",
    "train.checkpoint_every": "save a checkpoint every N epochs",
    "eval.frame_frames": "frames scored per video in the frame-level protocol",
    "eval.video_frames": "frames averaged per video in the video-level protocol",
    "eval.fallback_score": "score assigned to videos where no frame could be processed",
    "eval.batch_size": "scoring batch size",
    "sweep.grid": "list of [map weight, edge weight] cells trained during the sweep",
    "sweep.epochs": "training epochs per sweep cell",
    "sweep.steps_per_epoch": "optimizer steps per epoch per sweep cell",
}

# Named presets applied between defaults and the config file.
PRESETS: dict[str, dict[str, Any]] = {
    "reference": {},
    "miniature": {
        "data.crop_size": 64,
        "model.variant": "miniature",
        "model.input_size": 64,
        "model.bam_reduction": 2,
        "model.bam_dilation": 1,
        "train.batch_pairs": 4,
    },
    # Alternate loss weighting (map 100 / edge 50); default stays (50, 100).
    "loss_alternate": {
        "train.lambda_map": 100.0,
        "train.lambda_edge": 50.0,
    },
}


def _flatten(tree: Mapping[str, Any], prefix: str = "") -> Iterator[tuple[str, Any]]:
    for key in tree:
        dotted = f"{prefix}{key}"
        value = tree[key]
        if isinstance(value, Mapping):
            yield from _flatten(value, dotted + ".")
        else:
            yield dotted, value


def _set_dotted(tree: dict[str, Any], dotted: str, value: Any) -> None:
    parts = dotted.split(".")
    node = tree
    for part in parts[:-1]:
        nxt = node.get(part)
        if not isinstance(nxt, dict):
            raise ConfigError(f"unknown config section {dotted!r}")
        node = nxt
    if parts[-1] not in node:
        raise ConfigError(f"unknown config key {dotted!r}")
    if isinstance(node[parts[-1]], dict):
        raise ConfigError(f"{dotted!r} is a section, not a value")
    node[parts[-1]] = value


def parse_override(item: str) -> tuple[str, Any]:
    """Parse one ``key=value`` override; the value is YAML-decoded."""
    if "=" not in item:
        raise ConfigError(f"override {item!r} is not of the form key=value")
    key, _, raw = item.partition("=")
    key = key.strip()
    if not key:
        raise ConfigError(f"override {item!r} has an empty key")
    try:
        value = yaml.safe_load(raw)
    except yaml.YAMLError as exc:
        raise ConfigError(f"override {item!r} has an unparsable value: {exc}") from exc
    return key, value


@dataclass(frozen=True)
class RunConfig:
    """A fully resolved configuration tree."""

    tree: dict[str, Any]

    def get(self, dotted: str) -> Any:
        node: Any = self.tree
        for part in dotted.split("."):
            if not isinstance(node, dict) or part not in node:
                raise ConfigError(f"unknown config key {dotted!r}")
            node = node[part]
        return node

    def section(self, name: str) -> dict[str, Any]:
        value = self.get(name)
        if not isinstance(value, dict):
            raise ConfigError(f"{name!r} is a value, not a section")
        return copy.deepcopy(value)

    @property
    def seed(self) -> int:
        return int(self.get("seed"))

    def cache_root(self) -> str | None:
        env = os.environ.get(CACHE_ENV_VAR)
        if env:
            return env
        value = self.get("cache_root")
        return str(value) if value else None

    def canonical_text(self) -> str:
        lines = [
            f"{key} = {json.dumps(value, sort_keys=True)}"
            for key, value in sorted(_flatten(self.tree))
        ]
        return "\n".join(lines) + "\n"

    def fingerprint(self) -> str:
        return hashlib.sha256(self.canonical_text().encode("utf-8")).hexdigest()

    def to_yaml(self) -> str:
        return yaml.safe_dump(self.tree, sort_keys=True, default_flow_style=None)

    def describe(self) -> str:
        """Every key with its value and a comment describing what it controls."""
        out = io.StringIO()
        for key, value in sorted(_flatten(self.tree)):
            help_text = KEY_HELP.get(key, "")
            line = f"{key} = {json.dumps(value)}"
            out.write(f"{line:<46s}# {help_text}\n" if help_text else line + "\n")
        return out.getvalue()


def _validate(cfg: RunConfig) -> None:
    lo, hi = cfg.get("synth.alpha_range")
    if not (0.0 <= lo <= hi <= 1.0):
        raise ConfigError(f"synth.alpha_range must satisfy 0 <= lo <= hi <= 1, got {[lo, hi]}")
    for key in ("synth.bg_noise.prob", "synth.deform.prob", "synth.ssta.source_prob"):
        p = cfg.get(key)
        if not (0.0 <= p <= 1.0):
            raise ConfigError(f"{key} must be a probability, got {p}")
    size = cfg.get("model.input_size")
    if size < 32 or size % 2 != 0:
        raise ConfigError(f"model.input_size must be even and >= 32, got {size}")
    if cfg.get("model.variant") not in ("reference", "miniature"):
        raise ConfigError(f"model.variant must be reference or miniature, got {cfg.get('model.variant')!r}")
    if cfg.get("train.lambda_map") < 0 or cfg.get("train.lambda_edge") < 0:
        raise ConfigError("loss weights must be non-negative")
    if cfg.get("train.rho") < 0:
        raise ConfigError("train.rho must be >= 0")
    known = set(KEY_HELP)
    for key, _ in _flatten(cfg.tree):
        if key not in known:
            raise ConfigError(f"unknown config key {key!r}")
    variants = set(cfg.get("synth.hull.variants"))
    allowed = {"full", "lower", "components", "dilated"}
    if not variants or not variants <= allowed:
        raise ConfigError(f"synth.hull.variants must be a non-empty subset of {sorted(allowed)}")


def resolve_config(
    path: str | os.PathLike[str] | None = None,
    *,
    preset: str | None = None,
    overrides: Mapping[str, Any] | None = None,
    seed: int | None = None,
) -> RunConfig:
    """Layer defaults, preset, file, and overrides into a validated RunConfig."""
    tree = copy.deepcopy(DEFAULTS)
    if preset is not None:
        if preset not in PRESETS:
            raise ConfigError(f"unknown preset {preset!r}; available: {sorted(PRESETS)}")
        for key, value in PRESETS[preset].items():
            _set_dotted(tree, key, copy.deepcopy(value))
    if path is not None:
        try:
            with open(path, "r", encoding="utf-8") as fh:
                loaded = yaml.safe_load(fh) or {}
        except OSError as exc:
            raise ConfigError(f"cannot read config file {path}: {exc}") from exc
        except yaml.YAMLError as exc:
            raise ConfigError(f"config file {path} is not valid YAML: {exc}") from exc
        if not isinstance(loaded, dict):
            raise ConfigError(f"config file {path} must contain a mapping")
        for key, value in _flatten(loaded):
            _set_dotted(tree, key, value)
    for key, value in (overrides or {}).items():
        _set_dotted(tree, key, copy.deepcopy(value))
    if seed is not None:
        tree["seed"] = int(seed)
    cfg = RunConfig(tree)
    _validate(cfg)
    return cfg
