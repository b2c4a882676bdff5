"""Blended-forgery sample synthesis."""

from .adapters import (
    ConvAutoencoderAdapter,
    ExternalAdapter,
    IdentityAdapter,
    LatentPair,
    ReconstructorAdapter,
    ToyAutoencoder,
    inject_bg_noise,
    reconstruct,
    train_toy_autoencoder,
)
from .ops import (
    BlendMask,
    DeformConfig,
    SstaConfig,
    assign_source_target,
    blend,
    blur_mask,
    build_hull_mask,
    deform_mask_and_source,
    edge_from_mask,
    gaussian_kernel_size,
    ssta,
)
from .pipeline import (
    AugmentConfig,
    BlendedSample,
    SynthConfig,
    generate_rbi,
    genuine_sample,
    jpeg_roundtrip,
    train_time_augment,
)
from .shards import load_sample, sample_id, shard_digest, write_shards

__all__ = [
    "AugmentConfig",
    "BlendMask",
    "BlendedSample",
    "ConvAutoencoderAdapter",
    "DeformConfig",
    "ExternalAdapter",
    "IdentityAdapter",
    "LatentPair",
    "ReconstructorAdapter",
    "SstaConfig",
    "SynthConfig",
    "ToyAutoencoder",
    "assign_source_target",
    "blend",
    "blur_mask",
    "build_hull_mask",
    "deform_mask_and_source",
    "edge_from_mask",
    "gaussian_kernel_size",
    "generate_rbi",
    "genuine_sample",
    "inject_bg_noise",
    "jpeg_roundtrip",
    "load_sample",
    "reconstruct",
    "sample_id",
    "shard_digest",
    "ssta",
    "train_time_augment",
    "train_toy_autoencoder",
    "write_shards",
]
