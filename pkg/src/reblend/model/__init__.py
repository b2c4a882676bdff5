"""Detector architecture, backbones, and checkpointing."""

from .backbones import (
    MINIATURE_CHANNELS,
    REFERENCE_CHANNELS,
    EfficientNetPyramid,
    FeaturePyramid,
    MiniatureBackbone,
    extract_pyramid,
    make_backbone,
)
from .blocks import (
    BottleneckAttention,
    ClassificationHead,
    EdgeHead,
    FusionBlock,
    MapHead,
    NoiseExtractor,
    SobelBlock,
    bayar_project,
    rgb_to_gray,
    upsample_chain,
)
from .checkpoint import FORMAT_VERSION, load_checkpoint, restore_model, save_checkpoint
from .network import BlendDetector, ModelConfig, ModelOutput

__all__ = [
    "BlendDetector",
    "BottleneckAttention",
    "ClassificationHead",
    "EdgeHead",
    "EfficientNetPyramid",
    "FORMAT_VERSION",
    "FeaturePyramid",
    "FusionBlock",
    "MINIATURE_CHANNELS",
    "MapHead",
    "MiniatureBackbone",
    "ModelConfig",
    "ModelOutput",
    "NoiseExtractor",
    "REFERENCE_CHANNELS",
    "SobelBlock",
    "bayar_project",
    "extract_pyramid",
    "load_checkpoint",
    "make_backbone",
    "restore_model",
    "rgb_to_gray",
    "save_checkpoint",
    "upsample_chain",
]
