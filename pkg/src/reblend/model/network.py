"""The detector network: two-branch multi-scale fusion with three heads.

Forward pass for a B x 3 x S x S batch in [0, 1]:

  1. the noise extractor turns the image into a 1-channel residual map;
  2. separate backbones build five-scale pyramids for the RGB image and the
     noise map (channels C_i, spatial ceil-halving from S/2 to S/32);
  3. a Sobel edge-attention block per scale derives edge features from the
     RGB features; the edge head fuses all five (upsampled to S/2) into the
     blending-edge prediction;
  4. fusion blocks combine Cat(F_rgb + F_edge, F_noise) per scale into 2*C_i
     channels, each receiving the previous scale through a stride-2
     alignment convolution, ending in a 2*C_5 channel map at S/32;
  5. the map head decodes that to the S/2 manipulation map and the
     classification head emits the 2-way authenticity probability.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import NamedTuple

import torch
from torch import nn

from ..errors import ConfigError
from .backbones import (
    MINIATURE_CHANNELS,
    REFERENCE_CHANNELS,
    FeaturePyramid,
    check_input_size,
    extract_pyramid,
    make_backbone,
)
from .blocks import (
    ClassificationHead,
    EdgeHead,
    FusionBlock,
    MapHead,
    NoiseExtractor,
    SobelBlock,
)

__all__ = ["ModelConfig", "ModelOutput", "BlendDetector"]


@dataclass(frozen=True)
class ModelConfig:
    """Architecture hyperparameters of the detector."""

    variant: str = "reference"
    input_size: int = 380
    pretrained_backbone: bool = False
    bam_reduction: int = 16
    bam_dilation: int = 4
    sobel_norm: str = "batch"
    edge_hidden: tuple[int, int] = (128, 64)
    map_taper: tuple[int, int, int] = (256, 64, 16)
    cls_hidden: int = 256

    def __post_init__(self) -> None:
        if self.variant not in ("reference", "miniature"):
            raise ConfigError(f"unknown variant {self.variant!r}")
        check_input_size(self.input_size)

    @property
    def channels(self) -> tuple[int, ...]:
        return REFERENCE_CHANNELS if self.variant == "reference" else MINIATURE_CHANNELS

    @property
    def fusion_channels(self) -> int:
        return 2 * self.channels[-1]

    @property
    def edge_concat_channels(self) -> int:
        return sum(self.channels)

    @classmethod
    def miniature(cls, input_size: int = 64, **overrides) -> "ModelConfig":
        defaults = dict(
            variant="miniature",
            input_size=input_size,
            bam_reduction=2,
            bam_dilation=1,
            edge_hidden=(16, 16),
            map_taper=(16, 8, 4),
            cls_hidden=16,
        )
        defaults.update(overrides)
        return cls(**defaults)  # type: ignore[arg-type]

    @classmethod
    def from_mapping(cls, m: dict) -> "ModelConfig":
        base: dict = dict(
            variant=str(m["variant"]),
            input_size=int(m["input_size"]),
            pretrained_backbone=bool(m["pretrained_backbone"]),
            bam_reduction=int(m["bam_reduction"]),
            bam_dilation=int(m["bam_dilation"]),
            sobel_norm=str(m["sobel_norm"]),
        )
        if base["variant"] == "miniature":
            base.setdefault("edge_hidden", (16, 16))
            base.setdefault("map_taper", (16, 8, 4))
            base.setdefault("cls_hidden", 16)
        return cls(**base)


class ModelOutput(NamedTuple):
    """Per-batch predictions: soft maps at half resolution plus class scores."""

    edge: torch.Tensor   # B x 1 x S/2 x S/2
    map: torch.Tensor    # B x 1 x S/2 x S/2
    logits: torch.Tensor # B x 2
    prob: torch.Tensor   # B   probability of the manipulated class


class BlendDetector(nn.Module):
    def __init__(self, config: ModelConfig = ModelConfig()):
        super().__init__()
        self.config = config
        channels = config.channels
        self.noise_extractor = NoiseExtractor(kernel_size=5)
        self.rgb_backbone = make_backbone(config.variant, 3, config.pretrained_backbone)
        self.noise_backbone = make_backbone(config.variant, 1, config.pretrained_backbone)
        self.sobel_blocks = nn.ModuleList(
            SobelBlock(c, norm=config.sobel_norm) for c in channels
        )
        self.edge_head = EdgeHead(channels, hidden=config.edge_hidden)
        fusion = []
        prev: int | None = None
        for c in channels:
            fusion.append(
                FusionBlock(
                    c,
                    prev_channels=prev,
                    reduction=config.bam_reduction,
                    dilation=config.bam_dilation,
                )
            )
            prev = 2 * c
        self.fusion_blocks = nn.ModuleList(fusion)
        self.map_head = MapHead(config.fusion_channels, taper=config.map_taper)
        self.cls_head = ClassificationHead(config.fusion_channels, hidden=config.cls_hidden)

    def pyramids(self, x: torch.Tensor) -> tuple[FeaturePyramid, FeaturePyramid, torch.Tensor]:
        """RGB and noise pyramids plus the raw noise map (for inspection)."""
        noise = self.noise_extractor(x)
        rgb_pyr = extract_pyramid(x, self.rgb_backbone)
        noise_pyr = extract_pyramid(noise, self.noise_backbone)
        if rgb_pyr.channels != self.config.channels or noise_pyr.channels != self.config.channels:
            raise ConfigError(
                f"backbone produced channels {rgb_pyr.channels}/{noise_pyr.channels}, "
                f"configured {self.config.channels}"
            )
        return rgb_pyr, noise_pyr, noise

    def forward(self, x: torch.Tensor) -> ModelOutput:
        if x.dim() != 4 or x.shape[1] != 3:
            raise ValueError(f"expected a B x 3 x S x S batch, got shape {tuple(x.shape)}")
        h, w = int(x.shape[-2]), int(x.shape[-1])
        if h != w or h != self.config.input_size:
            raise ValueError(
                f"this detector was built for {self.config.input_size}px inputs, got {h}x{w}"
            )
        rgb_pyr, noise_pyr, _ = self.pyramids(x)
        edge_feats = [
            block(feat) for block, feat in zip(self.sobel_blocks, rgb_pyr.maps)
        ]
        half = (h // 2, w // 2)
        edge_pred = self.edge_head(edge_feats, half)
        prev: torch.Tensor | None = None
        for block, rgb, edge, noise in zip(
            self.fusion_blocks, rgb_pyr.maps, edge_feats, noise_pyr.maps
        ):
            prev = block(rgb, edge, noise, prev)
        fused = prev
        assert fused is not None
        map_pred = self.map_head(fused, half)
        logits, prob = self.cls_head(fused)
        return ModelOutput(edge=edge_pred, map=map_pred, logits=logits, prob=prob)

    @torch.no_grad()
    def project_constraints(self) -> None:
        """Re-impose the constrained high-pass kernel (after optimizer steps)."""
        self.noise_extractor.project()

    def branch_parameter_names(self) -> dict[str, list[str]]:
        """Parameter names grouped by branch, for disjointness audits."""
        groups: dict[str, list[str]] = {"rgb": [], "noise": [], "other": []}
        for name, _ in self.named_parameters():
            if name.startswith("rgb_backbone."):
                groups["rgb"].append(name)
            elif name.startswith("noise_backbone.") or name.startswith("noise_extractor."):
                groups["noise"].append(name)
            else:
                groups["other"].append(name)
        return groups
