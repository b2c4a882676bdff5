"""Five-scale feature pyramids for the RGB and noise branches.

Both branches expose the same contract: ``forward`` returns five feature
maps whose spatial sizes ceil-halve from input/2 down to input/32, with the
channel widths advertised in ``.channels``.  The reference branch is an
EfficientNet-B4 trunk tapped after its stride-changing stages; the miniature
branch is a five-stage plain CNN for fast desk-scale experiments.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch
from torch import nn

from ..errors import ConfigError

REFERENCE_CHANNELS = (24, 32, 56, 160, 448)
MINIATURE_CHANNELS = (4, 4, 8, 8, 16)

# Indices into torchvision's efficientnet_b4().features after which the
# spatial size has just halved relative to the previous tap.
_B4_TAPS = (1, 2, 3, 5, 7)


@dataclass
class FeaturePyramid:
    """Fine-to-coarse stack of five feature maps (input/2 down to input/32)."""

    maps: list[torch.Tensor]

    def __post_init__(self) -> None:
        if len(self.maps) != 5:
            raise ValueError(f"a feature pyramid has 5 scales, got {len(self.maps)}")

    @property
    def channels(self) -> tuple[int, ...]:
        return tuple(int(m.shape[1]) for m in self.maps)

    @property
    def sizes(self) -> tuple[tuple[int, int], ...]:
        return tuple((int(m.shape[-2]), int(m.shape[-1])) for m in self.maps)

    def validate_halving(self, input_size: tuple[int, int]) -> None:
        h, w = input_size
        for i, (mh, mw) in enumerate(self.sizes, start=1):
            h, w = (h + 1) // 2, (w + 1) // 2
            if (mh, mw) != (h, w):
                raise ValueError(
                    f"scale {i} expected {(h, w)} from ceil-halving, got {(mh, mw)}"
                )


def check_input_size(size: int) -> None:
    if size < 32 or size % 2 != 0:
        raise ConfigError(f"network input side must be even and >= 32, got {size}")


class MiniatureBackbone(nn.Module):
    """Five stride-2 stages of Conv-BN-SiLU pairs; channels (4, 4, 8, 8, 16)."""

    def __init__(self, in_channels: int = 3, channels: tuple[int, ...] = MINIATURE_CHANNELS):
        super().__init__()
        if len(channels) != 5:
            raise ConfigError(f"expected 5 stage widths, got {channels}")
        self.channels = tuple(int(c) for c in channels)
        stages = []
        prev = in_channels
        for width in self.channels:
            stages.append(
                nn.Sequential(
                    nn.Conv2d(prev, width, kernel_size=3, stride=2, padding=1, bias=False),
                    nn.BatchNorm2d(width),
                    nn.SiLU(inplace=True),
                    nn.Conv2d(width, width, kernel_size=3, padding=1, bias=False),
                    nn.BatchNorm2d(width),
                    nn.SiLU(inplace=True),
                )
            )
            prev = width
        self.stages = nn.ModuleList(stages)

    def forward(self, x: torch.Tensor) -> list[torch.Tensor]:
        maps = []
        for stage in self.stages:
            x = stage(x)
            maps.append(x)
        return maps


class EfficientNetPyramid(nn.Module):
    """EfficientNet-B4 trunk tapped at its five stride transitions.

    Channels are (24, 32, 56, 160, 448); for a 380 input the spatial sizes
    are (190, 95, 48, 24, 12).  A 1-channel variant (for the noise branch)
    rebuilds the stem convolution, initializing it from the mean of the RGB
    stem when pretrained weights are requested.
    """

    def __init__(self, in_channels: int = 3, pretrained: bool = False):
        super().__init__()
        try:
            from torchvision.models import efficientnet_b4
        except ImportError as exc:
            raise ConfigError(f"torchvision is required for the reference backbone: {exc}") from exc
        if pretrained:
            try:
                from torchvision.models import EfficientNet_B4_Weights

                trunk = efficientnet_b4(weights=EfficientNet_B4_Weights.IMAGENET1K_V1)
            except Exception as exc:  # noqa: BLE001 - download/environment failures vary
                raise ConfigError(
                    "pretrained backbone weights could not be loaded (offline?); "
                    f"set model.pretrained_backbone=false or provide a weights cache: {exc}"
                ) from exc
        else:
            trunk = efficientnet_b4(weights=None)
        features = trunk.features
        if in_channels != 3:
            old = features[0][0]
            new = nn.Conv2d(
                in_channels, old.out_channels, kernel_size=old.kernel_size,
                stride=old.stride, padding=old.padding, bias=False,
            )
            if pretrained:
                with torch.no_grad():
                    new.weight.copy_(old.weight.mean(dim=1, keepdim=True).expand_as(new.weight))
            features[0][0] = new
        self.features = features
        self.channels = REFERENCE_CHANNELS

    def forward(self, x: torch.Tensor) -> list[torch.Tensor]:
        maps = []
        for i, stage in enumerate(self.features):
            x = stage(x)
            if i in _B4_TAPS:
                maps.append(x)
        return maps


def make_backbone(variant: str, in_channels: int, pretrained: bool = False) -> nn.Module:
    if variant == "reference":
        return EfficientNetPyramid(in_channels=in_channels, pretrained=pretrained)
    if variant == "miniature":
        if pretrained:
            raise ConfigError("the miniature backbone has no pretrained weights")
        return MiniatureBackbone(in_channels=in_channels)
    raise ConfigError(f"unknown backbone variant {variant!r}; expected reference or miniature")


def extract_pyramid(x: torch.Tensor, backbone: nn.Module) -> FeaturePyramid:
    """Run a backbone and validate the five-scale ceil-halving contract."""
    if x.dim() != 4:
        raise ValueError(f"expected a B x C x H x W batch, got shape {tuple(x.shape)}")
    h, w = int(x.shape[-2]), int(x.shape[-1])
    check_input_size(min(h, w))
    pyramid = FeaturePyramid(backbone(x))
    pyramid.validate_halving((h, w))
    return pyramid
