"""Building blocks of the detector network.

Contents: the constrained noise-residual extractor, the edge-attention block
built on fixed Sobel filters, bottleneck attention, the per-scale feature
fusion block, and the three output heads (edge, map, classification).
"""

from __future__ import annotations

import warnings
from typing import Sequence

import torch
import torch.nn.functional as F
from torch import nn

from ..errors import ConfigError

LUMA_WEIGHTS = (0.299, 0.587, 0.114)

SOBEL_X = torch.tensor(
    [[-1.0, 0.0, 1.0], [-2.0, 0.0, 2.0], [-1.0, 0.0, 1.0]]
)
SOBEL_Y = SOBEL_X.t().contiguous()

_MIN_OFFCENTER_SUM = 1e-8


def rgb_to_gray(x: torch.Tensor) -> torch.Tensor:
    """Luma projection of a B x 3 x H x W batch to B x 1 x H x W."""
    if x.dim() != 4 or x.shape[1] != 3:
        raise ValueError(f"expected B x 3 x H x W input, got shape {tuple(x.shape)}")
    w = x.new_tensor(LUMA_WEIGHTS).view(1, 3, 1, 1)
    return (x * w).sum(dim=1, keepdim=True)


def bayar_project(kernel: torch.Tensor) -> torch.Tensor:
    """Return ``kernel`` projected onto the constrained high-pass family.

    The center tap is fixed at -1 and the off-center taps are rescaled to sum
    to +1, so the filter has zero DC response and predicts the center pixel
    from its neighbourhood.  A (near-)zero off-center sum cannot be rescaled;
    those kernels are reset to the uniform neighbourhood average with a
    warning.
    """
    if kernel.dim() != 4 or kernel.shape[-1] != kernel.shape[-2] or kernel.shape[-1] % 2 != 1:
        raise ValueError(f"expected an odd square conv kernel, got shape {tuple(kernel.shape)}")
    k = kernel.shape[-1]
    center = k // 2
    out = kernel.clone()
    off_mask = torch.ones_like(out)
    off_mask[..., center, center] = 0.0
    off_sum = (out * off_mask).sum(dim=(-1, -2), keepdim=True)
    degenerate = off_sum.abs() < _MIN_OFFCENTER_SUM
    if bool(degenerate.any()):
        warnings.warn(
            "constrained high-pass kernel had a near-zero off-center sum; reinitialized uniformly",
            stacklevel=2,
        )
        uniform = off_mask / (k * k - 1)
        out = torch.where(degenerate.expand_as(out), uniform, out)
        off_sum = (out * off_mask).sum(dim=(-1, -2), keepdim=True)
    out = out * off_mask / off_sum
    out[..., center, center] = -1.0
    return out


class NoiseExtractor(nn.Module):
    """Grayscale conversion followed by a learnable constrained high-pass.

    The 5 x 5 kernel is re-projected after every optimizer step via
    ``project()`` so it stays in the zero-DC prediction-residual family and
    the output is a noise map rather than image content.
    """

    def __init__(self, kernel_size: int = 5):
        super().__init__()
        if kernel_size % 2 != 1 or kernel_size < 3:
            raise ConfigError(f"noise kernel size must be odd and >= 3, got {kernel_size}")
        self.kernel_size = kernel_size
        weight = torch.randn(1, 1, kernel_size, kernel_size) * 0.1
        self.weight = nn.Parameter(bayar_project(weight))

    @torch.no_grad()
    def project(self) -> None:
        """Re-impose the constraint in place (call after each optimizer step)."""
        self.weight.copy_(bayar_project(self.weight))

    def constraint_residual(self) -> tuple[float, float]:
        """(|center + 1|, |off-center sum - 1|): both ~0 when constrained."""
        center = self.kernel_size // 2
        w = self.weight.detach()
        center_err = float((w[..., center, center] + 1.0).abs().max())
        off = w.sum(dim=(-1, -2)) - w[..., center, center]
        sum_err = float((off - 1.0).abs().max())
        return center_err, sum_err

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        gray = rgb_to_gray(x)
        return F.conv2d(gray, self.weight, padding=self.kernel_size // 2)


def _make_norm(kind: str, channels: int) -> nn.Module:
    if kind == "batch":
        return nn.BatchNorm2d(channels)
    if kind == "instance":
        return nn.InstanceNorm2d(channels, affine=True)
    if kind == "none":
        return nn.Identity()
    raise ConfigError(f"unknown normalization {kind!r}; expected batch, instance, or none")


class SobelBlock(nn.Module):
    """Edge-attention block driven by fixed Sobel filters.

    The per-channel Sobel responses (x + y) are normalized and squashed to a
    gate in (0, 1); the input is modulated by the gate and mixed by a
    learnable 1 x 1 convolution.  The Sobel filters are buffers, never
    parameters, so training cannot alter them.
    """

    def __init__(self, channels: int, norm: str = "batch"):
        super().__init__()
        if channels < 1:
            raise ConfigError(f"channels must be positive, got {channels}")
        self.channels = channels
        self.register_buffer("sobel_x", SOBEL_X.view(1, 1, 3, 3).clone())
        self.register_buffer("sobel_y", SOBEL_Y.view(1, 1, 3, 3).clone())
        self.norm = _make_norm(norm, channels)
        self.mix = nn.Conv2d(channels, channels, kernel_size=1)

    def edge_activation(self, x: torch.Tensor) -> torch.Tensor:
        """The gate: sigmoid(norm(SobelConv(x)))."""
        if x.shape[1] != self.channels:
            raise ValueError(f"expected {self.channels} channels, got {x.shape[1]}")
        wx = self.sobel_x.expand(self.channels, 1, 3, 3)
        wy = self.sobel_y.expand(self.channels, 1, 3, 3)
        resp = F.conv2d(x, wx, padding=1, groups=self.channels) + F.conv2d(
            x, wy, padding=1, groups=self.channels
        )
        return torch.sigmoid(self.norm(resp))

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.mix(x * self.edge_activation(x))


class BottleneckAttention(nn.Module):
    """Channel + spatial bottleneck attention: x * (1 + sigmoid(Mc + Ms)).

    The channel arm pools globally and runs a reduction MLP; the spatial arm
    reduces channels then applies two dilated 3 x 3 convolutions.  The two
    pre-gates add (broadcast) before the sigmoid, so at initialization the
    block roughly scales features by ~1.5 rather than gating them off.
    """

    def __init__(self, channels: int, reduction: int = 16, dilation: int = 4):
        super().__init__()
        if channels < reduction:
            raise ConfigError(
                f"attention reduction {reduction} exceeds channel count {channels}"
            )
        hidden = channels // reduction
        self.channel_mlp = nn.Sequential(
            nn.Linear(channels, hidden), nn.ReLU(inplace=True), nn.Linear(hidden, channels)
        )
        self.spatial = nn.Sequential(
            nn.Conv2d(channels, hidden, kernel_size=1),
            nn.BatchNorm2d(hidden),
            nn.ReLU(inplace=True),
            nn.Conv2d(hidden, hidden, kernel_size=3, padding=dilation, dilation=dilation),
            nn.BatchNorm2d(hidden),
            nn.ReLU(inplace=True),
            nn.Conv2d(hidden, hidden, kernel_size=3, padding=dilation, dilation=dilation),
            nn.BatchNorm2d(hidden),
            nn.ReLU(inplace=True),
            nn.Conv2d(hidden, 1, kernel_size=1),
        )

    def pre_gate(self, x: torch.Tensor) -> torch.Tensor:
        b, c = x.shape[:2]
        mc = self.channel_mlp(x.mean(dim=(2, 3))).view(b, c, 1, 1)
        ms = self.spatial(x)
        return mc + ms

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return x * (1.0 + torch.sigmoid(self.pre_gate(x)))


class FusionBlock(nn.Module):
    """Per-scale fusion of RGB, edge, and noise features with propagation.

    Input is Cat(F_rgb + F_edge, F_noise) giving 2C channels; attention and
    two 3 x 3 convolutions refine it; the previous scale's output (if any) is
    aligned by a bare stride-2 convolution and added; ReLU finishes.
    """

    def __init__(
        self,
        channels: int,
        prev_channels: int | None = None,
        reduction: int = 16,
        dilation: int = 4,
    ):
        super().__init__()
        width = 2 * channels
        self.channels = channels
        self.width = width
        self.attention = BottleneckAttention(width, reduction=reduction, dilation=dilation)
        self.refine = nn.Sequential(
            nn.Conv2d(width, width, kernel_size=3, padding=1, bias=False),
            nn.BatchNorm2d(width),
            nn.ReLU(inplace=True),
            nn.Conv2d(width, width, kernel_size=3, padding=1, bias=False),
            nn.BatchNorm2d(width),
        )
        self.align = (
            nn.Conv2d(prev_channels, width, kernel_size=3, stride=2, padding=1)
            if prev_channels is not None
            else None
        )

    def forward(
        self,
        rgb: torch.Tensor,
        edge: torch.Tensor,
        noise: torch.Tensor,
        prev: torch.Tensor | None = None,
    ) -> torch.Tensor:
        if not (rgb.shape == edge.shape == noise.shape):
            raise ValueError(
                f"rgb/edge/noise shapes must match, got {tuple(rgb.shape)}, "
                f"{tuple(edge.shape)}, {tuple(noise.shape)}"
            )
        fused = torch.cat([rgb + edge, noise], dim=1)
        out = self.refine(self.attention(fused))
        if prev is not None:
            if self.align is None:
                raise ValueError("this fusion block was built without a previous scale")
            aligned = self.align(prev)
            if aligned.shape[-2:] != out.shape[-2:]:
                raise ValueError(
                    f"aligned previous scale {tuple(aligned.shape[-2:])} does not match "
                    f"current scale {tuple(out.shape[-2:])}"
                )
            out = out + aligned
        elif self.align is not None:
            raise ValueError("this fusion block expects a previous-scale input")
        return F.relu(out)


class EdgeHead(nn.Module):
    """Blending-edge prediction from all pyramid scales.

    Every per-scale edge feature is upsampled bilinearly to half the input
    resolution, concatenated, and refined by two 3 x 3 convolutions and a
    1 x 1 projection; a sigmoid yields the soft edge map.
    """

    def __init__(self, scale_channels: Sequence[int], hidden: tuple[int, int] = (128, 64)):
        super().__init__()
        self.scale_channels = tuple(int(c) for c in scale_channels)
        self.total_channels = sum(self.scale_channels)
        self.refine = nn.Sequential(
            nn.Conv2d(self.total_channels, hidden[0], kernel_size=3, padding=1, bias=False),
            nn.BatchNorm2d(hidden[0]),
            nn.ReLU(inplace=True),
            nn.Conv2d(hidden[0], hidden[1], kernel_size=3, padding=1, bias=False),
            nn.BatchNorm2d(hidden[1]),
            nn.ReLU(inplace=True),
            nn.Conv2d(hidden[1], 1, kernel_size=1),
        )

    def forward(self, feats: Sequence[torch.Tensor], out_size: tuple[int, int]) -> torch.Tensor:
        if len(feats) != len(self.scale_channels):
            raise ValueError(f"expected {len(self.scale_channels)} scales, got {len(feats)}")
        for f, c in zip(feats, self.scale_channels):
            if f.shape[1] != c:
                raise ValueError(
                    f"scale channel mismatch: expected {self.scale_channels}, "
                    f"got {[int(t.shape[1]) for t in feats]}"
                )
        stacked = torch.cat(
            [
                F.interpolate(f, size=out_size, mode="bilinear", align_corners=False)
                for f in feats
            ],
            dim=1,
        )
        return torch.sigmoid(self.refine(stacked))

    def concat_channels(self, feats: Sequence[torch.Tensor], out_size: tuple[int, int]) -> int:
        """Channel count of the upsampled concatenation (for audits)."""
        return sum(int(f.shape[1]) for f in feats)


def _center_crop(x: torch.Tensor, size: tuple[int, int]) -> torch.Tensor:
    h, w = x.shape[-2:]
    th, tw = size
    if th > h or tw > w:
        raise ValueError(f"cannot crop {h}x{w} up to {th}x{tw}")
    top = (h - th) // 2
    left = (w - tw) // 2
    return x[..., top : top + th, left : left + tw]


def upsample_chain(start: tuple[int, int], final: tuple[int, int], steps: int = 4) -> list[tuple[int, int]]:
    """Target sizes for each transposed-convolution stage.

    Works backwards from the final half-resolution size by ceil-halving, so
    stage outputs (which exactly double) are center-cropped to the recorded
    targets whenever ceil-halving produced an odd intermediate size.
    """
    sizes = [final]
    for _ in range(steps - 1):
        h, w = sizes[-1]
        sizes.append(((h + 1) // 2, (w + 1) // 2))
    sizes.reverse()
    h, w = sizes[0]
    if ((h + 1) // 2, (w + 1) // 2) != start:
        raise ValueError(
            f"upsample chain from {start} cannot reach {final} in {steps} doublings"
        )
    return sizes


class MapHead(nn.Module):
    """Manipulation-map decoder: four stride-2 transposed convolutions.

    Each stage doubles the spatial size (kernel 4, stride 2, padding 1) and
    is center-cropped to the ceil-halving chain of the final target, so the
    head hits exactly half the input resolution even when intermediate sizes
    are odd.  Channels taper to 1 and a sigmoid bounds the map.
    """

    def __init__(self, in_channels: int, taper: tuple[int, int, int] = (256, 64, 16)):
        super().__init__()
        widths = (in_channels, *taper, 1)
        stages = []
        for i in range(4):
            block: list[nn.Module] = [
                nn.ConvTranspose2d(widths[i], widths[i + 1], kernel_size=4, stride=2, padding=1)
            ]
            if i < 3:
                block += [nn.BatchNorm2d(widths[i + 1]), nn.ReLU(inplace=True)]
            stages.append(nn.Sequential(*block))
        self.stages = nn.ModuleList(stages)

    def forward(self, x: torch.Tensor, final_size: tuple[int, int]) -> torch.Tensor:
        sizes = upsample_chain(tuple(x.shape[-2:]), final_size)  # type: ignore[arg-type]
        for stage, size in zip(self.stages, sizes):
            x = _center_crop(stage(x), size)
        return torch.sigmoid(x)


class ClassificationHead(nn.Module):
    """Authenticity classifier: conv reduction, global pool, 2-way softmax."""

    def __init__(self, in_channels: int, hidden: int = 256):
        super().__init__()
        self.reduce = nn.Sequential(
            nn.Conv2d(in_channels, hidden, kernel_size=3, padding=1, bias=False),
            nn.BatchNorm2d(hidden),
            nn.ReLU(inplace=True),
        )
        self.fc = nn.Linear(hidden, 2)

    def forward(self, x: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        pooled = self.reduce(x).mean(dim=(2, 3))
        logits = self.fc(pooled)
        prob = torch.softmax(logits, dim=1)[:, 1]
        return logits, prob
