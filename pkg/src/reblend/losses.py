"""Training objective: weighted pixel losses plus the classification loss.

The map and edge losses are per-pixel binary cross-entropy averaged over the
half-resolution target grid (W/2 * H/2 pixels per sample), with soft targets
in [0, 1] allowed.  The classification loss is standard two-class BCE on the
manipulated-class probability.  The total is

    L = lambda_map * L_map + lambda_edge * L_edge + L_cls

with default weights (50, 100).  Predictions are clamped to
[1e-7, 1 - 1e-7] before the log so exact 0/1 predictions stay finite.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch

from .errors import NumericError

EPS = 1e-7


@dataclass(frozen=True)
class LossWeights:
    map_weight: float = 50.0
    edge_weight: float = 100.0

    def __post_init__(self) -> None:
        if self.map_weight < 0 or self.edge_weight < 0:
            raise ValueError(
                f"loss weights must be non-negative, got ({self.map_weight}, {self.edge_weight})"
            )


@dataclass
class LossBreakdown:
    """Component losses as 0-dim tensors; ``total`` carries the graph."""

    map_loss: torch.Tensor
    edge_loss: torch.Tensor
    cls_loss: torch.Tensor
    total: torch.Tensor

    def scalars(self) -> dict[str, float]:
        return {
            "map": float(self.map_loss.detach()),
            "edge": float(self.edge_loss.detach()),
            "cls": float(self.cls_loss.detach()),
            "total": float(self.total.detach()),
        }

    def check_finite(self) -> None:
        for name, value in self.scalars().items():
            if value != value or value in (float("inf"), float("-inf")):
                raise NumericError(f"{name} loss is non-finite: {value}")


def _bce(pred: torch.Tensor, target: torch.Tensor) -> torch.Tensor:
    p = pred.clamp(EPS, 1.0 - EPS)
    return -(target * torch.log(p) + (1.0 - target) * torch.log(1.0 - p)).mean()


def _check_pixel_args(pred: torch.Tensor, target: torch.Tensor, name: str) -> None:
    if pred.shape != target.shape:
        raise ValueError(
            f"{name}: prediction shape {tuple(pred.shape)} != target shape {tuple(target.shape)}"
        )
    t_min, t_max = float(target.min()), float(target.max())
    if t_min < 0.0 or t_max > 1.0:
        raise ValueError(f"{name}: targets must lie in [0, 1], got range [{t_min}, {t_max}]")


def map_loss(pred: torch.Tensor, target: torch.Tensor) -> torch.Tensor:
    """Mean BCE between the predicted and target manipulation maps."""
    _check_pixel_args(pred, target, "map_loss")
    return _bce(pred, target)


def edge_loss(pred: torch.Tensor, target: torch.Tensor) -> torch.Tensor:
    """Mean BCE between the predicted and target blending-edge maps."""
    _check_pixel_args(pred, target, "edge_loss")
    return _bce(pred, target)


def cls_loss(prob: torch.Tensor, labels: torch.Tensor) -> torch.Tensor:
    """Two-class BCE on the manipulated-class probability."""
    if prob.shape != labels.shape:
        raise ValueError(
            f"cls_loss: prob shape {tuple(prob.shape)} != labels shape {tuple(labels.shape)}"
        )
    lab = labels.to(prob.dtype)
    if not bool(((lab == 0.0) | (lab == 1.0)).all()):
        raise ValueError("cls_loss: labels must be 0 or 1")
    return _bce(prob, lab)


def combine_losses(
    map_l: torch.Tensor,
    edge_l: torch.Tensor,
    cls_l: torch.Tensor,
    weights: LossWeights = LossWeights(),
) -> LossBreakdown:
    total = weights.map_weight * map_l + weights.edge_weight * edge_l + cls_l
    return LossBreakdown(map_loss=map_l, edge_loss=edge_l, cls_loss=cls_l, total=total)


def compute_losses(
    edge_pred: torch.Tensor,
    map_pred: torch.Tensor,
    prob: torch.Tensor,
    edge_target: torch.Tensor,
    map_target: torch.Tensor,
    labels: torch.Tensor,
    weights: LossWeights = LossWeights(),
) -> LossBreakdown:
    """All components on one batch, combined by the weighted sum."""
    return combine_losses(
        map_loss(map_pred, map_target),
        edge_loss(edge_pred, edge_target),
        cls_loss(prob, labels),
        weights,
    )
