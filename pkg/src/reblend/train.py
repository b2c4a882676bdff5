"""Training: sharpness-aware minimization over synthesized genuine/blended pairs.

Each optimizer step sees a batch of B genuine faces and the B blended
samples synthesized from them (batch size 2B).  The update rule is
sharpness-aware: gradients are computed at the weights, the weights are
perturbed by rho * g / ||g||_2 (global norm), gradients are recomputed at
the perturbed point, the perturbation is undone, and the base momentum-SGD
rule applies the second gradients.  Degenerate cases (rho == 0 or a zero
gradient norm) skip the perturbation cycle entirely and apply the base rule
to the first gradients, which makes the rho=0 configuration bit-identical
to plain SGD.  After every step the constrained high-pass kernel of the
noise extractor is re-projected.

Determinism: the synthesis/augmentation stream of a sample depends only on
(root seed, epoch, dataset index), and the epoch ordering only on
(root seed, epoch), so runs and resumed runs see identical batches.
"""

from __future__ import annotations

import json
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
import torch
from torch import nn

from .data import FaceRecord
from .errors import ConfigError, DataError, NumericError
from .losses import LossBreakdown, LossWeights, compute_losses
from .model.checkpoint import load_checkpoint, restore_model, save_checkpoint
from .model.network import BlendDetector, ModelConfig
from .rng import derive_seed, sample_stream, spawn
from .synth.adapters import ReconstructorAdapter
from .synth.pipeline import (
    AugmentConfig,
    BlendedSample,
    SynthConfig,
    generate_rbi,
    genuine_sample,
    train_time_augment,
)

logger = logging.getLogger(__name__)

__all__ = [
    "SAM",
    "TrainConfig",
    "TrainResult",
    "sam_step",
    "train_loop",
    "build_model",
    "make_pair",
    "samples_to_tensors",
    "disable_running_stats",
    "enable_running_stats",
]


class SAM(torch.optim.Optimizer):
    """Sharpness-aware wrapper around a base optimizer.

    ``perturb`` climbs to w + rho * g / ||g|| and remembers the offset;
    ``restore_and_step`` undoes the offset and applies the base rule to the
    gradients currently stored (the ones from the perturbed point).
    ``base_step`` applies the base rule directly, used for the rho == 0 and
    zero-gradient paths.
    """

    def __init__(self, params, base_optimizer: type[torch.optim.Optimizer], rho: float = 0.05, **kwargs):
        if rho < 0:
            raise ConfigError(f"rho must be >= 0, got {rho}")
        defaults = dict(rho=rho, **kwargs)
        super().__init__(params, defaults)
        self.base_optimizer = base_optimizer(self.param_groups, **kwargs)
        self.param_groups = self.base_optimizer.param_groups
        self.defaults.update(self.base_optimizer.defaults)

    @property
    def rho(self) -> float:
        return float(self.param_groups[0]["rho"])

    @torch.no_grad()
    def grad_norm(self) -> float:
        norms = [
            p.grad.norm(p=2)
            for group in self.param_groups
            for p in group["params"]
            if p.grad is not None
        ]
        if not norms:
            return 0.0
        return float(torch.norm(torch.stack(norms), p=2))

    @torch.no_grad()
    def perturb(self, grad_norm: float) -> None:
        if grad_norm <= 0:
            raise ValueError("perturb requires a positive gradient norm")
        for group in self.param_groups:
            scale = group["rho"] / grad_norm
            for p in group["params"]:
                if p.grad is None:
                    continue
                offset = p.grad * scale
                p.add_(offset)
                self.state[p]["sam_offset"] = offset

    @torch.no_grad()
    def restore(self) -> None:
        for group in self.param_groups:
            for p in group["params"]:
                offset = self.state[p].pop("sam_offset", None)
                if offset is not None:
                    p.sub_(offset)

    @torch.no_grad()
    def restore_and_step(self) -> None:
        self.restore()
        self.base_optimizer.step()

    @torch.no_grad()
    def base_step(self) -> None:
        self.base_optimizer.step()

    def step(self, closure=None):  # pragma: no cover - guard against misuse
        raise RuntimeError("drive this optimizer through sam_step(), not .step()")


def _set_bn_momentum(model: nn.Module, freeze: bool) -> None:
    for module in model.modules():
        if isinstance(module, nn.modules.batchnorm._BatchNorm):
            if freeze:
                module._saved_momentum = module.momentum
                module.momentum = 0.0
            elif hasattr(module, "_saved_momentum"):
                module.momentum = module._saved_momentum
                del module._saved_momentum


def disable_running_stats(model: nn.Module) -> None:
    """Freeze BN running statistics (used during the second SAM forward)."""
    _set_bn_momentum(model, freeze=True)


def enable_running_stats(model: nn.Module) -> None:
    _set_bn_momentum(model, freeze=False)


def sam_step(
    model: nn.Module,
    optimizer: SAM,
    closure: Callable[[], "LossBreakdown | torch.Tensor"],
) -> tuple["LossBreakdown | torch.Tensor", float]:
    """One sharpness-aware update; returns the first-pass loss and grad norm.

    ``closure`` must run the forward pass and return the loss (either a bare
    tensor or a LossBreakdown); backward is handled here.
    """
    optimizer.zero_grad(set_to_none=True)
    first = closure()
    total = first.total if isinstance(first, LossBreakdown) else first
    total.backward()
    grad_norm = optimizer.grad_norm()
    if optimizer.rho > 0.0 and grad_norm > 0.0:
        optimizer.perturb(grad_norm)
        optimizer.zero_grad(set_to_none=True)
        disable_running_stats(model)
        try:
            second = closure()
            second_total = second.total if isinstance(second, LossBreakdown) else second
            second_total.backward()
        finally:
            enable_running_stats(model)
        optimizer.restore_and_step()
    else:
        optimizer.base_step()
    return first, grad_norm


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 0.001
    momentum: float = 0.9
    weight_decay: float = 0.0
    batch_pairs: int = 16
    epochs: int = 80
    rho: float = 0.05
    weights: LossWeights = field(default_factory=LossWeights)
    steps_per_epoch: int | None = None
    val_every: int = 0
    checkpoint_every: int = 1

    def __post_init__(self) -> None:
        if self.batch_pairs < 1:
            raise ConfigError(f"batch_pairs must be >= 1, got {self.batch_pairs}")
        if self.epochs < 1:
            raise ConfigError(f"epochs must be >= 1, got {self.epochs}")
        if self.rho < 0:
            raise ConfigError(f"rho must be >= 0, got {self.rho}")

    @classmethod
    def from_mapping(cls, m: dict) -> "TrainConfig":
        return cls(
            lr=float(m["lr"]),
            momentum=float(m["momentum"]),
            weight_decay=float(m["weight_decay"]),
            batch_pairs=int(m["batch_pairs"]),
            epochs=int(m["epochs"]),
            rho=float(m["rho"]),
            weights=LossWeights(float(m["lambda_map"]), float(m["lambda_edge"])),
            steps_per_epoch=None if m["steps_per_epoch"] is None else int(m["steps_per_epoch"]),
            val_every=int(m["val_every"]),
            checkpoint_every=int(m["checkpoint_every"]),
        )


@dataclass
class TrainResult:
    model: BlendDetector
    history: list[dict]
    final_checkpoint: str | None


def build_model(model_cfg: ModelConfig, seed: int) -> BlendDetector:
    """Construct the detector with a deterministic initialization."""
    torch.manual_seed(derive_seed(seed, "model-init"))
    return BlendDetector(model_cfg)


def make_pair(
    face: FaceRecord,
    adapter: ReconstructorAdapter,
    rng: np.random.Generator,
    synth_cfg: SynthConfig,
    augment_cfg: AugmentConfig,
) -> tuple[BlendedSample, BlendedSample]:
    """One genuine sample and one blended sample from the same face.

    Draw order is fixed (synthesis, then genuine augmentation, then blended
    augmentation) so the stream is stable across runs.
    """
    blended = generate_rbi(face, adapter, rng, synth_cfg)
    genuine = genuine_sample(face)
    genuine.image, gen_log = train_time_augment(genuine.image, rng, augment_cfg)
    blended.image, fake_log = train_time_augment(blended.image, rng, augment_cfg)
    genuine.meta["augment"] = gen_log
    blended.meta["augment"] = fake_log
    return genuine, blended


def samples_to_tensors(
    samples: Sequence[BlendedSample],
) -> tuple[torch.Tensor, torch.Tensor, torch.Tensor, torch.Tensor]:
    images = torch.from_numpy(
        np.stack([s.image.transpose(2, 0, 1) for s in samples]).astype(np.float32)
    )
    masks = torch.from_numpy(
        np.stack([s.mask_target for s in samples]).astype(np.float32)
    ).unsqueeze(1)
    edges = torch.from_numpy(
        np.stack([s.edge_target for s in samples]).astype(np.float32)
    ).unsqueeze(1)
    labels = torch.tensor([float(s.label) for s in samples], dtype=torch.float32)
    return images, masks, edges, labels


def _dump_nan_diagnostics(
    out_dir: Path, epoch: int, step: int, indices: list[int], seed: int, scalars: dict
) -> Path:
    path = out_dir / "nan_diagnostics.json"
    payload = {
        "epoch": epoch,
        "step": step,
        "dataset_indices": indices,
        "root_seed": seed,
        "losses": scalars,
        "hint": "regenerate the batch with sample_stream(root_seed, epoch, index)",
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=1, sort_keys=True)
    return path


def train_loop(
    model: BlendDetector,
    faces: Sequence[FaceRecord],
    cfg: TrainConfig,
    out_dir: str | Path,
    *,
    adapter: ReconstructorAdapter,
    synth_cfg: SynthConfig,
    augment_cfg: AugmentConfig,
    seed: int,
    config_fingerprint: str = "",
    resume_from: str | Path | None = None,
    val_fn: Callable[[BlendDetector, int], dict] | None = None,
) -> TrainResult:
    """Run the full training schedule; returns the trained model and history.

    ``faces`` must be genuine crops (blended counterparts are synthesized on
    the fly).  A checkpoint written every ``checkpoint_every`` epochs carries
    optimizer and RNG state; ``resume_from`` continues a run so that the
    remaining steps reproduce an uninterrupted run's loss trace exactly.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    genuine = [f for f in faces if f.label == "genuine"]
    skipped = len(faces) - len(genuine)
    if skipped:
        logger.info("ignoring %d non-genuine faces in the training pool", skipped)
    if not genuine:
        raise DataError("training requires at least one genuine face")

    optimizer = SAM(
        model.parameters(),
        torch.optim.SGD,
        rho=cfg.rho,
        lr=cfg.lr,
        momentum=cfg.momentum,
        weight_decay=cfg.weight_decay,
    )

    start_epoch = 0
    global_step = 0
    if resume_from is not None:
        payload = load_checkpoint(
            resume_from,
            expected_fingerprint=config_fingerprint or None,
        )
        model.load_state_dict(payload["model_state"])
        if payload["optimizer_state"] is not None:
            optimizer.load_state_dict(payload["optimizer_state"])
        torch.set_rng_state(payload["torch_rng_state"])
        start_epoch = int(payload["epoch"]) + 1
        global_step = int(payload["step"])
        logger.info("resumed from %s at epoch %d, step %d", resume_from, start_epoch, global_step)

    history: list[dict] = []
    log_path = out / "train_log.jsonl"
    log_fh = open(log_path, "a", encoding="utf-8")
    final_path: str | None = None
    try:
        model.train()
        for epoch in range(start_epoch, cfg.epochs):
            order = spawn(seed, "epoch-order", epoch).permutation(len(genuine))
            epoch_start = time.monotonic()
            steps_done = 0
            for batch_start in range(0, len(order), cfg.batch_pairs):
                if cfg.steps_per_epoch is not None and steps_done >= cfg.steps_per_epoch:
                    break
                indices = [int(i) for i in order[batch_start : batch_start + cfg.batch_pairs]]
                samples: list[BlendedSample] = []
                for idx in indices:
                    rng = sample_stream(seed, epoch, idx)
                    gen, fake = make_pair(genuine[idx], adapter, rng, synth_cfg, augment_cfg)
                    samples.extend((gen, fake))
                images, masks, edges, labels = samples_to_tensors(samples)

                def closure() -> LossBreakdown:
                    output = model(images)
                    return compute_losses(
                        output.edge, output.map, output.prob, edges, masks, labels, cfg.weights
                    )

                breakdown, grad_norm = sam_step(model, optimizer, closure)
                model.project_constraints()
                scalars = breakdown.scalars()  # type: ignore[union-attr]
                try:
                    breakdown.check_finite()  # type: ignore[union-attr]
                except NumericError:
                    dump = _dump_nan_diagnostics(out, epoch, global_step, indices, seed, scalars)
                    raise NumericError(
                        f"non-finite loss at epoch {epoch} step {global_step}; "
                        f"offending batch recorded in {dump}"
                    ) from None
                record = {
                    "epoch": epoch,
                    "step": global_step,
                    "grad_norm": grad_norm,
                    **scalars,
                }
                history.append(record)
                log_fh.write(json.dumps(record, sort_keys=True) + "\n")
                global_step += 1
                steps_done += 1
            log_fh.flush()
            logger.info(
                "epoch %d: %d steps in %.1fs (last total loss %.4f)",
                epoch, steps_done, time.monotonic() - epoch_start,
                history[-1]["total"] if history else float("nan"),
            )
            if val_fn is not None and cfg.val_every > 0 and (epoch + 1) % cfg.val_every == 0:
                model.eval()
                val_record = {"epoch": epoch, "step": global_step, **val_fn(model, epoch)}
                model.train()
                history.append(val_record)
                log_fh.write(json.dumps(val_record, sort_keys=True) + "\n")
                log_fh.flush()
            if (epoch + 1) % cfg.checkpoint_every == 0 or epoch == cfg.epochs - 1:
                ckpt = out / f"checkpoint_ep{epoch:03d}.pt"
                save_checkpoint(
                    ckpt, model, optimizer,
                    epoch=epoch, step=global_step,
                    config_fingerprint=config_fingerprint,
                )
                final_path = str(ckpt)
    finally:
        log_fh.close()
    if final_path is not None:
        final = out / "checkpoint_final.pt"
        save_checkpoint(
            final, model, optimizer,
            epoch=cfg.epochs - 1, step=global_step,
            config_fingerprint=config_fingerprint,
        )
        final_path = str(final)
    model.eval()
    return TrainResult(model=model, history=history, final_checkpoint=final_path)


def resume_model(checkpoint_path: str | Path) -> BlendDetector:
    """Load a detector from a checkpoint for evaluation or visualization."""
    payload = load_checkpoint(checkpoint_path)
    model = restore_model(payload)
    model.eval()
    return model
