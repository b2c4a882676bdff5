"""Command line interface.

Subcommands: ``config show``, ``synth``, ``train``, ``eval``, ``sweep``,
``visualize``.  Every run resolves the layered configuration (defaults,
preset, file, ``--set`` overrides, ``--seed``), writes the resolved YAML and
its fingerprint into the output directory, and derives all randomness from
the single root seed.

Exit codes: 0 success, 2 configuration error, 3 data error, 4 numeric
failure, 5 partial success (some inputs skipped; see errors.json).
"""

from __future__ import annotations

import functools
import json
import logging
from pathlib import Path

import click
import numpy as np

from . import __version__
from .config import PRESETS, RunConfig, parse_override, resolve_config
from .data import (
    CropCache,
    FaceRecord,
    build_manifest,
    load_face,
    load_manifest,
    load_roster,
)
from .errors import ConfigError, DataError, PartialFailure, ToolkitError
from .evaluation import (
    evaluate_table,
    frame_level_eval,
    lambda_sweep,
    make_scorer,
    video_level_eval,
)
from .model.network import ModelConfig
from .rng import derive_seed, spawn
from .synth.adapters import (
    ConvAutoencoderAdapter,
    ExternalAdapter,
    IdentityAdapter,
    ReconstructorAdapter,
    train_toy_autoencoder,
)
from .synth.pipeline import AugmentConfig, SynthConfig, generate_rbi, genuine_sample
from .synth.shards import write_shards
from .train import TrainConfig, build_model, resume_model, train_loop
from .viz import visualize_predictions

logger = logging.getLogger(__name__)


def common_options(fn):
    fn = click.option("--seed", type=int, default=None, help="Root seed (overrides config).")(fn)
    fn = click.option(
        "--preset", type=click.Choice(sorted(PRESETS)), default=None,
        help="Named preset applied before the config file.",
    )(fn)
    fn = click.option(
        "--set", "sets", multiple=True, metavar="KEY=VALUE",
        help="Override one config key (repeatable); values are YAML-parsed.",
    )(fn)
    fn = click.option(
        "--config", "config_path", type=click.Path(), default=None,
        help="YAML config file layered over the defaults.",
    )(fn)
    return fn


def guard(fn):
    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except ToolkitError as exc:
            click.echo(f"error: {exc}", err=True)
            raise SystemExit(exc.exit_code) from exc
        except FloatingPointError as exc:
            click.echo(f"numeric failure: {exc}", err=True)
            raise SystemExit(4) from exc

    return wrapper


def _resolve(config_path, sets, preset, seed) -> RunConfig:
    overrides = dict(parse_override(item) for item in sets)
    return resolve_config(config_path, preset=preset, overrides=overrides, seed=seed)


def _write_run_config(cfg: RunConfig, out_dir: Path) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    with open(out_dir / "config.yaml", "w", encoding="utf-8") as fh:
        fh.write(cfg.to_yaml())
    with open(out_dir / "config.fingerprint", "w", encoding="utf-8") as fh:
        fh.write(cfg.fingerprint() + "\n")
    click.echo(f"config fingerprint: {cfg.fingerprint()}")


def _cache(cfg: RunConfig) -> CropCache | None:
    root = cfg.cache_root()
    return CropCache(root) if root else None


def _load_crops(rows, cfg: RunConfig, crop_size: int) -> list[FaceRecord]:
    cache = _cache(cfg)
    margin = float(cfg.get("data.crop_margin"))
    return [load_face(row, crop_size, margin, cache) for row in rows]


def _make_adapter(
    cfg: RunConfig,
    crop_size: int,
    train_faces: list[FaceRecord],
    out_dir: Path,
    adapter_file: str | None = None,
) -> ReconstructorAdapter:
    kind = cfg.get("synth.reconstructor")
    if kind == "identity":
        return IdentityAdapter((crop_size, crop_size, 3))
    if kind == "external":
        path = cfg.get("synth.external_model")
        if not path:
            raise ConfigError("synth.reconstructor=external requires synth.external_model")
        return ExternalAdapter(path)
    if kind == "toy_autoencoder":
        if adapter_file and Path(adapter_file).exists():
            return ConvAutoencoderAdapter.load(adapter_file)
        if not train_faces:
            raise DataError("training the toy autoencoder requires genuine faces")
        ae_cfg = cfg.section("synth.autoencoder")
        if int(ae_cfg["image_size"]) != crop_size:
            raise ConfigError(
                f"synth.autoencoder.image_size ({ae_cfg['image_size']}) must match the "
                f"crop size in use ({crop_size})"
            )
        adapter = train_toy_autoencoder(
            [f.image for f in train_faces[:256]],
            image_size=crop_size,
            latent_dim=int(ae_cfg["latent_dim"]),
            epochs=int(ae_cfg["epochs"]),
            lr=float(ae_cfg["lr"]),
            batch_size=int(ae_cfg["batch_size"]),
            seed=cfg.seed,
        )
        adapter.save(out_dir / "adapter.pt")
        return adapter
    raise ConfigError(f"unknown reconstructor {kind!r}")


@click.group()
@click.version_option(version=__version__, prog_name="reblend")
def main() -> None:
    """Blended-forgery synthesis and detection toolkit."""
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")


@main.group()
def config() -> None:
    """Inspect the layered configuration."""


@config.command("show")
@common_options
@guard
def config_show(config_path, sets, preset, seed) -> None:
    """Print every key with its value and what it controls."""
    cfg = _resolve(config_path, sets, preset, seed)
    click.echo(cfg.describe(), nl=False)
    click.echo(f"# fingerprint: {cfg.fingerprint()}")


@main.command()
@click.option("--manifest", "manifest_path", required=True, type=click.Path())
@click.option("--out", "out_dir", required=True, type=click.Path())
@click.option("--adapter-file", type=click.Path(), default=None,
              help="Serialized toy autoencoder to reuse instead of retraining.")
@common_options
@guard
def synth(manifest_path, out_dir, adapter_file, config_path, sets, preset, seed) -> None:
    """Synthesize genuine/blended sample shards from a manifest."""
    cfg = _resolve(config_path, sets, preset, seed)
    out = Path(out_dir)
    _write_run_config(cfg, out)
    rows = load_manifest(manifest_path)
    genuine_rows = [r for r in rows if r.label == "genuine"]
    if not genuine_rows:
        raise DataError(
            f"manifest {manifest_path} contains no genuine records; nothing to synthesize"
        )
    crop_size = int(cfg.get("data.crop_size"))
    synth_cfg = SynthConfig.from_mapping(cfg.section("synth"))
    faces = _load_crops(genuine_rows, cfg, crop_size)
    adapter = _make_adapter(cfg, crop_size, faces, out, adapter_file)

    samples = []
    failures: list[str] = []
    for i, face in enumerate(faces):
        rng = spawn(cfg.seed, "synth", i)
        try:
            blended = generate_rbi(face, adapter, rng, synth_cfg)
            samples.append(genuine_sample(face))
            samples.append(blended)
        except ToolkitError as exc:
            failures.append(f"{face.video_id}:{face.frame_idx}: {exc}")
    if not samples:
        raise DataError("every record failed synthesis; no shards written")
    ids = write_shards(samples, out)
    click.echo(f"wrote {len(ids)} samples ({len(ids) // 2} pairs) to {out}")
    if failures:
        with open(out / "errors.json", "w", encoding="utf-8") as fh:
            json.dump({"failures": failures}, fh, indent=1, sort_keys=True)
        raise PartialFailure(
            f"{len(failures)} of {len(faces)} records failed; see {out / 'errors.json'}",
            failures,
        )


def _train_manifest_rows(corpus, manifest, cfg, split: str):
    if manifest:
        rows = load_manifest(manifest)
    elif corpus:
        rows = build_manifest(corpus, frames_per_video=int(cfg.get("data.train_frames_per_video")))
    else:
        raise ConfigError("provide --corpus or --manifest")
    return [r for r in rows if r.split == split]


@main.command()
@click.option("--corpus", type=click.Path(), default=None, help="Corpus root directory.")
@click.option("--manifest", type=click.Path(), default=None, help="Prebuilt manifest CSV.")
@click.option("--out", "out_dir", required=True, type=click.Path())
@click.option("--resume", "resume_ckpt", type=click.Path(), default=None,
              help="Checkpoint to continue from.")
@click.option("--adapter-file", type=click.Path(), default=None)
@common_options
@guard
def train(corpus, manifest, out_dir, resume_ckpt, adapter_file,
          config_path, sets, preset, seed) -> None:
    """Train the detector on genuine faces plus synthesized blends."""
    cfg = _resolve(config_path, sets, preset, seed)
    out = Path(out_dir)
    _write_run_config(cfg, out)
    rows = _train_manifest_rows(corpus, manifest, cfg, "train")
    genuine_rows = [r for r in rows if r.label == "genuine"]
    if not genuine_rows:
        raise DataError("the train split contains no genuine faces")
    model_cfg = ModelConfig.from_mapping(cfg.section("model"))
    crop_size = model_cfg.input_size
    if crop_size != int(cfg.get("data.crop_size")):
        logger.warning(
            "data.crop_size (%s) != model.input_size (%s); using the model input size",
            cfg.get("data.crop_size"), crop_size,
        )
    faces = _load_crops(genuine_rows, cfg, crop_size)
    adapter = _make_adapter(cfg, crop_size, faces, out, adapter_file)
    train_cfg = TrainConfig.from_mapping(cfg.section("train"))
    model = build_model(model_cfg, cfg.seed)
    result = train_loop(
        model, faces, train_cfg, out,
        adapter=adapter,
        synth_cfg=SynthConfig.from_mapping(cfg.section("synth")),
        augment_cfg=AugmentConfig.from_mapping(cfg.section("augment")),
        seed=cfg.seed,
        config_fingerprint=cfg.fingerprint(),
        resume_from=resume_ckpt,
    )
    last = result.history[-1] if result.history else {}
    click.echo(f"finished {train_cfg.epochs} epochs; last losses: "
               f"total={last.get('total', float('nan')):.4f}")
    click.echo(f"final checkpoint: {result.final_checkpoint}")


@main.command("eval")
@click.option("--checkpoint", required=True, type=click.Path())
@click.option("--corpus", required=True, type=click.Path())
@click.option("--split", default="test", type=click.Choice(["train", "val", "test"]))
@click.option("--protocol", default="frame", type=click.Choice(["frame", "video"]))
@click.option("--out", "out_dir", required=True, type=click.Path())
@common_options
@guard
def eval_cmd(checkpoint, corpus, split, protocol, out_dir,
             config_path, sets, preset, seed) -> None:
    """Score a corpus split and report per-cell AUC."""
    cfg = _resolve(config_path, sets, preset, seed)
    out = Path(out_dir)
    _write_run_config(cfg, out)
    model = resume_model(checkpoint)
    crop_size = model.config.input_size
    roster = {
        vid: entry for vid, entry in load_roster(corpus).items() if entry.split == split
    }
    if not roster:
        raise DataError(f"corpus {corpus} has no videos in split {split!r}")
    rows = [r for r in build_manifest(corpus, frames_per_video=None, splits=(split,))]
    scorer = make_scorer(model, batch_size=int(cfg.get("eval.batch_size")))
    kwargs = dict(
        crop_size=crop_size,
        margin=float(cfg.get("data.crop_margin")),
        cache=_cache(cfg),
    )
    if protocol == "frame":
        frames = int(cfg.get("eval.frame_frames"))
        table, notes = frame_level_eval(scorer, roster, rows, frames_per_video=frames, **kwargs)
    else:
        frames = int(cfg.get("eval.video_frames"))
        table, notes = video_level_eval(
            scorer, roster, rows, frames_per_video=frames,
            fallback_score=float(cfg.get("eval.fallback_score")), **kwargs,
        )
    report = evaluate_table(
        table, protocol=protocol, frames_per_video=frames, notes=notes,
        seed=cfg.seed, config_fingerprint=cfg.fingerprint(),
    )
    report.write(out, table)
    for cell in sorted(report.cells):
        value = report.cells[cell]
        click.echo(f"{cell}: {'undefined' if value is None else f'{value:.4f}'}")
    click.echo(f"report written to {out / 'report.json'}")


def _parse_grid(text: str) -> list[tuple[float, float]]:
    cells = []
    for chunk in text.split(","):
        parts = chunk.strip().split(":")
        if len(parts) != 2:
            raise ConfigError(f"grid cell {chunk!r} is not of the form MAP:EDGE")
        cells.append((float(parts[0]), float(parts[1])))
    return cells


@main.command()
@click.option("--corpus", required=True, type=click.Path())
@click.option("--out", "out_dir", required=True, type=click.Path())
@click.option("--grid", "grid_text", default=None,
              help="Comma-separated MAP:EDGE cells, e.g. '25:25,50:100'.")
@click.option("--adapter-file", type=click.Path(), default=None)
@common_options
@guard
def sweep(corpus, out_dir, grid_text, adapter_file, config_path, sets, preset, seed) -> None:
    """Train one short run per loss-weight cell and rank the cells by AUC."""
    cfg = _resolve(config_path, sets, preset, seed)
    out = Path(out_dir)
    _write_run_config(cfg, out)
    grid = _parse_grid(grid_text) if grid_text else [
        (float(a), float(b)) for a, b in cfg.get("sweep.grid")
    ]
    rows = build_manifest(corpus, frames_per_video=int(cfg.get("data.train_frames_per_video")))
    train_rows = [r for r in rows if r.split == "train" and r.label == "genuine"]
    val_rows = [r for r in rows if r.split == "val" and r.label == "genuine"]
    if not train_rows or not val_rows:
        raise DataError("the sweep needs genuine faces in both train and val splits")
    model_cfg = ModelConfig.from_mapping(cfg.section("model"))
    crop_size = model_cfg.input_size
    faces_train = _load_crops(train_rows, cfg, crop_size)
    faces_val = _load_crops(val_rows, cfg, crop_size)
    adapter = _make_adapter(cfg, crop_size, faces_train, out, adapter_file)
    synth_cfg = SynthConfig.from_mapping(cfg.section("synth"))

    eval_images, eval_labels = [], []
    for i, face in enumerate(faces_val):
        eval_images.append(face.image)
        eval_labels.append(0)
        rng = spawn(cfg.seed, "sweep-eval", i)
        eval_images.append(generate_rbi(face, adapter, rng, synth_cfg).image)
        eval_labels.append(1)

    base_train = TrainConfig.from_mapping(cfg.section("train"))
    from dataclasses import replace

    sweep_train = replace(
        base_train,
        epochs=int(cfg.get("sweep.epochs")),
        steps_per_epoch=int(cfg.get("sweep.steps_per_epoch")),
    )
    report = lambda_sweep(
        grid, faces_train, np.stack(eval_images), np.array(eval_labels),
        model_cfg=model_cfg, train_cfg=sweep_train, adapter=adapter,
        synth_cfg=synth_cfg, augment_cfg=AugmentConfig.from_mapping(cfg.section("augment")),
        seed=cfg.seed, out_dir=out, batch_size=int(cfg.get("eval.batch_size")),
    )
    for cell in report.cells:
        auc_text = "failed" if cell["auc"] is None else f"{cell['auc']:.4f}"
        click.echo(f"map={cell['lambda_map']:g} edge={cell['lambda_edge']:g}: {auc_text}")
    if report.best is None:
        raise PartialFailure("every sweep cell failed; see sweep.json")
    click.echo(
        f"best cell: map={report.best['lambda_map']:g} edge={report.best['lambda_edge']:g} "
        f"(auc={report.best['auc']:.4f})"
    )


@main.command()
@click.option("--checkpoint", required=True, type=click.Path())
@click.option("--corpus", type=click.Path(), default=None)
@click.option("--manifest", type=click.Path(), default=None)
@click.option("--split", default="test", type=click.Choice(["train", "val", "test"]))
@click.option("--limit", default=8, type=int, help="Number of faces to render.")
@click.option("--out", "out_dir", required=True, type=click.Path())
@common_options
@guard
def visualize(checkpoint, corpus, manifest, split, limit, out_dir,
              config_path, sets, preset, seed) -> None:
    """Write [input | edge | map] panels with the class score for some faces."""
    cfg = _resolve(config_path, sets, preset, seed)
    out = Path(out_dir)
    _write_run_config(cfg, out)
    model = resume_model(checkpoint)
    if manifest:
        rows = [r for r in load_manifest(manifest) if r.split == split]
    elif corpus:
        rows = build_manifest(corpus, frames_per_video=None, splits=(split,))
    else:
        raise ConfigError("provide --corpus or --manifest")
    if not rows:
        raise DataError(f"no rows in split {split!r}")
    picks = np.round(np.linspace(0, len(rows) - 1, min(limit, len(rows)))).astype(int)
    chosen = [rows[int(i)] for i in dict.fromkeys(picks)]
    faces = _load_crops(chosen, cfg, model.config.input_size)
    paths = visualize_predictions(
        model,
        [f.image for f in faces],
        out,
        names=[f"{f.video_id}_{f.frame_idx:06d}" for f in faces],
        labels=[1 if f.label == "fake" else 0 for f in faces],
    )
    click.echo(f"wrote {len(paths)} panels to {out}")


if __name__ == "__main__":
    main()
