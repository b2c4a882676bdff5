"""Evaluation: AUC, frame/video scoring protocols, and the weight sweep.

AUC uses the rank statistic with midranks for ties, which equals the
probability that a random positive outscores a random negative (ties count
half) and is invariant under strictly monotone score transforms.

Protocols:
  * frame-level: a fixed number of evenly sampled faces per video (default
    5), each scored individually;
  * video-level: up to 32 evenly sampled faces per video, the video score is
    the mean of the scores that could be computed; videos where no face was
    ever extracted receive the fallback score 0.5 so every roster video is
    represented.
"""

from __future__ import annotations

import csv
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Mapping, Sequence

import numpy as np
from scipy.stats import rankdata

from .data import CropCache, FaceRecord, ManifestRow, VideoEntry, load_face, sample_frames
from .errors import ConfigError, DataError, MetricUndefinedError, NumericError
from .losses import LossWeights
from .rng import derive_seed

logger = logging.getLogger(__name__)

Scorer = Callable[[np.ndarray], np.ndarray]

__all__ = [
    "auc",
    "ScoreRow",
    "ScoreTable",
    "EvalReport",
    "SweepReport",
    "make_scorer",
    "frame_level_eval",
    "video_level_eval",
    "evaluate_table",
    "lambda_sweep",
]


def auc(scores: np.ndarray, labels: np.ndarray) -> float:
    """Area under the ROC curve via the midrank statistic.

    Equals (#correctly ordered pairs + 0.5 * #tied pairs) / (P * N).  Inputs
    with a single class raise MetricUndefinedError; non-finite scores raise
    NumericError.
    """
    s = np.asarray(scores, dtype=np.float64).reshape(-1)
    y = np.asarray(labels).reshape(-1)
    if s.shape != y.shape:
        raise ValueError(f"scores shape {s.shape} != labels shape {y.shape}")
    if s.size == 0:
        raise MetricUndefinedError("AUC is undefined on empty input")
    if not np.all(np.isfinite(s)):
        raise NumericError("AUC input contains non-finite scores")
    if not np.all((y == 0) | (y == 1)):
        raise ValueError("labels must be 0 or 1")
    pos = int(np.sum(y == 1))
    neg = int(np.sum(y == 0))
    if pos == 0 or neg == 0:
        raise MetricUndefinedError(
            f"AUC is undefined with {pos} positives and {neg} negatives"
        )
    ranks = rankdata(s, method="average")
    u = float(ranks[y == 1].sum()) - pos * (pos + 1) / 2.0
    return u / (pos * neg)


@dataclass
class ScoreRow:
    unit_id: str
    granularity: str  # "frame" | "video"
    score: float
    label: int
    dataset: str = "unknown"
    manipulation: str = "none"
    note: str = ""


@dataclass
class ScoreTable:
    rows: list[ScoreRow] = field(default_factory=list)

    def append(self, row: ScoreRow) -> None:
        if any(r.unit_id == row.unit_id and r.granularity == row.granularity for r in self.rows):
            raise DataError(f"duplicate score row for {row.granularity} {row.unit_id!r}")
        self.rows.append(row)

    def extend(self, rows: Sequence[ScoreRow]) -> None:
        for row in rows:
            self.append(row)

    def scores_labels(self) -> tuple[np.ndarray, np.ndarray]:
        return (
            np.array([r.score for r in self.rows], dtype=np.float64),
            np.array([r.label for r in self.rows], dtype=np.int64),
        )

    def write_csv(self, path: str | Path) -> None:
        with open(path, "w", encoding="utf-8", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["unit_id", "granularity", "score", "label", "dataset", "manipulation", "note"])
            for r in self.rows:
                writer.writerow(
                    [r.unit_id, r.granularity, repr(r.score), r.label, r.dataset, r.manipulation, r.note]
                )


@dataclass
class EvalReport:
    protocol: str
    frames_per_video: int
    cells: dict[str, float | None]
    cell_counts: dict[str, tuple[int, int]]
    notes: list[str]
    seed: int = 0
    config_fingerprint: str = ""

    def to_json(self) -> str:
        payload = {
            "protocol": self.protocol,
            "frames_per_video": self.frames_per_video,
            "cells": self.cells,
            "cell_counts": {k: list(v) for k, v in self.cell_counts.items()},
            "notes": self.notes,
            "seed": self.seed,
            "config_fingerprint": self.config_fingerprint,
        }
        return json.dumps(payload, indent=1, sort_keys=True) + "\n"

    def write(self, out_dir: str | Path, table: ScoreTable | None = None) -> None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        with open(out / "report.json", "w", encoding="utf-8") as fh:
            fh.write(self.to_json())
        with open(out / "report.csv", "w", encoding="utf-8", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["cell", "auc", "n_genuine", "n_fake"])
            for cell in sorted(self.cells):
                n_gen, n_fake = self.cell_counts.get(cell, (0, 0))
                value = self.cells[cell]
                writer.writerow([cell, "undefined" if value is None else repr(value), n_gen, n_fake])
        if table is not None:
            table.write_csv(out / "scores.csv")


def make_scorer(model, batch_size: int = 16) -> Scorer:
    """Wrap a detector into a numpy batch scorer (eval mode, no gradients)."""
    import torch

    model.eval()

    def scorer(images: np.ndarray) -> np.ndarray:
        arr = np.asarray(images, dtype=np.float32)
        if arr.ndim == 3:
            arr = arr[None]
        if arr.ndim != 4 or arr.shape[-1] != 3:
            raise ValueError(f"scorer expects N x H x W x 3 images, got shape {arr.shape}")
        out = np.empty(len(arr), dtype=np.float64)
        with torch.no_grad():
            for start in range(0, len(arr), batch_size):
                chunk = arr[start : start + batch_size].transpose(0, 3, 1, 2)
                probs = model(torch.from_numpy(np.ascontiguousarray(chunk))).prob
                out[start : start + len(chunk)] = probs.numpy()
        return out

    return scorer


def _rows_by_video(rows: Sequence[ManifestRow]) -> dict[str, list[ManifestRow]]:
    grouped: dict[str, list[ManifestRow]] = {}
    for row in rows:
        grouped.setdefault(row.video_id, []).append(row)
    for vid in grouped:
        grouped[vid].sort(key=lambda r: r.frame_idx)
    return grouped


def _label_int(label: str) -> int:
    return 1 if label == "fake" else 0


def _load_crops(
    rows: Sequence[ManifestRow], crop_size: int, margin: float, cache: CropCache | None
) -> tuple[list[FaceRecord], list[ManifestRow], list[str]]:
    faces: list[FaceRecord] = []
    kept: list[ManifestRow] = []
    failures: list[str] = []
    for row in rows:
        try:
            faces.append(load_face(row, crop_size, margin, cache))
            kept.append(row)
        except DataError as exc:
            failures.append(f"{row.video_id}:{row.frame_idx}: {exc}")
    return faces, kept, failures


def frame_level_eval(
    scorer: Scorer,
    roster: Mapping[str, VideoEntry],
    rows: Sequence[ManifestRow],
    *,
    frames_per_video: int = 5,
    crop_size: int = 380,
    margin: float = 0.125,
    cache: CropCache | None = None,
) -> tuple[ScoreTable, list[str]]:
    """Score evenly sampled faces per video, one table row per face."""
    grouped = _rows_by_video(rows)
    table = ScoreTable()
    notes: list[str] = []
    for video_id in sorted(roster):
        entry = roster[video_id]
        available = grouped.get(video_id, [])
        if not available:
            notes.append(f"{video_id}: no extractable faces; contributes no frame scores")
            continue
        picks = sample_frames(len(available), min(frames_per_video, len(available)))
        chosen = [available[int(i)] for i in picks]
        faces, kept, failures = _load_crops(chosen, crop_size, margin, cache)
        notes.extend(failures)
        if not faces:
            notes.append(f"{video_id}: every sampled frame failed to load")
            continue
        scores = scorer(np.stack([f.image for f in faces]))
        for row, score in zip(kept, scores):
            table.append(
                ScoreRow(
                    unit_id=f"{video_id}:{row.frame_idx}",
                    granularity="frame",
                    score=float(score),
                    label=_label_int(entry.label),
                    dataset=entry.dataset,
                    manipulation=entry.manipulation,
                )
            )
    return table, notes


def video_level_eval(
    scorer: Scorer,
    roster: Mapping[str, VideoEntry],
    rows: Sequence[ManifestRow],
    *,
    frames_per_video: int = 32,
    fallback_score: float = 0.5,
    crop_size: int = 380,
    margin: float = 0.125,
    cache: CropCache | None = None,
) -> tuple[ScoreTable, list[str]]:
    """One score per roster video: mean over available frame scores.

    Videos with no usable face anywhere receive ``fallback_score`` so they
    still count against the metric instead of silently dropping out.
    """
    grouped = _rows_by_video(rows)
    table = ScoreTable()
    notes: list[str] = []
    for video_id in sorted(roster):
        entry = roster[video_id]
        available = grouped.get(video_id, [])
        note = ""
        if available:
            picks = sample_frames(len(available), min(frames_per_video, len(available)))
            chosen = [available[int(i)] for i in picks]
            faces, _, failures = _load_crops(chosen, crop_size, margin, cache)
            notes.extend(failures)
            if faces:
                scores = scorer(np.stack([f.image for f in faces]))
                video_score = float(np.mean(scores))
                if len(faces) < len(chosen):
                    note = f"mean over {len(faces)}/{len(chosen)} frames"
            else:
                video_score = float(fallback_score)
                note = "fallback: sampled frames unusable"
                notes.append(f"{video_id}: {note}")
        else:
            video_score = float(fallback_score)
            note = "fallback: no faces extracted"
            notes.append(f"{video_id}: {note}")
        table.append(
            ScoreRow(
                unit_id=video_id,
                granularity="video",
                score=video_score,
                label=_label_int(entry.label),
                dataset=entry.dataset,
                manipulation=entry.manipulation,
                note=note,
            )
        )
    return table, notes


def evaluate_table(
    table: ScoreTable,
    *,
    protocol: str,
    frames_per_video: int,
    notes: Sequence[str] = (),
    seed: int = 0,
    config_fingerprint: str = "",
) -> EvalReport:
    """Per-(dataset, manipulation) AUC cells plus pooled rows.

    Each manipulation cell compares that dataset's genuine scores against the
    fakes carrying the manipulation tag; ``<dataset>/all`` pools every fake
    of the dataset, and ``pooled`` spans everything.  Cells missing a class
    are reported as undefined rather than erroring the whole report.
    """
    cells: dict[str, float | None] = {}
    counts: dict[str, tuple[int, int]] = {}
    all_notes = list(notes)

    def _cell(name: str, rows: list[ScoreRow]) -> None:
        scores = np.array([r.score for r in rows], dtype=np.float64)
        labels = np.array([r.label for r in rows], dtype=np.int64)
        counts[name] = (int(np.sum(labels == 0)), int(np.sum(labels == 1)))
        try:
            cells[name] = auc(scores, labels)
        except MetricUndefinedError as exc:
            cells[name] = None
            all_notes.append(f"{name}: {exc}")

    datasets = sorted({r.dataset for r in table.rows})
    for dataset in datasets:
        d_rows = [r for r in table.rows if r.dataset == dataset]
        genuine = [r for r in d_rows if r.label == 0]
        manipulations = sorted({r.manipulation for r in d_rows if r.label == 1})
        for manipulation in manipulations:
            fakes = [r for r in d_rows if r.label == 1 and r.manipulation == manipulation]
            _cell(f"{dataset}/{manipulation}", genuine + fakes)
        if len(manipulations) != 1:
            _cell(f"{dataset}/all", d_rows)
    if len(datasets) != 1:
        _cell("pooled", list(table.rows))
    return EvalReport(
        protocol=protocol,
        frames_per_video=frames_per_video,
        cells=cells,
        cell_counts=counts,
        notes=all_notes,
        seed=seed,
        config_fingerprint=config_fingerprint,
    )


@dataclass
class SweepReport:
    """Outcome of the loss-weight sweep: one entry per grid cell."""

    cells: list[dict]
    best: dict | None

    def write(self, out_dir: str | Path) -> None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        with open(out / "sweep.json", "w", encoding="utf-8") as fh:
            json.dump({"cells": self.cells, "best": self.best}, fh, indent=1, sort_keys=True)
            fh.write("\n")
        with open(out / "sweep.csv", "w", encoding="utf-8", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["lambda_map", "lambda_edge", "auc", "status"])
            for cell in self.cells:
                writer.writerow(
                    [
                        cell["lambda_map"],
                        cell["lambda_edge"],
                        "" if cell.get("auc") is None else repr(cell["auc"]),
                        cell["status"],
                    ]
                )


def lambda_sweep(
    grid: Sequence[tuple[float, float]],
    faces_train: Sequence[FaceRecord],
    eval_images: np.ndarray,
    eval_labels: np.ndarray,
    *,
    model_cfg,
    train_cfg,
    adapter,
    synth_cfg,
    augment_cfg,
    seed: int,
    out_dir: str | Path,
    batch_size: int = 16,
) -> SweepReport:
    """Train one short run per (map, edge) weight cell and score held-out data.

    A failing cell is recorded with its error and the sweep continues; the
    report names the argmax cell among the cells that produced an AUC.
    """
    from dataclasses import replace

    from .train import build_model, train_loop

    if not grid:
        raise ConfigError("sweep grid is empty")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    cells: list[dict] = []
    for i, (map_w, edge_w) in enumerate(grid):
        record: dict = {"lambda_map": float(map_w), "lambda_edge": float(edge_w)}
        cell_dir = out / f"cell_{i:02d}_m{map_w:g}_e{edge_w:g}"
        try:
            cell_cfg = replace(train_cfg, weights=LossWeights(float(map_w), float(edge_w)))
            model = build_model(model_cfg, derive_seed(seed, "sweep-cell", i))
            train_loop(
                model, faces_train, cell_cfg, cell_dir,
                adapter=adapter, synth_cfg=synth_cfg, augment_cfg=augment_cfg,
                seed=derive_seed(seed, "sweep-data", i),
            )
            scorer = make_scorer(model, batch_size=batch_size)
            record["auc"] = float(auc(scorer(eval_images), eval_labels))
            record["status"] = "ok"
        except Exception as exc:  # noqa: BLE001 - a cell failure must not abort the sweep
            record["auc"] = None
            record["status"] = f"failed: {exc}"
            logger.warning("sweep cell (%s, %s) failed: %s", map_w, edge_w, exc)
        cells.append(record)
    scored = [c for c in cells if c.get("auc") is not None]
    best = max(scored, key=lambda c: c["auc"]) if scored else None
    report = SweepReport(cells=cells, best=best)
    report.write(out)
    return report
