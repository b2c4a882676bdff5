"""Corpus ingestion: manifests, frame sampling, face crops, and caching.

A corpus on disk is a directory of extracted video frames plus sidecar face
annotations:

    corpus_root/
      videos.json                   # {video_id: {label, dataset, split, manipulation}}
      frames/<video_id>/f000000.png # RGB frames, one file per extracted frame
      annotations/<video_id>.json   # [{"frame": i, "faces": [{"bbox", "landmarks"}]}]

From that the toolkit builds a flat manifest (CSV, one face per line) that
every downstream stage consumes.  Landmarks follow the 81-point layout: 0-16
jaw, 17-26 brows, 27-35 nose, 36-47 eyes, 48-67 mouth, 68-80 forehead.

Key choices:
  * frame selection is deterministic and even (both endpoints included), the
    same rule at train and eval time;
  * the training frame set is frozen into the manifest once, not re-sampled
    per epoch; epoch-to-epoch variety comes from the synthesis streams;
  * face crops are content-addressed in an on-disk cache written with a
    temp-file-then-rename protocol so concurrent readers never see partial
    files.
"""

from __future__ import annotations

import csv
import hashlib
import json
import logging
import os
import tempfile
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import cv2
import numpy as np

from .errors import DataError

logger = logging.getLogger(__name__)

LANDMARK_COUNT = 81
# Index groups of the 81-point layout.
JAW = list(range(0, 17))
BROWS = list(range(17, 27))
NOSE = list(range(27, 36))
EYES = list(range(36, 48))
MOUTH = list(range(48, 68))
FOREHEAD = list(range(68, 81))

LABELS = ("genuine", "fake")
SPLITS = ("train", "val", "test")

MANIFEST_FIELDS = 4 + 4 + 2 * LANDMARK_COUNT + 3

BBox = tuple[int, int, int, int]


@dataclass
class FaceRecord:
    """A network-ready face crop with landmarks in crop coordinates."""

    image: np.ndarray
    landmarks: np.ndarray
    label: str
    video_id: str
    frame_idx: int
    dataset: str = "unknown"
    split: str = "train"
    bbox: BBox = (0, 0, 0, 0)
    path: str = ""


@dataclass
class ManifestRow:
    """One face in one frame, with landmarks in frame coordinates."""

    video_id: str
    path: str
    frame_idx: int
    bbox: BBox
    landmarks: np.ndarray
    label: str
    dataset: str
    split: str

    def validate(self) -> None:
        if self.label not in LABELS:
            raise DataError(f"{self.video_id}: label must be one of {LABELS}, got {self.label!r}")
        if self.split not in SPLITS:
            raise DataError(f"{self.video_id}: split must be one of {SPLITS}, got {self.split!r}")
        lms = np.asarray(self.landmarks, dtype=np.float64)
        if lms.shape != (LANDMARK_COUNT, 2):
            raise DataError(
                f"{self.video_id} frame {self.frame_idx}: expected {LANDMARK_COUNT} landmark "
                f"pairs, got array of shape {lms.shape}"
            )
        if not np.all(np.isfinite(lms)):
            raise DataError(f"{self.video_id} frame {self.frame_idx}: non-finite landmark")
        x0, y0, x1, y1 = self.bbox
        if x1 <= x0 or y1 <= y0:
            raise DataError(f"{self.video_id} frame {self.frame_idx}: empty bbox {self.bbox}")


@dataclass
class VideoEntry:
    """Roster entry for one video; used by the video-level protocol."""

    video_id: str
    label: str
    dataset: str
    split: str
    manipulation: str = "none"
    frame_files: list[str] = field(default_factory=list)


def sample_frames(frame_count: int, n: int, mode: str = "even") -> np.ndarray:
    """Select ``n`` frame indices from ``frame_count`` available frames.

    Even mode returns evenly spaced indices including both endpoints for
    n >= 2; n == 1 returns the middle frame.  When fewer frames exist than
    requested, all frames are returned and a warning is emitted.
    """
    if mode != "even":
        raise DataError(f"unknown frame sampling mode {mode!r}")
    if frame_count <= 0:
        raise DataError(f"frame_count must be positive, got {frame_count}")
    if n <= 0:
        raise DataError(f"requested frame count must be positive, got {n}")
    if frame_count < n:
        warnings.warn(
            f"requested {n} frames but only {frame_count} available; using all",
            stacklevel=2,
        )
        return np.arange(frame_count)
    if n == 1:
        return np.array([(frame_count - 1) // 2])
    return np.round(np.linspace(0.0, frame_count - 1, n)).astype(np.int64)


def resolve_multi_face(
    boxes: Sequence[BBox], reference_mask: np.ndarray | None = None
) -> int:
    """Pick one face among several detections.

    With a reference mask the box with maximum mask overlap wins; otherwise
    the largest box.  Ties break toward the smallest index.
    """
    if len(boxes) == 0:
        raise DataError("resolve_multi_face called with no detections")
    scores = np.empty(len(boxes), dtype=np.float64)
    for i, (x0, y0, x1, y1) in enumerate(boxes):
        if reference_mask is not None:
            h, w = reference_mask.shape[:2]
            xa, ya = max(0, int(x0)), max(0, int(y0))
            xb, yb = min(w, int(x1)), min(h, int(y1))
            scores[i] = float(reference_mask[ya:yb, xa:xb].sum()) if xb > xa and yb > ya else 0.0
        else:
            scores[i] = float(max(0, x1 - x0) * max(0, y1 - y0))
    return int(np.argmax(scores))


@dataclass(frozen=True)
class CropTransform:
    """Affine frame->crop mapping: crop = (frame - offset) * scale."""

    offset: tuple[float, float]
    scale: tuple[float, float]

    def apply(self, points: np.ndarray) -> np.ndarray:
        pts = np.asarray(points, dtype=np.float64)
        return (pts - np.asarray(self.offset)) * np.asarray(self.scale)

    def invert(self, points: np.ndarray) -> np.ndarray:
        pts = np.asarray(points, dtype=np.float64)
        return pts / np.asarray(self.scale) + np.asarray(self.offset)


def crop_and_resize(
    frame: np.ndarray,
    bbox: BBox,
    landmarks: np.ndarray,
    out_size: int,
    margin: float = 0.125,
) -> tuple[np.ndarray, np.ndarray, CropTransform]:
    """Crop ``bbox`` expanded by ``margin`` per side and resize to a square.

    Returns the crop in float32 [0, 1], landmarks mapped into crop
    coordinates, and the invertible mapping used.  Regions outside the frame
    are filled by edge replication.
    """
    if frame.ndim != 3 or frame.shape[2] != 3:
        raise DataError(f"expected an H x W x 3 frame, got shape {frame.shape}")
    x0, y0, x1, y1 = (float(v) for v in bbox)
    if x1 <= x0 or y1 <= y0:
        raise DataError(f"empty bbox {bbox}")
    mw, mh = margin * (x1 - x0), margin * (y1 - y0)
    xa = int(np.floor(x0 - mw))
    ya = int(np.floor(y0 - mh))
    xb = int(np.ceil(x1 + mw))
    yb = int(np.ceil(y1 + mh))
    h, w = frame.shape[:2]
    pad_l, pad_t = max(0, -xa), max(0, -ya)
    pad_r, pad_b = max(0, xb - w), max(0, yb - h)
    region = frame[max(0, ya) : min(h, yb), max(0, xa) : min(w, xb)]
    if region.size == 0:
        raise DataError(f"bbox {bbox} lies outside the {w}x{h} frame")
    if pad_l or pad_t or pad_r or pad_b:
        region = cv2.copyMakeBorder(region, pad_t, pad_b, pad_l, pad_r, cv2.BORDER_REPLICATE)
    crop = cv2.resize(region, (out_size, out_size), interpolation=cv2.INTER_LINEAR)
    if crop.dtype == np.uint8:
        crop = crop.astype(np.float32) / 255.0
    else:
        crop = crop.astype(np.float32)
    transform = CropTransform(
        offset=(float(xa), float(ya)),
        scale=(out_size / float(xb - xa), out_size / float(yb - ya)),
    )
    lms = transform.apply(landmarks).astype(np.float64)
    return crop, lms, transform


class CropCache:
    """Content-addressed cache of face crops under a root directory."""

    def __init__(self, root: str | os.PathLike[str]):
        self.root = Path(root)
        self.root.mkdir(parents=True, exist_ok=True)
        self.hits = 0
        self.misses = 0

    @staticmethod
    def key(video_id: str, frame_idx: int, bbox: BBox, out_size: int, margin: float) -> str:
        payload = json.dumps(
            [video_id, int(frame_idx), [float(v) for v in bbox], int(out_size), float(margin)]
        )
        return hashlib.sha256(payload.encode("utf-8")).hexdigest()

    def _path(self, key: str) -> Path:
        return self.root / key[:2] / f"{key}.npz"

    def get(self, key: str) -> tuple[np.ndarray, np.ndarray] | None:
        path = self._path(key)
        if not path.exists():
            self.misses += 1
            return None
        try:
            with np.load(path) as blob:
                crop, lms = blob["crop"], blob["landmarks"]
        except (OSError, KeyError, ValueError) as exc:
            logger.warning("dropping unreadable cache entry %s: %s", path, exc)
            path.unlink(missing_ok=True)
            self.misses += 1
            return None
        self.hits += 1
        return crop, lms

    def put(self, key: str, crop: np.ndarray, landmarks: np.ndarray) -> None:
        path = self._path(key)
        path.parent.mkdir(parents=True, exist_ok=True)
        fd, tmp = tempfile.mkstemp(dir=path.parent, suffix=".tmp")
        try:
            with os.fdopen(fd, "wb") as fh:
                np.savez(fh, crop=crop, landmarks=landmarks)
            os.replace(tmp, path)
        except BaseException:
            if os.path.exists(tmp):
                os.unlink(tmp)
            raise


def read_frame(path: str | os.PathLike[str]) -> np.ndarray:
    """Read an image file as RGB uint8; unreadable files raise DataError."""
    data = cv2.imread(str(path), cv2.IMREAD_COLOR)
    if data is None:
        raise DataError(f"unreadable image file: {path}")
    return cv2.cvtColor(data, cv2.COLOR_BGR2RGB)


def load_face(
    row: ManifestRow,
    crop_size: int,
    margin: float = 0.125,
    cache: CropCache | None = None,
) -> FaceRecord:
    """Materialize a manifest row into a FaceRecord crop (cache-aware)."""
    key = None
    if cache is not None:
        key = CropCache.key(row.video_id, row.frame_idx, row.bbox, crop_size, margin)
        cached = cache.get(key)
        if cached is not None:
            crop, lms = cached
            return FaceRecord(
                image=crop, landmarks=lms, label=row.label, video_id=row.video_id,
                frame_idx=row.frame_idx, dataset=row.dataset, split=row.split,
                bbox=row.bbox, path=row.path,
            )
    frame = read_frame(row.path)
    crop, lms, _ = crop_and_resize(frame, row.bbox, row.landmarks, crop_size, margin)
    if cache is not None and key is not None:
        cache.put(key, crop, lms)
    return FaceRecord(
        image=crop, landmarks=lms, label=row.label, video_id=row.video_id,
        frame_idx=row.frame_idx, dataset=row.dataset, split=row.split,
        bbox=row.bbox, path=row.path,
    )


def _check_split_disjoint(rows: Iterable[ManifestRow]) -> None:
    seen: dict[str, str] = {}
    for row in rows:
        prev = seen.setdefault(row.video_id, row.split)
        if prev != row.split:
            raise DataError(
                f"video {row.video_id!r} appears in splits {prev!r} and {row.split!r}; "
                "splits must be disjoint at video level"
            )


def write_manifest(rows: Sequence[ManifestRow], path: str | os.PathLike[str]) -> None:
    for row in rows:
        row.validate()
    _check_split_disjoint(rows)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        for row in rows:
            lms = np.asarray(row.landmarks, dtype=np.float64).reshape(-1)
            writer.writerow(
                [row.video_id, row.path, row.frame_idx, *row.bbox]
                + [repr(float(v)) for v in lms]
                + [row.label, row.dataset, row.split]
            )


def load_manifest(path: str | os.PathLike[str]) -> list[ManifestRow]:
    rows: list[ManifestRow] = []
    try:
        fh = open(path, "r", encoding="utf-8", newline="")
    except OSError as exc:
        raise DataError(f"cannot read manifest {path}: {exc}") from exc
    with fh:
        for lineno, fields in enumerate(csv.reader(fh), start=1):
            if not fields:
                continue
            if len(fields) != MANIFEST_FIELDS:
                raise DataError(
                    f"{path}:{lineno}: expected {MANIFEST_FIELDS} fields, got {len(fields)}"
                )
            try:
                bbox = tuple(int(float(v)) for v in fields[3:7])
                lms = np.array([float(v) for v in fields[7 : 7 + 2 * LANDMARK_COUNT]])
            except ValueError as exc:
                raise DataError(f"{path}:{lineno}: unparsable number: {exc}") from exc
            row = ManifestRow(
                video_id=fields[0],
                path=fields[1],
                frame_idx=int(float(fields[2])),
                bbox=bbox,  # type: ignore[arg-type]
                landmarks=lms.reshape(LANDMARK_COUNT, 2),
                label=fields[-3],
                dataset=fields[-2],
                split=fields[-1],
            )
            row.validate()
            rows.append(row)
    _check_split_disjoint(rows)
    return rows


class SidecarAnnotations:
    """Face detections recorded next to the frames (the offline adapter).

    Matches the detection interface: ``detect`` returns candidate boxes for a
    frame reference and ``landmarks`` returns the 81 points for one box.
    Frame references are (video_id, frame_idx) pairs.
    """

    def __init__(self, corpus_root: str | os.PathLike[str]):
        self.root = Path(corpus_root)
        self._cache: dict[str, dict[int, list[dict]]] = {}

    def _video(self, video_id: str) -> dict[int, list[dict]]:
        if video_id not in self._cache:
            path = self.root / "annotations" / f"{video_id}.json"
            try:
                with open(path, "r", encoding="utf-8") as fh:
                    entries = json.load(fh)
            except (OSError, json.JSONDecodeError) as exc:
                raise DataError(f"cannot read annotations for video {video_id!r}: {exc}") from exc
            table: dict[int, list[dict]] = {}
            for entry in entries:
                table[int(entry["frame"])] = list(entry.get("faces", []))
            self._cache[video_id] = table
        return self._cache[video_id]

    def detect(self, frame_ref: tuple[str, int]) -> list[BBox]:
        video_id, frame_idx = frame_ref
        faces = self._video(video_id).get(int(frame_idx), [])
        return [tuple(int(v) for v in face["bbox"]) for face in faces]  # type: ignore[misc]

    def landmarks(self, frame_ref: tuple[str, int], bbox: BBox) -> np.ndarray:
        video_id, frame_idx = frame_ref
        for face in self._video(video_id).get(int(frame_idx), []):
            if tuple(int(v) for v in face["bbox"]) == tuple(int(v) for v in bbox):
                lms = np.asarray(face["landmarks"], dtype=np.float64)
                if lms.shape != (LANDMARK_COUNT, 2):
                    raise DataError(
                        f"{video_id} frame {frame_idx}: expected {LANDMARK_COUNT} landmarks, "
                        f"got shape {lms.shape}"
                    )
                return lms
        raise DataError(f"{video_id} frame {frame_idx}: no landmarks recorded for bbox {bbox}")


def frame_path(corpus_root: str | os.PathLike[str], video_id: str, frame_idx: int) -> Path:
    return Path(corpus_root) / "frames" / video_id / f"f{frame_idx:06d}.png"


def load_roster(corpus_root: str | os.PathLike[str]) -> dict[str, VideoEntry]:
    """Read videos.json and enumerate each video's frame files."""
    root = Path(corpus_root)
    try:
        with open(root / "videos.json", "r", encoding="utf-8") as fh:
            meta = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise DataError(f"cannot read corpus roster at {root}: {exc}") from exc
    roster: dict[str, VideoEntry] = {}
    for video_id in sorted(meta):
        info = meta[video_id]
        frames_dir = root / "frames" / video_id
        files = sorted(str(p) for p in frames_dir.glob("f*.png")) if frames_dir.is_dir() else []
        roster[video_id] = VideoEntry(
            video_id=video_id,
            label=info["label"],
            dataset=info.get("dataset", "unknown"),
            split=info.get("split", "train"),
            manipulation=info.get("manipulation", "none"),
            frame_files=files,
        )
    return roster


def build_manifest(
    corpus_root: str | os.PathLike[str],
    frames_per_video: int | None = None,
    splits: Sequence[str] = SPLITS,
) -> list[ManifestRow]:
    """Walk a corpus and emit one manifest row per usable face.

    ``frames_per_video`` selects that many frames evenly per video (None
    keeps every annotated frame).  Videos without usable frames contribute no
    rows but stay in the roster, so the video-level protocol can still report
    them.  Unreadable videos are skipped with a log entry.
    """
    roster = load_roster(corpus_root)
    sidecar = SidecarAnnotations(corpus_root)
    rows: list[ManifestRow] = []
    for video_id in sorted(roster):
        entry = roster[video_id]
        if entry.split not in splits:
            continue
        if not entry.frame_files:
            logger.warning("video %s has no frames on disk; skipped", video_id)
            continue
        frame_indices = sorted(
            int(Path(p).stem[1:]) for p in entry.frame_files
        )
        if frames_per_video is not None:
            picks = sample_frames(len(frame_indices), min(frames_per_video, len(frame_indices)))
            frame_indices = [frame_indices[i] for i in picks]
        for frame_idx in frame_indices:
            boxes = sidecar.detect((video_id, frame_idx))
            if not boxes:
                logger.info("video %s frame %d: no face; skipped", video_id, frame_idx)
                continue
            pick = resolve_multi_face(boxes)
            bbox = boxes[pick]
            lms = sidecar.landmarks((video_id, frame_idx), bbox)
            rows.append(
                ManifestRow(
                    video_id=video_id,
                    path=str(frame_path(corpus_root, video_id, frame_idx)),
                    frame_idx=frame_idx,
                    bbox=bbox,
                    landmarks=lms,
                    label=entry.label,
                    dataset=entry.dataset,
                    split=entry.split,
                )
            )
    for row in rows:
        row.validate()
    _check_split_disjoint(rows)
    return rows
