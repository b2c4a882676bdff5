"""Procedural face-like images with consistent 81-point landmarks.

The desk-scale corpus generator renders cartoon faces (head ellipse, eyes,
brows, nose, mouth, hair, noisy background) entirely from seeded draws, so a
corpus is reproducible bit for bit.  Landmarks follow the same 81-point
layout the rest of the toolkit assumes: jaw 0-16, brows 17-26, nose 27-35,
eyes 36-47, mouth 48-67, forehead 68-80.

A corpus is written in the standard on-disk layout (frames/, annotations/,
videos.json); each "video" is one identity rendered with small per-frame
pose and expression jitter.  ``extend_corpus_with_fakes`` adds a blended
counterpart video per genuine video of selected splits, which turns the toy
corpus into a complete detection benchmark.
"""

from __future__ import annotations

import json
import logging
from pathlib import Path

import cv2
import numpy as np

from .data import LANDMARK_COUNT, frame_path
from .errors import DataError
from .rng import spawn
from .synth.adapters import ReconstructorAdapter
from .synth.pipeline import SynthConfig, generate_rbi

logger = logging.getLogger(__name__)

__all__ = ["render_toy_face", "build_toy_corpus", "extend_corpus_with_fakes"]

_SS = 2  # supersampling factor for smooth drawing


def _rot(theta: float) -> np.ndarray:
    c, s = np.cos(theta), np.sin(theta)
    return np.array([[c, -s], [s, c]])


def _ellipse_points(
    center: np.ndarray, a: float, b: float, rot: np.ndarray, angles_deg: np.ndarray
) -> np.ndarray:
    phi = np.deg2rad(angles_deg)
    local = np.stack([a * np.cos(phi), b * np.sin(phi)], axis=1)
    return center + local @ rot.T


def sample_identity(rng: np.random.Generator, size: int) -> dict:
    """Draw the per-identity appearance and geometry parameters."""
    s = size / 64.0
    return {
        "center": np.array([size / 2 + rng.uniform(-1.5, 1.5) * s,
                            size / 2 + rng.uniform(0.0, 2.5) * s]),
        "a": rng.uniform(17.0, 21.0) * s,
        "b": rng.uniform(21.0, 25.0) * s,
        "skin": np.array([rng.uniform(0.62, 0.93), rng.uniform(0.48, 0.72), rng.uniform(0.36, 0.60)]),
        "hair": rng.uniform(0.05, 0.55, size=3),
        "iris": rng.uniform(0.1, 0.6, size=3),
        "lips": np.array([rng.uniform(0.55, 0.85), rng.uniform(0.15, 0.35), rng.uniform(0.2, 0.4)]),
        "bg_top": rng.uniform(0.1, 0.9, size=3),
        "bg_bottom": rng.uniform(0.1, 0.9, size=3),
        "brow_thick": rng.uniform(1.0, 2.0) * s,
        "eye_rx": rng.uniform(0.14, 0.19),
        "eye_ry": rng.uniform(0.07, 0.11),
        "mouth_w": rng.uniform(0.24, 0.32),
        "noise_sigma": rng.uniform(0.008, 0.025),
    }


def _frame_jitter(rng: np.random.Generator, size: int) -> dict:
    s = size / 64.0
    return {
        "shift": rng.uniform(-1.2, 1.2, size=2) * s,
        "angle": np.deg2rad(rng.uniform(-6.0, 6.0)),
        "openness": rng.uniform(0.35, 1.0),
        "gaze": rng.uniform(-0.3, 0.3, size=2),
        "brow_raise": rng.uniform(-0.02, 0.03),
    }


def _landmarks(identity: dict, jitter: dict) -> dict:
    """Geometry of all face parts in final image coordinates."""
    center = identity["center"] + jitter["shift"]
    a, b = identity["a"], identity["b"]
    rot = _rot(jitter["angle"])

    def at(fx: float, fy: float) -> np.ndarray:
        return center + np.array([fx * a, fy * b]) @ rot.T

    jaw = _ellipse_points(center, a, b, rot, np.linspace(170.0, 10.0, 17))
    forehead = _ellipse_points(center, a * 0.97, b * 0.95, rot, np.linspace(200.0, 340.0, 13))

    raise_y = -0.36 - jitter["brow_raise"] * 10
    brows = []
    for side in (-1, 1):
        xs = np.linspace(0.60, 0.16, 5) * side
        lift = np.array([0.0, -0.03, -0.045, -0.03, 0.0])
        pts = np.stack([xs, raise_y + lift], axis=1)
        if side > 0:
            pts = pts[::-1]
        brows.append(pts)
    brows_pts = np.concatenate(brows) * np.array([a, b]) @ rot.T + center

    bridge = np.stack([np.zeros(4), np.linspace(-0.16, 0.18, 4)], axis=1)
    base = np.stack([np.linspace(-0.11, 0.11, 5), np.full(5, 0.24) + np.array([0, .02, .03, .02, 0])], axis=1)
    nose_pts = np.concatenate([bridge, base]) * np.array([a, b]) @ rot.T + center

    eye_centers = {side: at(0.42 * side, -0.16) for side in (-1, 1)}
    rx, ry = identity["eye_rx"] * a, identity["eye_ry"] * b
    eyes = []
    for side in (-1, 1):
        angles = np.array([180.0, 225.0, 315.0, 0.0, 45.0, 135.0])
        eyes.append(_ellipse_points(eye_centers[side], rx, ry, rot, angles))
    eyes_pts = np.concatenate(eyes)

    mouth_center = at(0.0, 0.52)
    mw = identity["mouth_w"] * a
    mh = 0.10 * b * jitter["openness"] + 0.02 * b
    outer = _ellipse_points(mouth_center, mw, mh, rot, np.linspace(180.0, -180.0, 13)[:-1])
    inner = _ellipse_points(mouth_center, mw * 0.6, mh * 0.45, rot, np.linspace(180.0, -180.0, 9)[:-1])
    mouth_pts = np.concatenate([outer, inner])

    lms = np.concatenate([jaw, brows_pts, nose_pts, eyes_pts, mouth_pts, forehead])
    assert lms.shape == (LANDMARK_COUNT, 2)
    return {
        "landmarks": lms,
        "center": center,
        "rot": rot,
        "a": a,
        "b": b,
        "eye_centers": eye_centers,
        "eye_axes": (rx, ry),
        "mouth": (mouth_center, mw, mh),
        "angle_deg": np.rad2deg(jitter["angle"]),
        "gaze": jitter["gaze"],
        "openness": jitter["openness"],
    }


def _draw_face(identity: dict, geo: dict, size: int) -> np.ndarray:
    """Rasterize at 2x and downsample; returns float32 RGB in [0, 1]."""
    big = size * _SS

    def pt(p: np.ndarray) -> tuple[int, int]:
        return int(round(p[0] * _SS)), int(round(p[1] * _SS))

    def col(c: np.ndarray) -> tuple[int, int, int]:
        return tuple(int(round(float(v) * 255)) for v in c)

    rows = np.linspace(0.0, 1.0, big)[:, None, None]
    gradient = identity["bg_top"] * (1 - rows) + identity["bg_bottom"] * rows
    canvas = np.ascontiguousarray(
        np.broadcast_to(np.round(gradient * 255).astype(np.uint8), (big, big, 3))
    )

    center = geo["center"] * _SS
    a, b = geo["a"] * _SS, geo["b"] * _SS
    angle = geo["angle_deg"]
    cv2.ellipse(canvas, (int(center[0]), int(center[1] - 0.25 * b)), (int(a * 1.12), int(b * 0.95)),
                angle, 0, 360, col(identity["hair"]), -1, cv2.LINE_AA)
    cv2.ellipse(canvas, (int(center[0]), int(center[1])), (int(a), int(b)),
                angle, 0, 360, col(identity["skin"]), -1, cv2.LINE_AA)

    rx, ry = geo["eye_axes"]
    for side in (-1, 1):
        ec = geo["eye_centers"][side] * _SS
        cv2.ellipse(canvas, (int(ec[0]), int(ec[1])), (int(rx * _SS), int(ry * _SS)),
                    angle, 0, 360, (250, 250, 250), -1, cv2.LINE_AA)
        iris = ec + geo["gaze"] * rx * _SS * 0.5
        cv2.circle(canvas, (int(iris[0]), int(iris[1])), max(1, int(ry * _SS * 0.75)),
                   col(identity["iris"]), -1, cv2.LINE_AA)
        cv2.circle(canvas, (int(iris[0]), int(iris[1])), max(1, int(ry * _SS * 0.35)),
                   (15, 15, 15), -1, cv2.LINE_AA)

    lms = geo["landmarks"]
    for sl in (slice(17, 22), slice(22, 27)):
        pts = np.round(lms[sl] * _SS).astype(np.int32)
        cv2.polylines(canvas, [pts], False, (40, 25, 15),
                      max(1, int(identity["brow_thick"] * _SS)), cv2.LINE_AA)
    bridge = np.round(lms[27:31] * _SS).astype(np.int32)
    cv2.polylines(canvas, [bridge], False, col(identity["skin"] * 0.75), _SS, cv2.LINE_AA)
    base = np.round(lms[31:36] * _SS).astype(np.int32)
    cv2.polylines(canvas, [base], False, col(identity["skin"] * 0.7), _SS, cv2.LINE_AA)

    mouth_center, mw, mh = geo["mouth"]
    mc = mouth_center * _SS
    cv2.ellipse(canvas, (int(mc[0]), int(mc[1])), (int(mw * _SS), int(mh * _SS)),
                angle, 0, 360, col(identity["lips"]), -1, cv2.LINE_AA)
    if geo["openness"] > 0.6:
        cv2.ellipse(canvas, (int(mc[0]), int(mc[1])), (int(mw * 0.6 * _SS), int(mh * 0.45 * _SS)),
                    angle, 0, 360, (40, 10, 10), -1, cv2.LINE_AA)

    small = cv2.resize(canvas, (size, size), interpolation=cv2.INTER_AREA)
    return small.astype(np.float32) / 255.0


def render_toy_face(
    rng: np.random.Generator,
    size: int = 64,
    identity: dict | None = None,
) -> tuple[np.ndarray, np.ndarray]:
    """Render one face; returns (image float32 [0,1], 81 x 2 landmarks).

    Passing the same ``identity`` with different rngs yields frames of the
    same synthetic person under pose/expression jitter.
    """
    if identity is None:
        identity = sample_identity(rng, size)
    jitter = _frame_jitter(rng, size)
    geo = _landmarks(identity, jitter)
    image = _draw_face(identity, geo, size)
    noise = rng.normal(0.0, identity["noise_sigma"], size=image.shape).astype(np.float32)
    image = np.clip(image + noise, 0.0, 1.0)
    lms = np.clip(geo["landmarks"], 0, size - 1)
    return image, lms


def _bbox_from_landmarks(lms: np.ndarray, size: int, pad: int = 2) -> tuple[int, int, int, int]:
    x0 = max(0, int(np.floor(lms[:, 0].min())) - pad)
    y0 = max(0, int(np.floor(lms[:, 1].min())) - pad)
    x1 = min(size, int(np.ceil(lms[:, 0].max())) + pad)
    y1 = min(size, int(np.ceil(lms[:, 1].max())) + pad)
    return x0, y0, x1, y1


def _write_frame(path: Path, image: np.ndarray) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    u8 = np.round(np.clip(image, 0, 1) * 255).astype(np.uint8)
    if not cv2.imwrite(str(path), cv2.cvtColor(u8, cv2.COLOR_RGB2BGR)):
        raise DataError(f"cannot write frame {path}")


def build_toy_corpus(
    root: str | Path,
    *,
    n_videos: int = 44,
    frames_per_video: int = 10,
    size: int = 64,
    seed: int = 7,
    split_fractions: tuple[float, float, float] = (0.6, 0.2, 0.2),
    faceless_videos: int = 0,
) -> dict:
    """Write a genuine-only toy corpus; returns the videos.json mapping.

    ``faceless_videos`` adds genuine test-split videos whose annotation lists
    are empty, for exercising the video-level fallback path.
    """
    root = Path(root)
    (root / "annotations").mkdir(parents=True, exist_ok=True)
    order = spawn(seed, "toy-splits").permutation(n_videos)
    n_train = int(round(split_fractions[0] * n_videos))
    n_val = int(round(split_fractions[1] * n_videos))
    split_of = {}
    for rank, vid_idx in enumerate(order):
        split_of[int(vid_idx)] = "train" if rank < n_train else ("val" if rank < n_train + n_val else "test")

    videos: dict[str, dict] = {}
    for v in range(n_videos):
        video_id = f"toy{v:03d}"
        identity = sample_identity(spawn(seed, "identity", v), size)
        annotations = []
        for f in range(frames_per_video):
            frame_rng = spawn(seed, "frame", v, f)
            image, lms = render_toy_face(frame_rng, size=size, identity=identity)
            _write_frame(frame_path(root, video_id, f), image)
            annotations.append(
                {
                    "frame": f,
                    "faces": [
                        {
                            "bbox": list(_bbox_from_landmarks(lms, size)),
                            "landmarks": [[float(x), float(y)] for x, y in lms],
                        }
                    ],
                }
            )
        with open(root / "annotations" / f"{video_id}.json", "w", encoding="utf-8") as fh:
            json.dump(annotations, fh)
        videos[video_id] = {
            "label": "genuine", "dataset": "toy",
            "split": split_of[v], "manipulation": "none",
        }

    for v in range(faceless_videos):
        video_id = f"toyblank{v:03d}"
        identity = sample_identity(spawn(seed, "blank-identity", v), size)
        for f in range(frames_per_video):
            image, _ = render_toy_face(spawn(seed, "blank-frame", v, f), size=size, identity=identity)
            _write_frame(frame_path(root, video_id, f), image)
        with open(root / "annotations" / f"{video_id}.json", "w", encoding="utf-8") as fh:
            json.dump([], fh)
        videos[video_id] = {
            "label": "genuine", "dataset": "toy",
            "split": "test", "manipulation": "none",
        }

    with open(root / "videos.json", "w", encoding="utf-8") as fh:
        json.dump(videos, fh, indent=1, sort_keys=True)
    logger.info("wrote toy corpus with %d videos to %s", len(videos), root)
    return videos


def extend_corpus_with_fakes(
    root: str | Path,
    adapter: ReconstructorAdapter,
    synth_cfg: SynthConfig,
    *,
    seed: int = 7,
    splits: tuple[str, ...] = ("val", "test"),
    manipulation: str = "rbi",
) -> list[str]:
    """Add one blended counterpart video per genuine video of ``splits``.

    Each fake frame is the blended rendition of the original frame (the full
    frame acts as the face crop, landmarks are already in frame
    coordinates); annotations are copied so the evaluation protocols process
    fake videos exactly like genuine ones.  Returns the new video ids.
    """
    from .data import FaceRecord, read_frame

    root = Path(root)
    with open(root / "videos.json", "r", encoding="utf-8") as fh:
        videos = json.load(fh)
    created: list[str] = []
    for video_id in sorted(videos):
        info = videos[video_id]
        if info["label"] != "genuine" or info["split"] not in splits:
            continue
        anno_path = root / "annotations" / f"{video_id}.json"
        with open(anno_path, "r", encoding="utf-8") as fh:
            annotations = json.load(fh)
        if not annotations:
            continue
        fake_id = f"{video_id}-{manipulation}"
        for entry in annotations:
            f = int(entry["frame"])
            frame = read_frame(frame_path(root, video_id, f)).astype(np.float32) / 255.0
            lms = np.asarray(entry["faces"][0]["landmarks"], dtype=np.float64)
            face = FaceRecord(
                image=frame, landmarks=lms, label="genuine",
                video_id=video_id, frame_idx=f, dataset=info["dataset"], split=info["split"],
            )
            sample = generate_rbi(face, adapter, spawn(seed, "fake", video_id, f), synth_cfg)
            _write_frame(frame_path(root, fake_id, f), sample.image)
        with open(root / "annotations" / f"{fake_id}.json", "w", encoding="utf-8") as fh:
            json.dump(annotations, fh)
        videos[fake_id] = {
            "label": "fake", "dataset": info["dataset"],
            "split": info["split"], "manipulation": manipulation,
        }
        created.append(fake_id)
    with open(root / "videos.json", "w", encoding="utf-8") as fh:
        json.dump(videos, fh, indent=1, sort_keys=True)
    logger.info("added %d blended videos to %s", len(created), root)
    return created
