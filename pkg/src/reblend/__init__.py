"""reblend: blended-forgery sample synthesis and multi-scale detection.

The package has two halves.  The synthesis half re-renders genuine faces
through a reconstruction adapter and composites them back over the original
through randomized convex-hull masks, producing self-supervised forgery
samples with pixel-level mask and blending-edge targets.  The detection half
is a two-branch (RGB + learned noise residual) multi-scale network that
predicts the manipulation map, the blending edge, and an authenticity score,
trained with sharpness-aware minimization.
"""

from .config import DEFAULTS, PRESETS, RunConfig, resolve_config
from .data import (
    CropCache,
    FaceRecord,
    ManifestRow,
    VideoEntry,
    build_manifest,
    crop_and_resize,
    load_face,
    load_manifest,
    load_roster,
    resolve_multi_face,
    sample_frames,
    write_manifest,
)
from .errors import (
    ConfigError,
    DataError,
    MetricUndefinedError,
    NumericError,
    PartialFailure,
    SynthesisError,
    ToolkitError,
)
from .evaluation import (
    EvalReport,
    ScoreRow,
    ScoreTable,
    auc,
    evaluate_table,
    frame_level_eval,
    lambda_sweep,
    make_scorer,
    video_level_eval,
)
from .losses import (
    LossBreakdown,
    LossWeights,
    cls_loss,
    combine_losses,
    compute_losses,
    edge_loss,
    map_loss,
)
from .model import BlendDetector, ModelConfig, ModelOutput
from .rng import derive_seed, sample_stream, spawn
from .synth import (
    AugmentConfig,
    BlendedSample,
    ConvAutoencoderAdapter,
    IdentityAdapter,
    SynthConfig,
    blend,
    edge_from_mask,
    generate_rbi,
    genuine_sample,
    train_toy_autoencoder,
)
from .train import SAM, TrainConfig, TrainResult, build_model, sam_step, train_loop

__version__ = "0.1.0"

__all__ = [
    "AugmentConfig",
    "BlendDetector",
    "BlendedSample",
    "ConfigError",
    "ConvAutoencoderAdapter",
    "CropCache",
    "DEFAULTS",
    "DataError",
    "EvalReport",
    "FaceRecord",
    "IdentityAdapter",
    "LossBreakdown",
    "LossWeights",
    "ManifestRow",
    "MetricUndefinedError",
    "ModelConfig",
    "ModelOutput",
    "NumericError",
    "PRESETS",
    "PartialFailure",
    "RunConfig",
    "SAM",
    "ScoreRow",
    "ScoreTable",
    "SynthConfig",
    "SynthesisError",
    "ToolkitError",
    "TrainConfig",
    "TrainResult",
    "VideoEntry",
    "auc",
    "blend",
    "build_manifest",
    "build_model",
    "cls_loss",
    "combine_losses",
    "compute_losses",
    "crop_and_resize",
    "derive_seed",
    "edge_from_mask",
    "edge_loss",
    "evaluate_table",
    "frame_level_eval",
    "generate_rbi",
    "genuine_sample",
    "lambda_sweep",
    "load_face",
    "load_manifest",
    "load_roster",
    "make_scorer",
    "map_loss",
    "resolve_config",
    "resolve_multi_face",
    "sam_step",
    "sample_frames",
    "sample_stream",
    "spawn",
    "train_loop",
    "train_toy_autoencoder",
    "video_level_eval",
    "write_manifest",
]
