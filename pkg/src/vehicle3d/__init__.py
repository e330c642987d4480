"""Monocular 3D vehicle box refinement with a morphable landmark model.

The library covers the full loop: synthesize camera-space scenes with
noisy pseudo-measurements, learn a low-rank landmark shape basis from 2D
observations, refine pose/extent/shape by joint energy minimization, and
score predictions with detection-style localization metrics.  The
``vehicle3d`` command line drives the same pieces end to end.
"""
from .energy import (
    ABLATION_VARIANTS,
    EnergyConfig,
    Measurement,
    Variables,
    ablation_config,
    total_energy,
)
from .geometry import (
    BehindCameraError,
    Box2D,
    CameraIntrinsics,
    GroundPlane,
    PoseBox3D,
    box3d_corners,
    footprint,
    iou_2d,
    iou_3d,
    iou_bev,
    project,
    wrap_angle,
)
from .metrics import (
    DIFFICULTIES,
    EvalPair,
    PRCurve,
    alp,
    ap_2d_aos,
    ap_3d,
    ap_bev,
    center_distance,
    difficulty_bucket,
    pr_curve,
)
from .refine import InitializationError, RefineResult, SolverOptions, initialize, refine, refine_ablation
from .scene_io import (
    CAR_MODEL,
    FLAT_GROUND,
    IMAGE_SIZE,
    KITTI_CAMERA,
    STANDARD_NOISE,
    GenerationError,
    LabelFormatError,
    LabelRecord,
    NoiseSpec,
    SceneParams,
    SyntheticScene,
    emit_labels,
    format_config,
    generate_scene,
    label_to_measurement,
    label_to_pose,
    parse_config_text,
    parse_labels,
    pose_to_label,
    read_config,
)
from .shape import (
    LANDMARK_COUNT,
    InsufficientDataError,
    LandmarkObservations,
    LearnOptions,
    LearnResult,
    MorphableModel,
    learn_em,
    load_model,
    save_model,
)

__version__ = "0.1.0"

__all__ = [
    "ABLATION_VARIANTS",
    "BehindCameraError",
    "Box2D",
    "CAR_MODEL",
    "CameraIntrinsics",
    "DIFFICULTIES",
    "EnergyConfig",
    "EvalPair",
    "FLAT_GROUND",
    "GenerationError",
    "GroundPlane",
    "IMAGE_SIZE",
    "InitializationError",
    "InsufficientDataError",
    "KITTI_CAMERA",
    "LANDMARK_COUNT",
    "LabelFormatError",
    "LabelRecord",
    "LandmarkObservations",
    "LearnOptions",
    "LearnResult",
    "Measurement",
    "MorphableModel",
    "NoiseSpec",
    "PRCurve",
    "PoseBox3D",
    "RefineResult",
    "STANDARD_NOISE",
    "SceneParams",
    "SolverOptions",
    "SyntheticScene",
    "Variables",
    "ablation_config",
    "alp",
    "ap_2d_aos",
    "ap_3d",
    "ap_bev",
    "box3d_corners",
    "center_distance",
    "difficulty_bucket",
    "emit_labels",
    "footprint",
    "format_config",
    "generate_scene",
    "initialize",
    "iou_2d",
    "iou_3d",
    "iou_bev",
    "label_to_measurement",
    "label_to_pose",
    "learn_em",
    "load_model",
    "parse_config_text",
    "parse_labels",
    "pose_to_label",
    "pr_curve",
    "project",
    "read_config",
    "refine",
    "refine_ablation",
    "save_model",
    "total_energy",
    "wrap_angle",
]
