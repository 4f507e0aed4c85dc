"""Metric depth from a scale-free monocular depth map and sparse radar returns.

Three stages: a global L1 scale fit against radar depths, confidence-weighted
quasi-dense augmentation of the radar returns, and a dense scale field
solved from a depth-fidelity plus edge-aware smoothness energy.
"""

from .align import AlignmentResult, align_global, brent_minimize
from .augment import (
    AssociationLabels,
    ConfidenceMap,
    PatchRect,
    bce_score,
    crop_patch_rect,
    heuristic_confidence,
    load_external_confidence,
    make_association_labels,
    quasi_dense_depth,
)
from .errors import RadarDepthError
from .geometry import (
    CameraModel,
    DepthImage,
    InverseDepthImage,
    RadarPointCloud,
    RigidTransform,
    SparseDepthProjection,
    build_sparse_depth_map,
    project_points,
)
from .interp import delaunay, interpolate_log_linear
from .metrics import MetricsReport, compute_metrics
from .pipeline import FrameResult, PipelineConfig, run_batch, run_pipeline
from .refine import (
    ScaleField,
    compose_depth,
    quasi_dense_scale,
    sml_losses,
    sobel_edge_weights,
    solve_scale_field,
)
from .synth import SceneSpec, default_camera, generate_scene, random_scene_spec

__version__ = "0.1.0"

__all__ = [
    "AlignmentResult",
    "AssociationLabels",
    "CameraModel",
    "ConfidenceMap",
    "DepthImage",
    "FrameResult",
    "InverseDepthImage",
    "MetricsReport",
    "PatchRect",
    "PipelineConfig",
    "RadarDepthError",
    "RadarPointCloud",
    "RigidTransform",
    "ScaleField",
    "SceneSpec",
    "SparseDepthProjection",
    "align_global",
    "bce_score",
    "brent_minimize",
    "build_sparse_depth_map",
    "compose_depth",
    "compute_metrics",
    "crop_patch_rect",
    "delaunay",
    "default_camera",
    "generate_scene",
    "heuristic_confidence",
    "interpolate_log_linear",
    "load_external_confidence",
    "make_association_labels",
    "project_points",
    "quasi_dense_depth",
    "quasi_dense_scale",
    "random_scene_spec",
    "run_batch",
    "run_pipeline",
    "sml_losses",
    "sobel_edge_weights",
    "solve_scale_field",
]
