"""Semi-automated label generation: board poses, object-pose solving, label
propagation, foreground segmentation, domain randomization, and export."""

from .board import BoardPoseResult, camera_pose_from_board, homography_dlt
from .export import (
    ExportResult,
    export_dataset,
    format_label_file,
    select_mixed,
    write_dr_outputs,
)
from .propagate import (
    ForegroundPatch,
    bbox_from_model,
    convex_hull_2d,
    hull_mask,
    keypoint_visibility,
    object_pose_in_marker,
    propagate_labels,
    rasterize_depth,
    segment_foreground,
)
from .randomize import DRSample, LabeledPatch, SimilarityParams, domain_randomize

__all__ = [
    "BoardPoseResult",
    "DRSample",
    "ExportResult",
    "ForegroundPatch",
    "LabeledPatch",
    "SimilarityParams",
    "bbox_from_model",
    "camera_pose_from_board",
    "convex_hull_2d",
    "domain_randomize",
    "export_dataset",
    "format_label_file",
    "homography_dlt",
    "hull_mask",
    "keypoint_visibility",
    "object_pose_in_marker",
    "propagate_labels",
    "rasterize_depth",
    "segment_foreground",
    "select_mixed",
    "write_dr_outputs",
]
