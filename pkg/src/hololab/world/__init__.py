from .garments import CATEGORIES, SENTINEL, GarmentSpec, make_garment
from .rig import (
    KEYPOINT_NAMES,
    N_KEYPOINTS,
    PoseSequence,
    compute_pose_heatmaps,
    dynamic_pose_sequence,
    rest_pose,
    spin_pose_sequence,
    static_pose_sequence,
)
from .render import DOMAINS, SampleTuple, VideoTensor, render_animation, render_spin
from .dataset import CACHE_ENV, Dataset, generate_dataset, sample_batch

__all__ = [
    "CATEGORIES",
    "SENTINEL",
    "GarmentSpec",
    "make_garment",
    "KEYPOINT_NAMES",
    "N_KEYPOINTS",
    "PoseSequence",
    "compute_pose_heatmaps",
    "dynamic_pose_sequence",
    "rest_pose",
    "spin_pose_sequence",
    "static_pose_sequence",
    "DOMAINS",
    "SampleTuple",
    "VideoTensor",
    "render_animation",
    "render_spin",
    "CACHE_ENV",
    "Dataset",
    "generate_dataset",
    "sample_batch",
]
