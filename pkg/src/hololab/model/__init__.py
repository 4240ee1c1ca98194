from .config import ModelConfig, desk_config, micro_config, paper_scale_config
from .network import (
    BRANCHES,
    GarmentEmbedding,
    GarmentVDM,
    PoseFeatures,
    branch_param_names,
    build_model,
    copy_branch_params,
    parameter_checksum,
    params_by_tree,
    tree_of,
)
from .checkpoint import load_blob, load_checkpoint, save_checkpoint

__all__ = [
    "ModelConfig",
    "desk_config",
    "micro_config",
    "paper_scale_config",
    "BRANCHES",
    "GarmentEmbedding",
    "GarmentVDM",
    "PoseFeatures",
    "branch_param_names",
    "build_model",
    "copy_branch_params",
    "parameter_checksum",
    "params_by_tree",
    "tree_of",
    "load_blob",
    "load_checkpoint",
    "save_checkpoint",
]
