"""Token-reduced transformer pipeline for articulated mesh recovery.

Desk-scale, numpy-only: a minimal autodiff tensor library, a procedural
articulated template with linear blend skinning, masked attention blocks,
joint-token geometry reduction with a neural shape regressor, learnable
image-token pruning, the full loss stack, analytical flop accounting and a
CLI harness for synthetic-data experiments.
"""

from .flops import FlopsReport, attention_flops, forward_flops, model_flops, reduction_report
from .gtr import ModelConfig, ModelOutput, ToreModel
from .itp import TokenPruner, indicator_grid, pruning_loss, token_count
from .losses import CameraParams, LossWeights, SampleGT, total_loss, weak_perspective_project
from .mesh import MeshTemplate, Pose, build_template, lbs_pose, metrics, procrustes_align
from .tensor import Tensor, count_flops, grad_check, set_default_dtype
from .transformer import AttnMask, LayerConfig, adjacency_mask, sinusoidal_pe

__all__ = [
    "AttnMask",
    "CameraParams",
    "FlopsReport",
    "LayerConfig",
    "LossWeights",
    "MeshTemplate",
    "ModelConfig",
    "ModelOutput",
    "Pose",
    "SampleGT",
    "Tensor",
    "TokenPruner",
    "ToreModel",
    "adjacency_mask",
    "attention_flops",
    "build_template",
    "count_flops",
    "forward_flops",
    "grad_check",
    "indicator_grid",
    "lbs_pose",
    "metrics",
    "model_flops",
    "procrustes_align",
    "pruning_loss",
    "reduction_report",
    "set_default_dtype",
    "sinusoidal_pe",
    "token_count",
    "total_loss",
    "weak_perspective_project",
]

__version__ = "0.1.0"
