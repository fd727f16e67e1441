"""Weak-perspective projection and the full training objective."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .itp import indicator_grid, pruning_loss


@dataclass
class CameraParams:
    """Weak-perspective camera; scale is kept positive via softplus upstream."""

    s: T.Tensor  # scalar
    t: T.Tensor  # [2]


@dataclass
class LossWeights:
    lp: float = 1.0
    j2d: float = 100.0
    v3d: float = 100.0
    j3d: float = 1000.0
    alpha: float = 1.0  # 3-D supervision availability
    beta: float = 1.0   # 2-D supervision availability

    def __post_init__(self):
        if min(self.lp, self.j2d, self.v3d, self.j3d) < 0:
            raise ValueError("loss weights must be non-negative")


@dataclass
class SampleGT:
    verts_low: np.ndarray
    verts_mid: np.ndarray
    verts_high: np.ndarray
    joints3d: np.ndarray
    joints2d: np.ndarray


def weak_perspective_project(x, cam: CameraParams):
    """Orthographic xy drop scaled by s and shifted by t: s * X[:, :2] + t."""
    if isinstance(x, T.Tensor):
        return x[:, 0:2] * cam.s + cam.t
    x = np.asarray(x)
    s = cam.s.data if isinstance(cam.s, T.Tensor) else cam.s
    t = cam.t.data if isinstance(cam.t, T.Tensor) else cam.t
    return np.asarray(s) * x[:, :2] + np.asarray(t)


def vertex_loss(pred_levels, gt_levels) -> T.Tensor:
    """Sum of mean-L1 vertex distances over the three sampling levels."""
    if len(pred_levels) != 3 or len(gt_levels) != 3:
        raise ValueError("vertex_loss expects three mesh levels")
    total = None
    for pred, gt in zip(pred_levels, gt_levels):
        term = T.l1_distance(pred, T.Tensor(np.asarray(gt)))
        total = term if total is None else total + term
    return total


def joint_losses(pred_joints: T.Tensor, regressed_joints: T.Tensor,
                 gt_joints3d: np.ndarray, gt_joints2d: np.ndarray,
                 cam: CameraParams):
    """(L_J3D, regressed 3-D loss, regressed 2-D reprojection loss)."""
    gt3 = T.Tensor(np.asarray(gt_joints3d))
    l_j3d = T.l1_distance(pred_joints, gt3)
    l_rj3d = T.l1_distance(regressed_joints, gt3)
    proj = weak_perspective_project(regressed_joints, cam)
    l_rj2d = T.l1_distance(proj, T.Tensor(np.asarray(gt_joints2d)))
    return l_j3d, l_rj3d, l_rj2d


def total_loss(out, gt: SampleGT, weights: LossWeights,
               grid_h: int = 7, grid_w: int = 7, image_size: float = 56.0):
    """Weighted objective; returns (scalar tensor, per-term float dict).

    The pruning term is active only when the model produced a pruner output;
    its indicator projects the ground-truth vertices with the predicted
    camera held constant (no gradient into the camera through the grid).
    """
    l_v3d = vertex_loss(
        (out.verts_low, out.verts_mid, out.verts_high),
        (gt.verts_low, gt.verts_mid, gt.verts_high),
    )
    l_j3d, l_rj3d, l_rj2d = joint_losses(
        out.joints3d, out.joints_from_mesh, gt.joints3d, gt.joints2d, out.camera,
    )
    terms = {
        "L_J3D": l_j3d.item(),
        "L_RJ3D": l_rj3d.item(),
        "L_V3D": l_v3d.item(),
        "L_RJ2D": l_rj2d.item(),
        "L_P": 0.0,
    }
    total = T.scale(l_j3d + l_rj3d, weights.alpha * weights.j3d)
    total = total + T.scale(l_v3d, weights.alpha * weights.v3d)
    if out.pruner is not None:
        detached_cam = CameraParams(s=out.camera.s.detach(), t=out.camera.t.detach())
        projected = weak_perspective_project(np.asarray(gt.verts_high), detached_cam)
        grid = indicator_grid(projected, grid_h, grid_w, image_size)
        l_p = pruning_loss(grid, out.pruner.mapping)
        terms["L_P"] = l_p.item()
        total = total + T.scale(l_p, weights.alpha * weights.lp)
    total = total + T.scale(l_rj2d, weights.beta * weights.j2d)
    terms["total"] = total.item()
    return total, terms
