"""Synthetic dataset: posed templates rendered as Gaussian-blob images."""

from __future__ import annotations

import numpy as np

from .container import save_container
from .mesh import MeshTemplate, Pose, build_template, lbs_pose

DEFAULT_IMAGE_SIZE = 56
DEFAULT_NOISE_SIGMA = 0.02
_BLOB_SIGMA_PX = 1.2
_MARGIN_FRAC = 0.12


def _sample_pose(template: MeshTemplate, rng: np.random.Generator) -> Pose:
    """Uniform axis-angle articulation, bounded well below a half turn."""
    rot = rng.uniform(-0.6, 0.6, size=(template.joints, 3))
    rot[0] = rng.uniform(-0.3, 0.3, size=3)  # gentler root orientation
    trans = rng.uniform(-0.05, 0.05, size=3)
    return Pose(joint_rotations=rot, root_translation=trans)


def _fit_camera(verts: np.ndarray, image_size: float, rng: np.random.Generator):
    """Weak-perspective camera framing the projected body with a margin."""
    xy = verts[:, :2]
    lo, hi = xy.min(axis=0), xy.max(axis=0)
    span = max(float((hi - lo).max()), 1e-6)
    margin = _MARGIN_FRAC * image_size
    s = (image_size - 2 * margin) / span * rng.uniform(0.85, 1.0)
    t = (image_size - s * (hi + lo)) / 2
    t += rng.uniform(-0.02, 0.02, size=2) * image_size
    return float(s), t.astype(np.float64)


def _render(points2d: np.ndarray, image_size: int, sigma: float,
            rng: np.random.Generator) -> np.ndarray:
    """Splat Gaussian blobs at the projected coarse vertices, add noise."""
    grid = np.arange(image_size) + 0.5
    gx, gy = np.meshgrid(grid, grid)  # gy: rows (y), gx: cols (x)
    img = np.zeros((image_size, image_size))
    inv = 1.0 / (2 * _BLOB_SIGMA_PX**2)
    for x, y in points2d:
        img += np.exp(-((gx - x) ** 2 + (gy - y) ** 2) * inv)
    img = img / max(img.max(), 1e-6)
    img += rng.normal(0.0, sigma, size=img.shape)
    return np.clip(img, 0.0, None)


def synth_dataset(n: int, seed: int, out_path=None, template: MeshTemplate | None = None,
                  image_size: int = DEFAULT_IMAGE_SIZE,
                  noise_sigma: float = DEFAULT_NOISE_SIGMA):
    """Generate n posed-and-rendered samples; optionally write a container.

    Returns (arrays dict, meta dict).  Ground-truth 2-D joints are the GT
    camera's projection of the regressed 3-D joints, so the projection model
    in the loss can be satisfied exactly.
    """
    if n < 1:
        raise ValueError("need at least one sample")
    template = template or build_template()
    rng = np.random.default_rng(seed)
    renders, vl, vm, vh, j3, j2, cam_s, cam_t, rots, transl = ([] for _ in range(10))
    for _ in range(n):
        pose = _sample_pose(template, rng)
        verts_low, verts_mid, verts_high, joints3d = lbs_pose(template, pose)
        s, t = _fit_camera(verts_low, image_size, rng)
        points2d = s * verts_low[:, :2] + t
        renders.append(_render(points2d, image_size, noise_sigma, rng))
        vl.append(verts_low)
        vm.append(verts_mid)
        vh.append(verts_high)
        j3.append(joints3d)
        j2.append(s * joints3d[:, :2] + t)
        cam_s.append(s)
        cam_t.append(t)
        rots.append(pose.joint_rotations)
        transl.append(pose.root_translation)
    arrays = {
        "render": np.stack(renders),
        "verts_low": np.stack(vl),
        "verts_mid": np.stack(vm),
        "verts_high": np.stack(vh),
        "joints3d": np.stack(j3),
        "joints2d": np.stack(j2),
        "cam_s": np.asarray(cam_s),
        "cam_t": np.stack(cam_t),
        "pose_rotations": np.stack(rots),
        "pose_translation": np.stack(transl),
    }
    meta = {
        "n": n,
        "seed": seed,
        "image_size": image_size,
        "noise_sigma": noise_sigma,
        "v_low": template.v_low,
    }
    if out_path is not None:
        save_container(out_path, arrays, meta)
    return arrays, meta
