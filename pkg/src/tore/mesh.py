"""Procedural articulated body template, LBS ground truth and pose metrics.

The template is a license-free stand-in for a parametric body model: a 14
joint kinematic chain wrapped in per-bone prisms, with fixed midpoint
subdivision to mid/high resolutions, a joint regressor over the high-res
vertices and two-bone soft skinning weights.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

NUM_JOINTS = 14

# rest skeleton, model units; pelvis is the root at index 0
JOINT_NAMES = [
    "pelvis", "neck", "l_shoulder", "l_elbow", "l_wrist",
    "r_shoulder", "r_elbow", "r_wrist", "l_hip", "l_knee",
    "l_ankle", "r_hip", "r_knee", "r_ankle",
]

REST_JOINTS = np.array([
    [0.00, 0.00, 0.00],    # pelvis
    [0.00, 0.55, 0.00],    # neck
    [0.18, 0.50, 0.00],    # l_shoulder
    [0.42, 0.50, 0.00],    # l_elbow
    [0.66, 0.50, 0.00],    # l_wrist
    [-0.18, 0.50, 0.00],   # r_shoulder
    [-0.42, 0.50, 0.00],   # r_elbow
    [-0.66, 0.50, 0.00],   # r_wrist
    [0.10, -0.06, 0.00],   # l_hip
    [0.10, -0.50, 0.00],   # l_knee
    [0.10, -0.94, 0.00],   # l_ankle
    [-0.10, -0.06, 0.00],  # r_hip
    [-0.10, -0.50, 0.00],  # r_knee
    [-0.10, -0.94, 0.00],  # r_ankle
], dtype=np.float64)

BONE_PARENTS = np.array([-1, 0, 1, 2, 3, 1, 5, 6, 0, 8, 9, 0, 11, 12])

# vertex counts of the full-scale template lineage; flop presets only,
# never instantiated as geometry
PAPER_LEVELS = (431, 1723, 6890)


@dataclass
class TemplateCounts:
    joints: int = NUM_JOINTS
    v_low: int = 110


@dataclass
class Pose:
    """Synthetic ground-truth generator state."""

    joint_rotations: np.ndarray  # [J, 3] axis-angle
    root_translation: np.ndarray = field(default_factory=lambda: np.zeros(3))
    shape_scale: float = 1.0


@dataclass
class MeshTemplate:
    verts_low: np.ndarray       # [V_l, 3] rest pose
    faces_low: np.ndarray       # [F_l, 3]
    verts_mid: np.ndarray
    faces_mid: np.ndarray
    verts_high: np.ndarray
    faces_high: np.ndarray
    u1: np.ndarray              # [V_m, V_l]
    u2: np.ndarray              # [V_h, V_m]
    joint_regressor: np.ndarray  # [J, V_h], rows sum to 1
    blend_weights: np.ndarray   # [V_l, J], rows sum to 1, >= 0
    adjacency: np.ndarray       # [V_l, V_l] bool, 1-ring + self
    bone_parents: np.ndarray    # [J]
    rest_joints: np.ndarray     # [J, 3]

    @property
    def v_low(self) -> int:
        return self.verts_low.shape[0]

    @property
    def v_mid(self) -> int:
        return self.verts_mid.shape[0]

    @property
    def v_high(self) -> int:
        return self.verts_high.shape[0]

    @property
    def joints(self) -> int:
        return self.rest_joints.shape[0]

    def bbox_diagonal(self) -> float:
        lo = self.verts_high.min(axis=0)
        hi = self.verts_high.max(axis=0)
        return float(np.linalg.norm(hi - lo))


def _orthonormal_frame(direction: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    ref = np.array([0.0, 0.0, 1.0])
    if abs(direction @ ref) > 0.9:
        ref = np.array([1.0, 0.0, 0.0])
    n1 = np.cross(direction, ref)
    n1 /= np.linalg.norm(n1)
    n2 = np.cross(direction, n1)
    return n1, n2


def _prism(p: np.ndarray, c: np.ndarray, k: int, base: int):
    """Closed triangulated k-gon prism along the bone p -> c."""
    axis = c - p
    length = np.linalg.norm(axis)
    direction = axis / length
    n1, n2 = _orthonormal_frame(direction)
    radius = float(np.clip(0.25 * length, 0.03, 0.07))
    inset = 0.12 * length
    angles = 2 * np.pi * np.arange(k) / k
    ring = radius * (np.outer(np.cos(angles), n1) + np.outer(np.sin(angles), n2))
    verts = np.concatenate([p + inset * direction + ring, c - inset * direction + ring])
    a = np.arange(k) + base
    b = a + k
    faces = []
    for i in range(k):
        j = (i + 1) % k
        faces.append([a[i], a[j], b[i]])
        faces.append([a[j], b[j], b[i]])
    for i in range(1, k - 1):
        faces.append([a[0], a[i], a[i + 1]])
        faces.append([b[0], b[i + 1], b[i]])
    return verts, np.array(faces)


def _subdivide(verts: np.ndarray, faces: np.ndarray):
    """Midpoint subdivision; returns (U, new_faces) with convex U rows."""
    v = verts.shape[0]
    edge_ids: dict[tuple[int, int], int] = {}
    rows = []
    for tri in faces:
        for e in ((tri[0], tri[1]), (tri[1], tri[2]), (tri[2], tri[0])):
            key = (min(e), max(e))
            if key not in edge_ids:
                edge_ids[key] = v + len(rows)
                rows.append(key)
    u = np.zeros((v + len(rows), v))
    u[:v, :v] = np.eye(v)
    for i, (e0, e1) in enumerate(rows):
        u[v + i, e0] = 0.5
        u[v + i, e1] = 0.5
    new_faces = []
    for a, b, c in faces:
        mab = edge_ids[(min(a, b), max(a, b))]
        mbc = edge_ids[(min(b, c), max(b, c))]
        mca = edge_ids[(min(c, a), max(c, a))]
        new_faces.extend([[a, mab, mca], [b, mbc, mab], [c, mca, mbc], [mab, mbc, mca]])
    return u, np.array(new_faces)


def _point_segment_distance(points: np.ndarray, a: np.ndarray, b: np.ndarray) -> np.ndarray:
    ab = b - a
    t = np.clip((points - a) @ ab / (ab @ ab), 0.0, 1.0)
    closest = a + t[:, None] * ab
    return np.linalg.norm(points - closest, axis=1)


def _fit_regressor_row(verts: np.ndarray, target: np.ndarray, k: int) -> tuple[np.ndarray, np.ndarray]:
    """Convex-sum weights over the k nearest vertices reproducing target."""
    dists = np.linalg.norm(verts - target, axis=1)
    idx = np.argsort(dists)[:k]
    sel = verts[idx]  # [k, 3]
    gram = sel @ sel.T + 1e-9 * np.eye(k)
    kkt = np.zeros((k + 1, k + 1))
    kkt[:k, :k] = 2 * gram
    kkt[:k, k] = 1.0
    kkt[k, :k] = 1.0
    rhs = np.concatenate([2 * sel @ target, [1.0]])
    sol = np.linalg.solve(kkt, rhs)
    return idx, sol[:k]


def build_template(seed: int = 0, counts: TemplateCounts | None = None) -> MeshTemplate:
    """Build the desk-scale articulated template.

    The vertex budget must be even and at least 6 per bone (prisms need a
    triangular cross-section).  ``seed`` is accepted for interface stability;
    the construction itself is deterministic.
    """
    del seed
    counts = counts or TemplateCounts()
    if counts.joints != NUM_JOINTS:
        raise ValueError(f"body preset requires {NUM_JOINTS} joints")
    n_bones = NUM_JOINTS - 1
    if counts.v_low % 2 != 0 or counts.v_low < 6 * n_bones:
        raise ValueError(f"coarse vertex budget too small (need even, >= {6 * n_bones})")

    ring_total = counts.v_low // 2
    ks = np.full(n_bones, ring_total // n_bones)
    ks[: ring_total % n_bones] += 1

    bones = [(BONE_PARENTS[j], j) for j in range(1, NUM_JOINTS)]
    all_verts, all_faces, base = [], [], 0
    for (p, c), k in zip(bones, ks):
        verts, faces = _prism(REST_JOINTS[p], REST_JOINTS[c], int(k), base)
        all_verts.append(verts)
        all_faces.append(faces)
        base += verts.shape[0]
    verts_low = np.concatenate(all_verts)
    faces_low = np.concatenate(all_faces)
    assert verts_low.shape[0] == counts.v_low

    # two-bone soft skinning; bone (p, c) is driven by its proximal joint p
    dists = np.stack(
        [_point_segment_distance(verts_low, REST_JOINTS[p], REST_JOINTS[c]) for p, c in bones],
        axis=1,
    )  # [V_l, n_bones]
    blend = np.zeros((counts.v_low, NUM_JOINTS))
    order = np.argsort(dists, axis=1)
    for v in range(counts.v_low):
        b1, b2 = order[v, 0], order[v, 1]
        w1 = 1.0 / (dists[v, b1] + 1e-3)
        w2 = 1.0 / (dists[v, b2] + 1e-3)
        total = w1 + w2
        blend[v, bones[b1][0]] += w1 / total
        blend[v, bones[b2][0]] += w2 / total

    u1, faces_mid = _subdivide(verts_low, faces_low)
    verts_mid = u1 @ verts_low
    u2, faces_high = _subdivide(verts_mid, faces_mid)
    verts_high = u2 @ verts_mid

    regressor = np.zeros((NUM_JOINTS, verts_high.shape[0]))
    for j in range(NUM_JOINTS):
        for k_try in (16, 32, 64):
            idx, w = _fit_regressor_row(verts_high, REST_JOINTS[j], k_try)
            if np.linalg.norm(verts_high[idx].T @ w - REST_JOINTS[j]) < 1e-3:
                break
        else:
            raise RuntimeError(f"joint regressor fit failed for joint {j}")
        regressor[j, idx] = w

    adjacency = np.eye(counts.v_low, dtype=bool)
    for a, b, c in faces_low:
        adjacency[a, b] = adjacency[b, a] = True
        adjacency[b, c] = adjacency[c, b] = True
        adjacency[c, a] = adjacency[a, c] = True

    return MeshTemplate(
        verts_low=verts_low, faces_low=faces_low,
        verts_mid=verts_mid, faces_mid=faces_mid,
        verts_high=verts_high, faces_high=faces_high,
        u1=u1, u2=u2,
        joint_regressor=regressor, blend_weights=blend,
        adjacency=adjacency, bone_parents=BONE_PARENTS.copy(),
        rest_joints=REST_JOINTS.copy(),
    )


def _axis_angle_matrix(aa: np.ndarray) -> np.ndarray:
    theta = np.linalg.norm(aa)
    if theta < 1e-12:
        return np.eye(3)
    axis = aa / theta
    kx = np.array([
        [0, -axis[2], axis[1]],
        [axis[2], 0, -axis[0]],
        [-axis[1], axis[0], 0],
    ])
    return np.eye(3) + np.sin(theta) * kx + (1 - np.cos(theta)) * (kx @ kx)


def _homogeneous(rot: np.ndarray, trans: np.ndarray) -> np.ndarray:
    m = np.eye(4)
    m[:3, :3] = rot
    m[:3, 3] = trans
    return m


def lbs_pose(template: MeshTemplate, pose: Pose):
    """Linear blend skinning over forward-kinematics joint transforms.

    Returns (verts_low, verts_mid, verts_high, joints3d); joints are
    regressed from the high-res vertices.
    """
    s = pose.shape_scale
    rest = s * template.rest_joints
    rest_verts = s * template.verts_low

    j = template.joints
    globals_posed = np.zeros((j, 4, 4))
    for i in range(j):
        rot = _axis_angle_matrix(pose.joint_rotations[i])
        parent = template.bone_parents[i]
        if parent < 0:
            local = _homogeneous(rot, rest[i] + pose.root_translation)
        else:
            local = _homogeneous(rot, rest[i] - rest[parent])
        globals_posed[i] = local if parent < 0 else globals_posed[parent] @ local

    # skinning transform relative to the (scaled) rest frame of each joint
    skin = np.zeros((j, 4, 4))
    for i in range(j):
        inv_rest = _homogeneous(np.eye(3), -rest[i])
        skin[i] = globals_posed[i] @ inv_rest

    hom = np.concatenate([rest_verts, np.ones((rest_verts.shape[0], 1))], axis=1)
    per_joint = np.einsum("jab,vb->jva", skin, hom)[:, :, :3]
    verts_low = np.einsum("vj,jva->va", template.blend_weights, per_joint)
    verts_mid, verts_high = upsample(verts_low, template.u1, template.u2)
    joints3d = template.joint_regressor @ verts_high
    return verts_low, verts_mid, verts_high, joints3d


def upsample(verts_low: np.ndarray, u1: np.ndarray, u2: np.ndarray):
    if u1.shape[1] != verts_low.shape[0]:
        raise ValueError(f"upsample shape mismatch: U1 {u1.shape} vs verts {verts_low.shape}")
    verts_mid = u1 @ verts_low
    if u2.shape[1] != verts_mid.shape[0]:
        raise ValueError(f"upsample shape mismatch: U2 {u2.shape} vs mid {verts_mid.shape}")
    return verts_mid, u2 @ verts_mid


def regress_joints(verts_high: np.ndarray, joint_regressor: np.ndarray) -> np.ndarray:
    return joint_regressor @ verts_high


@dataclass
class ProcrustesResult:
    aligned: np.ndarray
    scale: float
    rotation: np.ndarray
    translation_only: bool


def procrustes_align(x: np.ndarray, y: np.ndarray) -> ProcrustesResult:
    """Optimal similarity transform of x onto y (least squares, det(R)=+1).

    Falls back to translation-only alignment when the cross-covariance is
    rank deficient, flagged on the result.
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape or x.shape[0] < 3:
        raise ValueError("procrustes_align needs matching [N>=3, 3] inputs")
    mu_x, mu_y = x.mean(axis=0), y.mean(axis=0)
    xc, yc = x - mu_x, y - mu_y
    h = xc.T @ yc
    u, sig, vt = np.linalg.svd(h)
    if sig[1] < 1e-12 * max(1.0, sig[0]) or np.sum(xc**2) < 1e-24:
        return ProcrustesResult(x - mu_x + mu_y, 1.0, np.eye(3), True)
    d = np.sign(np.linalg.det(vt.T @ u.T))
    corr = np.array([1.0, 1.0, d])
    rot = vt.T @ np.diag(corr) @ u.T
    scale = float((sig * corr).sum() / np.sum(xc**2))
    aligned = scale * xc @ rot.T + mu_y
    return ProcrustesResult(aligned, scale, rot, False)


def metrics(pred_joints: np.ndarray, pred_verts_high: np.ndarray,
            gt_joints: np.ndarray, gt_verts_high: np.ndarray) -> dict[str, float]:
    """MPJPE / PAMPJPE / MPVE in model units (pelvis-centered where noted)."""
    if pred_joints.shape != gt_joints.shape or pred_verts_high.shape != gt_verts_high.shape:
        raise ValueError("metrics shape mismatch")
    pj = pred_joints - pred_joints[0]
    gj = gt_joints - gt_joints[0]
    pv = pred_verts_high - pred_joints[0]
    gv = gt_verts_high - gt_joints[0]
    mpjpe = float(np.mean(np.linalg.norm(pj - gj, axis=1)))
    mpve = float(np.mean(np.linalg.norm(pv - gv, axis=1)))
    aligned = procrustes_align(pred_joints, gt_joints).aligned
    pampjpe = float(np.mean(np.linalg.norm(aligned - gt_joints, axis=1)))
    return {"MPJPE": mpjpe, "PAMPJPE": pampjpe, "MPVE": mpve}
