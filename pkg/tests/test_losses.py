"""Projection and the weighted training objective."""

import numpy as np
import pytest

from tore import losses, mesh
from tore import tensor as T
from tore.itp import PrunerOutput


def make_camera(s=1.0, t=(0.0, 0.0)):
    return losses.CameraParams(s=T.Tensor(np.asarray(s)), t=T.Tensor(np.asarray(t)))


class FakeOutput:
    """Minimal stand-in for a model output built from ground truth."""

    def __init__(self, gt: losses.SampleGT, camera, pruner=None, jitter=0.0):
        rng = np.random.default_rng(0)

        def mk(a):
            a = np.asarray(a, dtype=np.float32)
            return T.Tensor(a + jitter * rng.normal(size=a.shape).astype(np.float32))

        self.verts_low = mk(gt.verts_low)
        self.verts_mid = mk(gt.verts_mid)
        self.verts_high = mk(gt.verts_high)
        self.joints3d = mk(gt.joints3d)
        self.joints_from_mesh = mk(gt.joints3d)
        self.camera = camera
        self.pruner = pruner


@pytest.fixture(scope="module")
def gt_sample():
    template = mesh.build_template()
    pose = mesh.Pose(joint_rotations=np.full((14, 3), 0.2))
    vl, vm, vh, j3 = mesh.lbs_pose(template, pose)
    s, t = 20.0, np.array([28.0, 28.0])
    return losses.SampleGT(vl, vm, vh, j3, s * j3[:, :2] + t), (s, t)


class TestProjection:
    def test_orthographic_drop(self):
        x = np.array([[1.0, 2.0, 9.0]])
        assert np.allclose(losses.weak_perspective_project(x, make_camera()), [[1, 2]])

    def test_scale_and_shift(self):
        out = losses.weak_perspective_project(
            np.array([[1.0, 2.0, 9.0]]), make_camera(2.0, (1.0, 1.0)))
        assert np.allclose(out, [[3.0, 5.0]])

    def test_z_independent(self):
        cam = make_camera(1.5, (0.3, -0.2))
        a = losses.weak_perspective_project(np.array([[1.0, 2.0, 0.0]]), cam)
        b = losses.weak_perspective_project(np.array([[1.0, 2.0, 77.0]]), cam)
        assert np.allclose(a, b)

    def test_tensor_path_matches_numpy(self):
        rng = np.random.default_rng(1)
        x = rng.normal(size=(6, 3)).astype(np.float32)
        cam = make_camera(1.7, (0.4, -0.6))
        assert np.allclose(losses.weak_perspective_project(T.Tensor(x), cam).data,
                           losses.weak_perspective_project(x, cam), atol=1e-6)


class TestVertexLoss:
    def test_zero_on_equal(self, gt_sample):
        gt, _ = gt_sample
        levels = (T.Tensor(gt.verts_low), T.Tensor(gt.verts_mid), T.Tensor(gt.verts_high))
        assert losses.vertex_loss(levels, (gt.verts_low, gt.verts_mid, gt.verts_high)).item() == 0.0

    def test_unit_offset_gives_three(self, gt_sample):
        gt, _ = gt_sample
        levels = (T.Tensor(gt.verts_low + 1), T.Tensor(gt.verts_mid + 1),
                  T.Tensor(gt.verts_high + 1))
        val = losses.vertex_loss(levels, (gt.verts_low, gt.verts_mid, gt.verts_high)).item()
        assert val == pytest.approx(3.0, abs=1e-5)

    def test_level_count_enforced(self):
        with pytest.raises(ValueError):
            losses.vertex_loss((T.Tensor(np.zeros((2, 3))),), (np.zeros((2, 3)),))


class TestJointLosses:
    def test_all_zero_on_perfect(self, gt_sample):
        gt, (s, t) = gt_sample
        j = T.Tensor(gt.joints3d)
        l3, lr3, lr2 = losses.joint_losses(j, j, gt.joints3d, gt.joints2d,
                                           make_camera(s, t))
        assert l3.item() == 0.0 and lr3.item() == 0.0
        assert lr2.item() < 1e-4  # f32 projection round-off only

    def test_regressed_from_gt_mesh(self, gt_sample):
        # the template guarantees regressed joints reproduce the gt joints
        gt, _ = gt_sample
        template = mesh.build_template()
        regressed = template.joint_regressor @ np.asarray(gt.verts_high, dtype=np.float64)
        l3, lr3, _ = losses.joint_losses(
            T.Tensor(gt.joints3d), T.Tensor(regressed), gt.joints3d, gt.joints2d,
            make_camera())
        assert lr3.item() < 1e-3

    def test_camera_decoupling(self, gt_sample):
        gt, (s, t) = gt_sample
        j = T.Tensor(gt.joints3d)
        l3, _, lr2 = losses.joint_losses(j, j, gt.joints3d, gt.joints2d,
                                         make_camera(s * 2, t))
        assert l3.item() == 0.0
        assert lr2.item() > 0.0


class TestTotalLoss:
    def test_availability_flags_zero_everything(self, gt_sample):
        gt, _ = gt_sample
        out = FakeOutput(gt, make_camera(), jitter=0.3)
        w = losses.LossWeights(alpha=0.0, beta=0.0)
        total, terms = losses.total_loss(out, gt, w)
        assert total.item() == 0.0

    def test_zero_on_perfect_without_pruner(self, gt_sample):
        gt, (s, t) = gt_sample
        out = FakeOutput(gt, make_camera(s, t))
        total, terms = losses.total_loss(out, gt, losses.LossWeights())
        assert total.item() < 1e-1  # f32 projection round-off under lambda=100
        assert terms["L_V3D"] == 0.0 and terms["L_J3D"] == 0.0
        assert terms["L_P"] == 0.0

    def test_lambda_linearity(self, gt_sample):
        gt, _ = gt_sample
        out1 = FakeOutput(gt, make_camera(), jitter=0.2)
        out2 = FakeOutput(gt, make_camera(), jitter=0.2)
        base, _ = losses.total_loss(out1, gt, losses.LossWeights(1, 100, 100, 1000))
        scaled, _ = losses.total_loss(out2, gt, losses.LossWeights(3, 300, 300, 3000))
        assert scaled.item() == pytest.approx(3 * base.item(), rel=1e-6)

    def test_pruning_term_gated_by_pruner(self, gt_sample):
        gt, (s, t) = gt_sample
        mapping = T.Tensor(np.full((49, 39), 1 / 39, dtype=np.float32))
        pruner = PrunerOutput(z=T.Tensor(np.zeros((39, 128))), mapping=mapping)
        without, t_without = losses.total_loss(FakeOutput(gt, make_camera(s, t)), gt,
                                               losses.LossWeights())
        with_p, t_with = losses.total_loss(FakeOutput(gt, make_camera(s, t), pruner),
                                           gt, losses.LossWeights())
        assert t_without["L_P"] == 0.0
        assert t_with["L_P"] < 0.0
        diff = with_p.item() - without.item()
        assert diff == pytest.approx(t_with["L_P"], abs=1e-6)

    def test_full_body_pruning_floor(self, gt_sample):
        # gt camera frames the body, every row of the uniform mapping counts
        gt, (s, t) = gt_sample
        mapping = T.Tensor(np.full((49, 39), 1 / 39, dtype=np.float32))
        pruner = PrunerOutput(z=T.Tensor(np.zeros((39, 128))), mapping=mapping)
        _, terms = losses.total_loss(FakeOutput(gt, make_camera(s, t), pruner),
                                     gt, losses.LossWeights())
        assert -1.0 / 39 - 1e-6 <= terms["L_P"] <= 0.0

    def test_weight_validation(self):
        with pytest.raises(ValueError):
            losses.LossWeights(lp=-1.0)

    def test_gradient_unit_weights(self, gt_sample):
        # finite differences against the composed objective; unit lambdas keep
        # f32 cancellation noise inside the tolerance (see acceptance notes)
        gt, (s, t) = gt_sample
        rng = np.random.default_rng(2)
        for _ in range(10):
            # strictly positive offsets keep every L1 term away from its kink,
            # which central differences cannot straddle at eps=1e-3
            delta = 0.03 + 0.04 * rng.random(size=(110, 3))
            verts = T.Tensor(
                (np.asarray(gt.verts_low) + delta).astype(np.float32),
                requires_grad=True)
            template = mesh.build_template()
            u1 = T.Tensor(template.u1)
            u2 = T.Tensor(template.u2)
            rj = T.Tensor(template.joint_regressor)
            cam = make_camera(s, t)
            w = losses.LossWeights(1.0, 1.0, 1.0, 1.0)

            def f(v):
                mid = u1 @ v
                high = u2 @ mid
                joints = rj @ high

                class Out:
                    verts_low = v
                    verts_mid = mid
                    verts_high = high
                    joints3d = joints
                    joints_from_mesh = joints
                    camera = cam
                    pruner = None

                return losses.total_loss(Out, gt, w)[0]

            assert T.grad_check(f, verts) < 1e-3
