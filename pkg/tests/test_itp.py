"""Token pruning: cluster counts, mapping semantics, supervision bounds."""

import numpy as np
import pytest

from tore import itp
from tore import tensor as T


class TestTokenCount:
    def test_published_counts(self):
        assert itp.token_count(49, 0.2) == 39
        assert itp.token_count(49, 0.5) == 24

    def test_zero_rate_identity(self):
        assert itp.token_count(49, 0.0) == 49

    def test_floor_behavior(self):
        assert itp.token_count(10, 0.25) == 7

    def test_invalid_rates(self):
        with pytest.raises(ValueError):
            itp.token_count(49, 1.0)
        with pytest.raises(ValueError):
            itp.token_count(49, -0.1)
        with pytest.raises(ValueError):
            itp.token_count(1, 0.99)


class TestTokenPruner:
    @pytest.fixture(scope="class")
    def pruner(self):
        return itp.TokenPruner(7, 7, 128, 0.2, np.random.default_rng(0))

    def test_output_shapes(self, pruner):
        rng = np.random.default_rng(1)
        tokens = T.Tensor(rng.normal(size=(49, 128)))
        out = pruner(tokens)
        assert out.z.shape == (39, 128)
        assert out.mapping.shape == (49, 39)

    def test_mapping_row_stochastic(self, pruner):
        rng = np.random.default_rng(2)
        out = pruner(T.Tensor(rng.normal(size=(49, 128))))
        m = out.mapping.data
        assert np.all(m >= 0)
        assert np.allclose(m.sum(axis=1), 1.0, atol=1e-5)

    def test_input_validation(self, pruner):
        with pytest.raises(ValueError):
            pruner(T.Tensor(np.zeros((49, 64))))
        with pytest.raises(ValueError):
            itp.TokenPruner(7, 7, 130, 0.2, np.random.default_rng(0))

    def test_gradients_flow_to_conv(self, pruner):
        rng = np.random.default_rng(3)
        tokens = T.Tensor(rng.normal(size=(49, 128)).astype(np.float32))
        out = pruner(tokens)
        T.tsum(out.z).backward()
        assert pruner.conv_w.grad is not None
        assert np.any(pruner.conv_w.grad != 0)


class TestIndicatorGrid:
    def test_known_cells(self):
        pts = np.array([[4.0, 4.0], [28.0, 4.0]])  # cells (0,0) and (0,3)
        grid = itp.indicator_grid(pts, 7, 7, 56.0)
        expected = np.zeros((7, 7), dtype=bool)
        expected[0, 0] = expected[0, 3] = True
        assert np.array_equal(grid.occupied, expected)

    def test_border_clamping(self):
        pts = np.array([[-100.0, -100.0], [1000.0, 1000.0]])
        grid = itp.indicator_grid(pts, 7, 7, 56.0)
        assert grid.occupied[0, 0] and grid.occupied[6, 6]
        assert grid.occupied.sum() == 2

    def test_flat_order_row_major(self):
        grid = itp.indicator_grid(np.array([[12.0, 4.0]]), 7, 7, 56.0)  # cell (0,1)
        assert grid.flat()[1]

    def test_invalid_image_size(self):
        with pytest.raises(ValueError):
            itp.indicator_grid(np.zeros((1, 2)), 7, 7, 0.0)


def random_mapping(rng, hw, t):
    logits = rng.normal(size=(hw, t))
    e = np.exp(logits - logits.max(axis=1, keepdims=True))
    return T.Tensor(e / e.sum(axis=1, keepdims=True))


class TestPruningLoss:
    def test_bounds_on_random_instances(self):
        rng = np.random.default_rng(4)
        hw, t = 49, 39
        for _ in range(1000):
            mapping = random_mapping(rng, hw, t)
            occupied = rng.random((7, 7)) < rng.random()
            val = itp.pruning_loss(itp.IndicatorGrid(occupied), mapping).item()
            assert -1.0 / t - 1e-6 <= val <= 0.0

    def test_all_body_is_minimum(self):
        rng = np.random.default_rng(5)
        mapping = random_mapping(rng, 49, 39)
        full = itp.IndicatorGrid(np.ones((7, 7), dtype=bool))
        # rows sum to one, so the total mass is HW and the value is -1/T
        assert itp.pruning_loss(full, mapping).item() == pytest.approx(-1.0 / 39, abs=1e-7)

    def test_empty_is_zero(self):
        rng = np.random.default_rng(6)
        mapping = random_mapping(rng, 49, 39)
        empty = itp.IndicatorGrid(np.zeros((7, 7), dtype=bool))
        assert itp.pruning_loss(empty, mapping).item() == 0.0

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            itp.pruning_loss(itp.IndicatorGrid(np.zeros((6, 6), dtype=bool)),
                             T.Tensor(np.full((49, 39), 1 / 39)))

    def test_gradient(self):
        rng = np.random.default_rng(7)
        occupied = rng.random((7, 7)) < 0.5
        grid = itp.IndicatorGrid(occupied)
        for _ in range(10):
            scores = T.Tensor(rng.uniform(-1, 1, size=(49, 39)).astype(np.float32),
                              requires_grad=True)
            err = T.grad_check(
                lambda s: itp.pruning_loss(grid, T.softmax(s, axis=1)), scores)
            assert err < 1e-3
