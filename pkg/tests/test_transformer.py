"""Attention blocks: masking exactness, positions, gradients."""

import math

import numpy as np
import pytest

from tore import mesh
from tore import tensor as T
from tore import transformer as tr


@pytest.fixture(scope="module")
def template():
    return mesh.build_template()


class TestPositionalEncoding:
    def test_first_position_pattern(self):
        pe = tr.sinusoidal_pe(5, 8)
        assert np.allclose(pe[0], [0, 1, 0, 1, 0, 1, 0, 1])

    def test_matches_formula(self):
        pe = tr.sinusoidal_pe(50, 16)
        rng = np.random.default_rng(0)
        for _ in range(20):
            pos = int(rng.integers(50))
            i = int(rng.integers(8))
            angle = pos / (10000 ** (i / 8))
            assert pe[pos, 2 * i] == pytest.approx(math.sin(angle), abs=1e-12)
            assert pe[pos, 2 * i + 1] == pytest.approx(math.cos(angle), abs=1e-12)

    def test_odd_dim_rejected(self):
        with pytest.raises(ValueError):
            tr.sinusoidal_pe(4, 7)

    def test_rows_distinct(self):
        pe = tr.sinusoidal_pe(100, 32)
        assert np.unique(pe, axis=0).shape[0] == 100


class TestMasks:
    def test_attn_mask_validation(self):
        with pytest.raises(ValueError):
            tr.AttnMask(np.zeros((3, 3), dtype=bool))
        with pytest.raises(ValueError):
            tr.AttnMask(np.ones(3, dtype=bool))

    def test_adjacency_mask(self, template):
        m = tr.adjacency_mask(template)
        assert m.allow.shape == (template.v_low, template.v_low)
        assert np.all(np.diag(m.allow))

    def test_random_joint_mask(self):
        rng = np.random.default_rng(1)
        keep = np.stack([tr.random_joint_mask(14, 0.3, rng) for _ in range(2000)])
        assert keep.dtype == bool
        assert np.mean(~keep) == pytest.approx(0.3, abs=0.02)
        assert np.all(tr.random_joint_mask(14, 0.0, rng))
        with pytest.raises(ValueError):
            tr.random_joint_mask(14, 1.0, rng)


class TestAttention:
    def test_rows_sum_to_one(self):
        rng = np.random.default_rng(2)
        attn = tr.MultiHeadAttention(32, 4, rng)
        x = T.Tensor(rng.normal(size=(10, 32)))
        _, maps = attn(x, x, x)
        assert maps.shape == (4, 10, 10)
        assert np.allclose(maps.sum(axis=-1), 1.0, atol=1e-5)

    def test_masked_weights_exactly_zero(self, template):
        rng = np.random.default_rng(3)
        attn = tr.MultiHeadAttention(32, 4, rng)
        mask = tr.adjacency_mask(template)
        x = T.Tensor(rng.normal(size=(template.v_low, 32)))
        _, maps = attn(x, x, x, mask)
        forbidden = ~mask.allow
        assert np.all(maps[:, forbidden] == 0.0)
        assert np.allclose(maps.sum(axis=-1), 1.0, atol=1e-5)

    def test_cross_attention_shapes(self):
        rng = np.random.default_rng(4)
        attn = tr.MultiHeadAttention(16, 2, rng)
        q = T.Tensor(rng.normal(size=(5, 16)))
        kv = T.Tensor(rng.normal(size=(9, 16)))
        out, maps = attn(q, kv, kv)
        assert out.shape == (5, 16)
        assert maps.shape == (2, 5, 9)

    def test_shape_validation(self):
        rng = np.random.default_rng(5)
        attn = tr.MultiHeadAttention(16, 2, rng)
        q = T.Tensor(np.zeros((5, 16)))
        with pytest.raises(ValueError):
            attn(q, T.Tensor(np.zeros((5, 8))), q)
        with pytest.raises(ValueError):
            attn(q, q, q, tr.AttnMask(np.ones((4, 5), dtype=bool)))
        with pytest.raises(ValueError):
            tr.MultiHeadAttention(15, 2, rng)

    def test_gradients(self):
        rng = np.random.default_rng(6)
        for _ in range(10):
            attn = tr.MultiHeadAttention(8, 2, rng)
            x = T.Tensor(rng.uniform(-0.5, 0.5, size=(6, 8)).astype(np.float32),
                         requires_grad=True)
            w = T.Tensor(rng.uniform(-1, 1, size=(6, 8)))
            assert T.grad_check(lambda t: T.tsum(attn(t, t, t)[0] * w), x) < 1e-3

    def test_masked_gradients(self):
        rng = np.random.default_rng(7)
        allow = np.eye(6, dtype=bool) | (np.arange(6)[:, None] == (np.arange(6) + 1) % 6)
        mask = tr.AttnMask(allow)
        for _ in range(10):
            attn = tr.MultiHeadAttention(8, 2, rng)
            x = T.Tensor(rng.uniform(-0.5, 0.5, size=(6, 8)).astype(np.float32),
                         requires_grad=True)
            w = T.Tensor(rng.uniform(-1, 1, size=(6, 8)))
            assert T.grad_check(lambda t: T.tsum(attn(t, t, t, mask)[0] * w), x) < 1e-3


class TestLayers:
    def test_encoder_layer_shapes_and_grad(self):
        rng = np.random.default_rng(8)
        cfg = tr.LayerConfig(model_dim=16, ff_dim=32, heads=2)
        for _ in range(10):
            layer = tr.EncoderLayer(cfg, rng)
            x = T.Tensor(rng.uniform(-0.5, 0.5, size=(7, 16)).astype(np.float32),
                         requires_grad=True)
            out, attn_map = layer(x)
            assert out.shape == (7, 16)
            assert attn_map.shape == (2, 7, 7)
            w = T.Tensor(rng.uniform(-1, 1, size=(7, 16)))
            assert T.grad_check(lambda t: T.tsum(layer(t)[0] * w), x) < 1e-3

    def test_decoder_layer_shapes_and_grad(self):
        rng = np.random.default_rng(9)
        cfg = tr.LayerConfig(model_dim=16, ff_dim=32, heads=2)
        mem = T.Tensor(rng.normal(size=(11, 16)))
        for _ in range(10):
            layer = tr.DecoderLayer(cfg, rng)
            x = T.Tensor(rng.uniform(-0.5, 0.5, size=(4, 16)).astype(np.float32),
                         requires_grad=True)
            out, self_map, cross_map = layer(x, mem)
            assert out.shape == (4, 16)
            assert self_map.shape == (2, 4, 4)
            assert cross_map.shape == (2, 4, 11)
            w = T.Tensor(rng.uniform(-1, 1, size=(4, 16)))
            assert T.grad_check(lambda t: T.tsum(layer(t, mem)[0] * w), x) < 1e-3

    def test_layer_config_validation(self):
        with pytest.raises(ValueError):
            tr.LayerConfig(model_dim=10, heads=4)

    def test_deterministic_forward(self):
        rng = np.random.default_rng(10)
        layer = tr.EncoderLayer(tr.LayerConfig(16, 32, 2), rng)
        x = T.Tensor(rng.normal(size=(5, 16)))
        a, _ = layer(x)
        b, _ = layer(x)
        assert np.array_equal(a.data, b.data)
