"""Analytical flop model: formula, presets, published-reduction bands and
the executed-counter oracle."""

import numpy as np
import pytest

import tore
from tore import flops
from tore import tensor as T


class TestAttentionFormula:
    def test_unit_expansion(self):
        # 2(1+2)·1 + 2 + 2 + 2 + 4 by direct expansion of the formula
        assert flops.attention_flops(1, 1, 1, 1) == 16

    def test_square_case_identity(self):
        # Mq = Mk = M: score + weighted-sum terms equal 4·M²·d
        m, d = 13, 32
        with_ff = flops.attention_flops(m, m, d, 0)
        assert with_ff - (2 * 3 * m * d * d + 2 * m * d * d) == 4 * m * m * d

    def test_quadratic_token_growth(self):
        # doubling tokens more than doubles the total (quadratic score term)
        small = flops.attention_flops(10, 10, 8, 32)
        big = flops.attention_flops(20, 20, 8, 32)
        assert big > 2 * small

    def test_positive_dims_required(self):
        with pytest.raises(ValueError):
            flops.attention_flops(0, 1, 1, 1)

    def test_heads_do_not_change_total(self):
        assert flops.attention_flops(8, 8, 16, 64, heads=1) == \
            flops.attention_flops(8, 8, 16, 64, heads=4)


class TestPresets:
    def test_unknown_preset(self):
        with pytest.raises(ValueError):
            flops.model_flops("metro_medium")

    def test_totals_are_component_sums(self):
        for preset in flops.PRESETS:
            rate = 0.2 if preset == "fastmetro_gtr_itp" else 0.0
            rep = flops.model_flops(preset, prune_rate=rate)
            assert rep.total == sum(rep.components.values())
            assert all(v >= 0 for v in rep.components.values())

    def test_itp_requires_rate(self):
        with pytest.raises(ValueError):
            flops.model_flops("fastmetro_gtr_itp")

    def test_monotone_in_token_count(self):
        totals = [flops.model_flops("fastmetro_gtr_itp", prune_rate=r).total
                  for r in (0.1, 0.2, 0.3, 0.5, 0.7)]
        assert totals == sorted(totals, reverse=True)
        assert flops.model_flops("fastmetro_full").total > \
            flops.model_flops("fastmetro_gtr").total

    def test_small_cheaper_than_large(self):
        assert flops.model_flops("fastmetro_small_full").total < \
            flops.model_flops("fastmetro_full").total
        assert flops.model_flops("fastmetro_small_gtr").total < \
            flops.model_flops("fastmetro_gtr").total

    def test_nsr_counted_in_gtr_totals(self):
        rep = flops.model_flops("metro_gtr")
        assert "nsr" in rep.components
        assert rep.components["nsr"] == flops.model_flops("nsr").total


class TestReductions:
    def test_identity_and_half(self):
        a = flops.model_flops("metro_full")
        assert flops.reduction_report(a, a).percent == 0.0
        half = flops.FlopsReport("half", {"x": a.total // 2})
        assert flops.reduction_report(a, half).percent == pytest.approx(50.0, abs=0.1)

    def test_published_bands(self):
        metro = flops.reduction_report(flops.model_flops("metro_full"),
                                       flops.model_flops("metro_gtr")).percent
        assert 94.1 <= metro <= 100.0
        fast = flops.reduction_report(flops.model_flops("fastmetro_full"),
                                      flops.model_flops("fastmetro_gtr")).percent
        assert 86.4 <= fast <= 92.4
        base = flops.model_flops("fastmetro_gtr")
        itp20 = flops.reduction_report(
            base, flops.model_flops("fastmetro_gtr_itp", prune_rate=0.2)).percent
        assert 10.3 <= itp20 <= 18.3
        itp50 = flops.reduction_report(
            base, flops.model_flops("fastmetro_gtr_itp", prune_rate=0.5)).percent
        assert 25.0 <= itp50 <= 45.0

    def test_reduction_consistency(self):
        base = flops.model_flops("fastmetro_full")
        var = flops.model_flops("fastmetro_gtr")
        r = flops.reduction_report(base, var)
        assert var.total == pytest.approx(base.total * (1 - r.percent / 100), rel=1e-12)

    def test_csv_rows(self):
        r = flops.reduction_report(flops.model_flops("metro_full"),
                                   flops.model_flops("metro_gtr"))
        rows = r.csv_rows()
        assert any(row.startswith("metro_gtr,total,") for row in rows)


class TestExecutedOracle:
    @pytest.mark.parametrize("kwargs", [
        {"prune_rate": 0.2},
        {"prune_rate": 0.0},
        {"nsr_head": "mlp"},
        {"variant": "encoder_only"},
    ])
    def test_desk_model_matches_counter(self, kwargs):
        template = tore.build_template()
        cfg = tore.ModelConfig(**kwargs)
        model = tore.ToreModel(cfg, template, np.random.default_rng(0))
        x = T.Tensor(np.random.default_rng(1).normal(size=(7, 7, cfg.backbone_dim)))
        with tore.count_flops() as counter:
            model.forward(x)
        analytic = flops.forward_flops_with_template(
            cfg, template.v_mid, template.v_high).total
        assert abs(counter.total - analytic) / counter.total < 0.05

    def test_transformer_only_model_matches(self):
        # without the mesh/upsample tail the match must also hold
        template = tore.build_template()
        cfg = tore.ModelConfig()
        rep = flops.forward_flops(cfg)
        with_tail = flops.forward_flops_with_template(cfg, template.v_mid, template.v_high)
        assert with_tail.total > rep.total
        assert with_tail.components["upsample"] == with_tail.total - rep.total
