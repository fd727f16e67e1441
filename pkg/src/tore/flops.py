"""Analytical transformer flop accounting.

Two levels of fidelity live here:

* coarse per-layer attention costs (``attention_flops``) used by the named
  full-scale presets that reproduce the published efficiency tables, and
* an exact desk-scale model (``forward_flops``) that mirrors every counted
  op of a real forward pass, validated against the instrumented counter.

All counts are multiply-accumulate pairs expressed as 2 flops, matching the
conventions in the tensor library.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from .gtr import ModelConfig
from .itp import token_count
from .tensor import (
    GELU_FLOPS_PER_ELEM,
    LAYERNORM_FLOPS_PER_ELEM,
    SOFTMAX_FLOPS_PER_ELEM,
    SOFTPLUS_FLOPS_PER_ELEM,
)

# published-configuration constants
PAPER_HW = 49
PAPER_JOINTS = 14
PAPER_V_COARSE = 431
METRO_DIMS = (1024, 256, 64)          # progressive encoder block dims
METRO_LAYERS_PER_BLOCK = 4
FASTMETRO_ENC = ((512, 2048), (512, 2048), (128, 512))  # (dim, ff) per layer
FASTMETRO_DEC_DIM = 512
FASTMETRO_DEC_FF = 2048
FASTMETRO_DEC_LAYERS = 3
FASTMETRO_SMALL_ENC = ((512, 2048),)
FASTMETRO_SMALL_DEC_LAYERS = 1
NSR_DIM = 128
NSR_FF = 512

PRESETS = (
    "metro_full",
    "metro_gtr",
    "fastmetro_full",
    "fastmetro_gtr",
    "fastmetro_gtr_itp",
    "fastmetro_small_full",
    "fastmetro_small_gtr",
    "nsr",
)


@dataclass
class FlopsReport:
    preset: str
    components: dict[str, int] = field(default_factory=dict)

    def add(self, name: str, flops: int) -> None:
        if flops < 0:
            raise ValueError("component flop counts must be non-negative")
        self.components[name] = self.components.get(name, 0) + int(flops)

    @property
    def total(self) -> int:
        return sum(self.components.values())


def attention_flops(mq: int, mk: int, d: int, ff: int, heads: int = 1) -> int:
    """Per-layer cost: QKV projections, scores, weighted sum, output
    projection, and feed-forward.  Head count does not change the total."""
    if min(mq, mk, d, heads) <= 0 or ff < 0:
        raise ValueError("attention dims must be positive")
    proj = 2 * (mq + 2 * mk) * d * d
    scores = 2 * mq * mk * d
    weighted = 2 * mq * mk * d
    out = 2 * mq * d * d
    feedforward = 4 * mq * d * ff
    return proj + scores + weighted + out + feedforward


def decoder_layer_flops_coarse(mq: int, mk: int, d: int, ff: int) -> int:
    """Decoder layer = self-attention block plus a cross-attention term."""
    return attention_flops(mq, mq, d, ff) + attention_flops(mq, mk, d, 0)


def _nsr_flops() -> int:
    """One joint self-attention layer plus one vertex decoder layer at the
    published coarse resolution."""
    joint = attention_flops(PAPER_JOINTS, PAPER_JOINTS, NSR_DIM, NSR_FF)
    vertex = decoder_layer_flops_coarse(PAPER_V_COARSE, PAPER_JOINTS, NSR_DIM, NSR_FF)
    return joint + vertex


def _metro_encoder(tokens: int) -> int:
    return sum(
        METRO_LAYERS_PER_BLOCK * attention_flops(tokens, tokens, d, 4 * d)
        for d in METRO_DIMS
    )


def _fastmetro(enc_layers, dec_layers: int, enc_tokens: int,
               dec_queries: int, dec_memory: int, report: FlopsReport) -> None:
    for d, ff in enc_layers:
        report.add("encoder", attention_flops(enc_tokens, enc_tokens, d, ff))
    for _ in range(dec_layers):
        report.add(
            "decoder",
            decoder_layer_flops_coarse(dec_queries, dec_memory,
                                       FASTMETRO_DEC_DIM, FASTMETRO_DEC_FF),
        )


def model_flops(preset: str, prune_rate: float = 0.0) -> FlopsReport:
    """Flops of a named full-scale configuration.

    Token bookkeeping: the full models carry image + camera + joint + coarse
    vertex tokens; the reduced models carry only camera + joint queries and
    delegate vertices to the shape regressor (counted under "nsr").  ITP
    presets shrink the image-token count via ``token_count``; the pruning
    module's own conv/score cost is backbone-side plumbing and excluded from
    the transformer total.
    """
    if preset not in PRESETS:
        raise ValueError(f"unknown preset {preset!r}")
    report = FlopsReport(preset)
    body_queries = PAPER_JOINTS + 1  # camera + joints

    if preset == "nsr":
        report.add("nsr", _nsr_flops())
        return report

    if preset.startswith("metro"):
        if preset == "metro_full":
            tokens = PAPER_HW + 1 + PAPER_JOINTS + PAPER_V_COARSE
            report.add("encoder", _metro_encoder(tokens))
        else:
            report.add("encoder", _metro_encoder(body_queries))
            report.add("nsr", _nsr_flops())
        return report

    small = preset.startswith("fastmetro_small")
    enc_layers = FASTMETRO_SMALL_ENC if small else FASTMETRO_ENC
    dec_layers = FASTMETRO_SMALL_DEC_LAYERS if small else FASTMETRO_DEC_LAYERS
    img_tokens = PAPER_HW
    if preset == "fastmetro_gtr_itp":
        if prune_rate <= 0.0:
            raise ValueError("fastmetro_gtr_itp needs prune_rate > 0")
        img_tokens = token_count(PAPER_HW, prune_rate)
    enc_tokens = img_tokens + 1  # camera token rides along the encoder
    full = preset.endswith("_full")
    dec_queries = (1 + PAPER_JOINTS + PAPER_V_COARSE) if full else body_queries
    _fastmetro(enc_layers, dec_layers, enc_tokens, dec_queries, enc_tokens, report)
    if not full:
        report.add("nsr", _nsr_flops())
    return report


@dataclass
class ReductionReport:
    base: FlopsReport
    variant: FlopsReport

    @property
    def percent(self) -> float:
        return 100.0 * (1.0 - self.variant.total / self.base.total)

    def csv_rows(self) -> list[str]:
        rows = []
        for rep in (self.base, self.variant):
            for name, flops in sorted(rep.components.items()):
                rows.append(f"{rep.preset},{name},{flops},")
            rows.append(f"{rep.preset},total,{rep.total},{100.0 * (1.0 - rep.total / self.base.total):.2f}")
        return rows


def reduction_report(base: FlopsReport, variant: FlopsReport) -> ReductionReport:
    return ReductionReport(base, variant)


# ---------------------------------------------------------------------------
# exact desk-scale model, mirroring the executed op sequence


def _ln_flops(m: int, d: int) -> int:
    # core normalization plus the affine gain/bias elementwise ops
    return m * d * LAYERNORM_FLOPS_PER_ELEM + 2 * m * d


def _ff_flops(m: int, d: int, ff: int) -> int:
    return (2 * m * d * ff + m * ff) + m * ff * GELU_FLOPS_PER_ELEM \
        + (2 * m * ff * d + m * d)


def _attn_flops_exact(mq: int, mk: int, d: int, heads: int, masked: bool) -> int:
    total = (2 * mq * d * d + mq * d) + 2 * (2 * mk * d * d + mk * d)  # QKV + biases
    total += 2 * mq * mk * d            # scores over all heads
    total += heads * mq * mk            # score scaling
    if masked:
        total += 2 * heads * mq * mk    # sentinel bias add + exact-zero clamp
    total += heads * mq * mk * SOFTMAX_FLOPS_PER_ELEM
    total += 2 * mq * mk * d            # weighted sum over all heads
    total += 2 * mq * d * d + mq * d    # output projection
    return total


def _encoder_layer_exact(m: int, d: int, ff: int, heads: int, masked: bool = False) -> int:
    return _ln_flops(m, d) + _attn_flops_exact(m, m, d, heads, masked) + m * d \
        + _ln_flops(m, d) + _ff_flops(m, d, ff) + m * d


def _decoder_layer_exact(mq: int, mk: int, d: int, ff: int, heads: int,
                         self_masked: bool = False) -> int:
    total = _ln_flops(mq, d) + _attn_flops_exact(mq, mq, d, heads, self_masked) + mq * d
    total += _ln_flops(mq, d) + _attn_flops_exact(mq, mk, d, heads, False) + mq * d
    total += _ln_flops(mq, d) + _ff_flops(mq, d, ff) + mq * d
    return total


def _linear_flops(m: int, din: int, dout: int) -> int:
    return 2 * m * din * dout + m * dout


def forward_flops(cfg: ModelConfig) -> FlopsReport:
    """Exact flop count of an eval-mode ``ToreModel.forward`` at desk scale.

    Follows the executed op sequence one-for-one, so it can be compared
    directly with the instrumented counter.
    """
    report = FlopsReport("desk")
    hw = cfg.grid_h * cfg.grid_w
    c, c_r = cfg.backbone_dim, cfg.reduced_dim
    j, v = cfg.joints, cfg.v_low

    report.add("input_proj", _linear_flops(hw, c, c_r))

    n_img = hw
    if cfg.variant == "encoder_decoder" and cfg.prune_rate > 0:
        t = token_count(hw, cfg.prune_rate)
        red = c_r // 4
        pruner = 2 * hw * 9 * c_r * red + hw * red          # conv + bias
        pruner += hw * red * GELU_FLOPS_PER_ELEM
        pruner += _linear_flops(hw, red, t)                 # cluster scores
        pruner += hw * t * SOFTMAX_FLOPS_PER_ELEM
        pruner += 2 * t * hw * c_r                          # M^T F
        pruner += t * c_r * LAYERNORM_FLOPS_PER_ELEM + 2 * t * c_r
        report.add("pruner", pruner)
        n_img = t

    if cfg.variant == "encoder_decoder":
        d, ff, heads = cfg.enc.model_dim, cfg.enc.ff_dim, cfg.enc.heads
        report.add("token_proj", _linear_flops(n_img, c_r, d) + n_img * d)  # + PE add
        m = n_img + 1
        for _ in range(cfg.enc.layers):
            report.add("encoder", _encoder_layer_exact(m, d, ff, heads))
        dd, dff, dh = cfg.dec.model_dim, cfg.dec.ff_dim, cfg.dec.heads
        for _ in range(cfg.dec.layers):
            report.add("decoder", _decoder_layer_exact(j + 1, m, dd, dff, dh))
        feat_dim = dd
    else:
        d0 = cfg.encoder_blocks[0].model_dim
        report.add("token_proj", _linear_flops(hw, c_r, d0) + hw * d0)
        m = hw + 1 + j
        dims = [b.model_dim for b in cfg.encoder_blocks]
        for i, block in enumerate(cfg.encoder_blocks):
            for _ in range(block.layers):
                report.add("encoder", _encoder_layer_exact(
                    m, block.model_dim, block.ff_dim, block.heads))
            if i + 1 < len(dims):
                report.add("encoder", _linear_flops(m, dims[i], dims[i + 1]))
        feat_dim = dims[-1]

    report.add("camera_head", _linear_flops(1, feat_dim, 3) + SOFTPLUS_FLOPS_PER_ELEM)
    report.add("joint_head", _linear_flops(j, feat_dim, 3))

    if cfg.nsr_head == "nsr":
        nd, nff, nh = cfg.nsr.model_dim, cfg.nsr.ff_dim, cfg.nsr.heads
        nsr = _encoder_layer_exact(j, nd, nff, nh)
        nsr += v * nd  # vertex embedding + positional encoding add
        for _ in range(cfg.nsr.layers):
            nsr += _decoder_layer_exact(v, j, nd, nff, nh, self_masked=True)
        nsr += _linear_flops(v, nd, 3)
        report.add("nsr", nsr)
    else:
        hidden = 1024
        mlp = _linear_flops(1, j * feat_dim, hidden) + hidden * GELU_FLOPS_PER_ELEM
        mlp += _linear_flops(1, hidden, hidden) + hidden * GELU_FLOPS_PER_ELEM
        mlp += _linear_flops(1, hidden, v * 3)
        report.add("mlp_head", mlp)

    return report


def forward_flops_with_template(cfg: ModelConfig, v_mid: int, v_high: int) -> FlopsReport:
    """``forward_flops`` plus the mesh upsampling and joint-regression
    matmuls, whose sizes depend on the instantiated template."""
    report = forward_flops(cfg)
    up = 2 * v_mid * cfg.v_low * 3 + 2 * v_high * v_mid * 3
    up += 2 * cfg.joints * v_high * 3
    report.add("upsample", up)
    return report
