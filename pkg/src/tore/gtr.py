"""Geometry token reduction models.

The main transformer only carries camera + joint queries (plus image tokens
on the encoder side); coarse vertices are recovered downstream by the neural
shape regressor from joint features alone, then upsampled to the mid/high
mesh levels.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .itp import PrunerOutput, TokenPruner
from .losses import CameraParams
from .mesh import MeshTemplate
from .module import Module, param, zeros_param
from .transformer import (
    AttnMask,
    DecoderLayer,
    EncoderLayer,
    LayerConfig,
    adjacency_mask,
    random_joint_mask,
    sinusoidal_pe,
)

VARIANTS = ("encoder_only", "encoder_decoder")
NSR_HEADS = ("nsr", "mlp")


@dataclass
class ModelConfig:
    variant: str = "encoder_decoder"
    backbone_dim: int = 64          # channels delivered by the conv stub
    reduced_dim: int = 128          # image-token dim after input projection
    enc: LayerConfig = field(default_factory=lambda: LayerConfig(64, 256, 4, 1))
    dec: LayerConfig = field(default_factory=lambda: LayerConfig(64, 256, 4, 1))
    encoder_blocks: tuple[LayerConfig, ...] = field(
        default_factory=lambda: (LayerConfig(128, 256, 4, 1), LayerConfig(64, 128, 4, 1))
    )
    nsr: LayerConfig = field(default_factory=lambda: LayerConfig(64, 256, 4, 1))
    joints: int = 14
    v_low: int = 110
    prune_rate: float = 0.0
    joint_mask_rate: float = 0.3
    nsr_head: str = "nsr"
    grid_h: int = 7
    grid_w: int = 7
    image_size: float = 56.0

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown variant {self.variant!r}")
        if self.nsr_head not in NSR_HEADS:
            raise ValueError(f"unknown nsr_head {self.nsr_head!r}")
        if not 0.0 <= self.prune_rate < 1.0:
            raise ValueError("prune_rate must be in [0, 1)")
        if self.variant == "encoder_decoder":
            if self.enc.model_dim != self.dec.model_dim:
                raise ValueError("encoder and decoder model dims must match")
            if self.dec.model_dim != self.nsr.model_dim:
                raise ValueError("decoder and NSR model dims must match")
        else:
            if self.prune_rate > 0:
                raise ValueError("pruning applies to the encoder_decoder variant only")
            if self.encoder_blocks[-1].model_dim != self.nsr.model_dim:
                raise ValueError("last encoder block dim must match NSR dim")

    @property
    def body_query_tokens(self) -> int:
        """Query tokens in the main transformer: camera + joints."""
        return self.joints + 1


@dataclass
class ModelOutput:
    joints3d: T.Tensor          # [J, 3] direct head on joint features
    verts_low: T.Tensor
    verts_mid: T.Tensor
    verts_high: T.Tensor
    joints_from_mesh: T.Tensor  # regressor applied to high-res vertices
    camera: CameraParams
    attn_vj: np.ndarray | None  # [heads, V_l, J] NSR cross-attention
    pruner: PrunerOutput | None


class NeuralShapeRegressor(Module):
    """Vertex queries cross-attend to joint features only; self-attention
    among vertices is restricted to the coarse mesh 1-ring."""

    def __init__(self, cfg: LayerConfig, template: MeshTemplate, rng: np.random.Generator):
        d = cfg.model_dim
        self.joint_layer = EncoderLayer(cfg, rng)
        self.vertex_embed = param(rng, (template.v_low, d))
        self.vertex_pe = T.Tensor(sinusoidal_pe(template.v_low, d))
        self.vertex_layers = [DecoderLayer(cfg, rng) for _ in range(cfg.layers)]
        self.head_w = param(rng, (d, 3))
        self.head_b = zeros_param((3,))
        self.mask = adjacency_mask(template)

    def __call__(self, joint_feats: T.Tensor):
        refined, _ = self.joint_layer(joint_feats)
        x = self.vertex_embed + self.vertex_pe
        cross_map = None
        for layer in self.vertex_layers:
            x, _, cross_map = layer(x, refined, self_mask=self.mask)
        verts = T.linear(x, self.head_w, self.head_b)
        return verts, cross_map


class MlpRegressorBaseline(Module):
    """Two-hidden-layer GELU perceptron over flattened joint features."""

    def __init__(self, joints: int, dim: int, v_low: int, rng: np.random.Generator,
                 hidden: int = 1024):
        self.v_low = v_low
        self.w1 = param(rng, (joints * dim, hidden))
        self.b1 = zeros_param((hidden,))
        self.w2 = param(rng, (hidden, hidden))
        self.b2 = zeros_param((hidden,))
        self.w3 = param(rng, (hidden, v_low * 3))
        self.b3 = zeros_param((v_low * 3,))

    def __call__(self, joint_feats: T.Tensor):
        flat = T.reshape(joint_feats, (1, -1))
        h = T.gelu(T.linear(flat, self.w1, self.b1))
        h = T.gelu(T.linear(h, self.w2, self.b2))
        out = T.linear(h, self.w3, self.b3)
        return T.reshape(out, (self.v_low, 3)), None


class ToreModel(Module):
    def __init__(self, cfg: ModelConfig, template: MeshTemplate, rng: np.random.Generator):
        if template.v_low != cfg.v_low:
            raise ValueError(f"template has {template.v_low} coarse vertices, config says {cfg.v_low}")
        if template.joints != cfg.joints:
            raise ValueError("template/config joint count mismatch")
        self.cfg = cfg
        self.template = template
        hw = cfg.grid_h * cfg.grid_w

        self.input_proj_w = param(rng, (cfg.backbone_dim, cfg.reduced_dim))
        self.input_proj_b = zeros_param((cfg.reduced_dim,))

        self.pruner = None
        if cfg.variant == "encoder_decoder" and cfg.prune_rate > 0:
            self.pruner = TokenPruner(cfg.grid_h, cfg.grid_w, cfg.reduced_dim,
                                      cfg.prune_rate, rng)

        if cfg.variant == "encoder_decoder":
            d = cfg.enc.model_dim
            self.token_proj_w = param(rng, (cfg.reduced_dim, d))
            self.token_proj_b = zeros_param((d,))
            self.image_pe = T.Tensor(sinusoidal_pe(hw, d))
            self.cam_token = param(rng, (1, d))
            self.enc_layers = [EncoderLayer(cfg.enc, rng) for _ in range(cfg.enc.layers)]
            self.queries = param(rng, (cfg.joints + 1, d))
            self.mask_embed = param(rng, (1, d))
            self.dec_layers = [DecoderLayer(cfg.dec, rng) for _ in range(cfg.dec.layers)]
            feat_dim = cfg.dec.model_dim
        else:
            d0 = cfg.encoder_blocks[0].model_dim
            self.token_proj_w = param(rng, (cfg.reduced_dim, d0))
            self.token_proj_b = zeros_param((d0,))
            self.image_pe = T.Tensor(sinusoidal_pe(hw, d0))
            self.cam_token = param(rng, (1, d0))
            self.joint_tokens = param(rng, (cfg.joints, d0))
            self.mask_embed = param(rng, (1, d0))
            self.blocks = [
                [EncoderLayer(block, rng) for _ in range(block.layers)]
                for block in cfg.encoder_blocks
            ]
            self.reductions = []
            for cur, nxt in zip(cfg.encoder_blocks[:-1], cfg.encoder_blocks[1:]):
                self.reductions.append(
                    [param(rng, (cur.model_dim, nxt.model_dim)), zeros_param((nxt.model_dim,))]
                )
            feat_dim = cfg.encoder_blocks[-1].model_dim

        self.camera_head_w = param(rng, (feat_dim, 3))
        self.camera_head_b = zeros_param((3,))
        self.joint_head_w = param(rng, (feat_dim, 3))
        self.joint_head_b = zeros_param((3,))

        if cfg.nsr_head == "nsr":
            self.regressor = NeuralShapeRegressor(cfg.nsr, template, rng)
        else:
            self.regressor = MlpRegressorBaseline(cfg.joints, feat_dim, cfg.v_low, rng)

        self.u1 = T.Tensor(template.u1)
        self.u2 = T.Tensor(template.u2)
        self.joint_regressor = T.Tensor(template.joint_regressor)

    # ------------------------------------------------------------------
    def _masked_queries(self, queries: T.Tensor, joint_rows: slice,
                       train: bool, rng: np.random.Generator | None) -> T.Tensor:
        rate = self.cfg.joint_mask_rate
        if not train or rate == 0.0:
            return queries
        if rng is None:
            raise ValueError("training forward with joint masking needs an rng")
        keep = random_joint_mask(self.cfg.joints, rate, rng)
        n = queries.shape[0]
        keep_full = np.ones(n, dtype=queries.data.dtype)
        keep_full[joint_rows] = keep.astype(queries.data.dtype)
        keep_col = T.Tensor(keep_full[:, None])
        inv_col = T.Tensor((1.0 - keep_full)[:, None])
        return queries * keep_col + self.mask_embed * inv_col

    def encode_body_tokens(self, image_tokens: T.Tensor, train: bool = False,
                           rng: np.random.Generator | None = None):
        """Run the main transformer; returns (F_J [J, d], camera_feat [1, d])."""
        cfg = self.cfg
        if image_tokens.shape[1] != cfg.reduced_dim:
            raise ValueError(f"expected image tokens of dim {cfg.reduced_dim}")
        x = T.linear(image_tokens, self.token_proj_w, self.token_proj_b)
        n_img = x.shape[0]
        if cfg.variant == "encoder_decoder":
            pe = self.image_pe if n_img == self.image_pe.shape[0] else T.Tensor(
                sinusoidal_pe(n_img, x.shape[1]))
            x = x + pe
            memory = T.concat([self.cam_token, x], axis=0)
            for layer in self.enc_layers:
                memory, _ = layer(memory)
            queries = self._masked_queries(self.queries, slice(1, None), train, rng)
            for layer in self.dec_layers:
                queries, _, _ = layer(queries, memory)
            return queries[1:, :], queries[0:1, :]
        # encoder_only: image tokens ++ camera ++ joint queries in one stack
        if n_img != self.image_pe.shape[0]:
            raise ValueError("encoder_only variant expects the full image token grid")
        x = x + self.image_pe
        joints = self._masked_queries(self.joint_tokens, slice(None), train, rng)
        seq = T.concat([x, self.cam_token, joints], axis=0)
        for i, block in enumerate(self.blocks):
            for layer in block:
                seq, _ = layer(seq)
            if i < len(self.reductions):
                w, b = self.reductions[i]
                seq = T.linear(seq, w, b)
        return seq[n_img + 1 :, :], seq[n_img : n_img + 1, :]

    def forward(self, image_features: T.Tensor, train: bool = False,
                rng: np.random.Generator | None = None) -> ModelOutput:
        cfg = self.cfg
        expected = (cfg.grid_h, cfg.grid_w, cfg.backbone_dim)
        if tuple(image_features.shape) != expected:
            raise ValueError(f"expected image features {expected}, got {image_features.shape}")
        tokens = T.reshape(image_features, (cfg.grid_h * cfg.grid_w, cfg.backbone_dim))
        tokens = T.linear(tokens, self.input_proj_w, self.input_proj_b)

        pruner_out = None
        if self.pruner is not None:
            pruner_out = self.pruner(tokens)
            tokens = pruner_out.z

        joint_feats, cam_feat = self.encode_body_tokens(tokens, train=train, rng=rng)

        cam_raw = T.linear(cam_feat, self.camera_head_w, self.camera_head_b)
        camera = CameraParams(
            s=T.reshape(T.softplus(cam_raw[:, 0:1]), ()),
            t=T.reshape(cam_raw[:, 1:3], (2,)),
        )
        joints3d = T.linear(joint_feats, self.joint_head_w, self.joint_head_b)

        verts_low, attn_vj = self.regressor(joint_feats)
        verts_mid = self.u1 @ verts_low
        verts_high = self.u2 @ verts_mid
        joints_from_mesh = self.joint_regressor @ verts_high
        return ModelOutput(
            joints3d=joints3d,
            verts_low=verts_low,
            verts_mid=verts_mid,
            verts_high=verts_high,
            joints_from_mesh=joints_from_mesh,
            camera=camera,
            attn_vj=attn_vj,
            pruner=pruner_out,
        )
