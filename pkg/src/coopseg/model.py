"""Full two-branch segmentation model with three prediction views.

View 1 comes from the transformer branch, view 2 from the CNN branch, and
view 3 from the fusion path. The per-view combination weights live on the
model as a buffer so they persist through checkpoints.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .cnn import CnnBranch, CnnViewHead
from .config import RunConfig
from .fusion import FUSED_CHANNELS, DenseFusionDecoder, GlffBlock
from .nn import Module, ModuleList, MultiScaleFeatures
from .tensor import Tensor
from .transformer import EncoderConfig, TransformerBranch, ViewHead


@dataclass
class ViewOutputs:
    """The three per-view probability maps, each B x 1 x H x W in [0,1]."""

    transformer: Tensor
    cnn: Tensor
    fusion: Tensor

    def as_tuple(self) -> tuple[Tensor, Tensor, Tensor]:
        return (self.transformer, self.cnn, self.fusion)


VIEW_NAMES = ("transformer", "cnn", "fusion")


class SegmentationModel(Module):
    def __init__(self, cfg: RunConfig):
        super().__init__()
        self.cfg = cfg
        dtype = np.float32 if cfg.dtype == "float32" else np.float64
        # independent init streams: toggling fusion switches must not shift
        # the branches' initial weights
        rng_t, rng_c, rng_f = (
            np.random.default_rng(s) for s in np.random.SeedSequence(cfg.seed).spawn(3)
        )
        enc = EncoderConfig(
            depth=cfg.depth, d_model=cfg.d_model, heads=cfg.heads,
            mlp_ratio=cfg.mlp_ratio, patch_size=cfg.patch_size,
        )
        hw = (cfg.image_size, cfg.image_size)
        self.transformer = TransformerBranch(enc, hw, rng_t, dtype=dtype)
        self.head_t = ViewHead(TransformerBranch.T2_CHANNELS, rng_t, dtype=dtype)
        self.cnn = CnnBranch(
            rng_c, stem_channels=cfg.stem_channels, c4=cfg.c4, c8=cfg.c8,
            c16=cfg.c16, stage_units=cfg.stage_units, dtype=dtype,
        )
        self.head_c = CnnViewHead(rng_c, c4=cfg.c4, c8=cfg.c8, c16=cfg.c16, dtype=dtype)

        cf16, cf8, cf4 = FUSED_CHANNELS
        t_ch = (cfg.d_model, TransformerBranch.T1_CHANNELS, TransformerBranch.T2_CHANNELS)
        c_ch = (cfg.c16, cfg.c8, cfg.c4)
        self.glff16 = GlffBlock(t_ch[0], c_ch[0], cf16, rng_f, attention=cfg.glff_on,
                                reduction=cfg.cbam_reduction, dtype=dtype)
        self.glff8 = GlffBlock(t_ch[1], c_ch[1], cf8, rng_f, attention=cfg.glff_on,
                               reduction=cfg.cbam_reduction, dtype=dtype)
        self.glff4 = GlffBlock(t_ch[2], c_ch[2], cf4, rng_f, attention=cfg.glff_on,
                               reduction=cfg.cbam_reduction, dtype=dtype)
        if cfg.dfm_on:
            self.decoder = DenseFusionDecoder(rng_f, dtype=dtype)
        else:
            self.head_f = ViewHead(cf4, rng_f, dtype=dtype)
        self.register_buffer("view_weights", np.full(3, 1.0 / 3.0))

    def fused_maps(self, t: MultiScaleFeatures, c: MultiScaleFeatures):
        return (
            self.glff16(t.s16, c.s16),
            self.glff8(t.s8, c.s8),
            self.glff4(t.s4, c.s4),
        )

    def __call__(self, image: Tensor) -> ViewOutputs:
        t_feats = self.transformer(image)
        c_feats = self.cnn(image)
        pre_t = self.head_t(t_feats.s4)
        pre_c = self.head_c(c_feats)
        f16, f8, f4 = self.fused_maps(t_feats, c_feats)
        if self.cfg.dfm_on:
            pre_f = self.decoder(f16, f8, f4)
        else:
            pre_f = self.head_f(f4)
        return ViewOutputs(pre_t, pre_c, pre_f)
