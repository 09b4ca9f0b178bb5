"""Local-feature branch: a compact convolutional encoder with dense
intra-stage concatenation, tapping maps at 1/4, 1/8, and 1/16 scale.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .nn import Conv2d, ConvUnit, Module, ModuleList, MultiScaleFeatures
from .tensor import ShapeError, Tensor


@dataclass
class CnnStageSpec:
    channels: int
    units: int


class DenseStage(Module):
    """k conv units where unit j consumes the concat of the stage input and
    all previous unit outputs; the last unit's map is the stage output."""

    def __init__(self, c_in: int, spec: CnnStageSpec, rng: np.random.Generator, dtype=np.float32):
        super().__init__()
        self.units = ModuleList()
        width = c_in
        for _ in range(spec.units):
            self.units.append(ConvUnit(width, spec.channels, rng, dtype=dtype))
            width += spec.channels

    def __call__(self, x: Tensor) -> Tensor:
        grown = [x]
        out = x
        for unit in self.units:
            out = unit(grown[0] if len(grown) == 1 else T.concat_channels(grown))
            grown.append(out)
        return out


class CnnBranch(Module):
    """Stem halves the input; each of three stages halves again and taps its
    output, yielding maps at 1/4 (c4), 1/8 (c8), and 1/16 (c16)."""

    def __init__(self, rng: np.random.Generator, stem_channels: int = 32,
                 c4: int = 64, c8: int = 128, c16: int = 256,
                 stage_units: int = 3, in_channels: int = 3, dtype=np.float32):
        super().__init__()
        self.stem = ConvUnit(in_channels, stem_channels, rng, dtype=dtype)
        self.stage4 = DenseStage(stem_channels, CnnStageSpec(c4, stage_units), rng, dtype=dtype)
        self.stage8 = DenseStage(c4, CnnStageSpec(c8, stage_units), rng, dtype=dtype)
        self.stage16 = DenseStage(c8, CnnStageSpec(c16, stage_units), rng, dtype=dtype)

    def __call__(self, image: Tensor) -> MultiScaleFeatures:
        _, _, h, w = image.shape
        if h % 16 or w % 16:
            raise ShapeError(f"image dims {h}x{w} must be divisible by 16")
        x = T.avgpool2x(self.stem(image))          # 1/2
        c_quarter = self.stage4(T.avgpool2x(x))    # 1/4
        c_eighth = self.stage8(T.avgpool2x(c_quarter))   # 1/8
        c_sixteenth = self.stage16(T.avgpool2x(c_eighth))  # 1/16
        return MultiScaleFeatures(s16=c_sixteenth, s8=c_eighth, s4=c_quarter)


class CnnViewHead(Module):
    """Top-down merge of the three taps into one full-resolution probability
    map: project each tap to a common width, add coarse into fine with 2x
    upsampling, then one-channel projection, 4x upsampling, sigmoid."""

    def __init__(self, rng: np.random.Generator, c4: int = 64, c8: int = 128,
                 c16: int = 256, merge_channels: int = 64, dtype=np.float32):
        super().__init__()
        self.proj16 = Conv2d(c16, merge_channels, 1, rng, dtype=dtype)
        self.proj8 = Conv2d(c8, merge_channels, 1, rng, dtype=dtype)
        self.proj4 = Conv2d(c4, merge_channels, 1, rng, dtype=dtype)
        self.out = Conv2d(merge_channels, 1, 1, rng, dtype=dtype)

    def __call__(self, feats: MultiScaleFeatures) -> Tensor:
        m8 = T.elementwise(T.upsample2x_nearest(self.proj16(feats.s16)), self.proj8(feats.s8), "add")
        m4 = T.elementwise(T.upsample2x_nearest(m8), self.proj4(feats.s4), "add")
        logits = T.upsample2x_nearest(T.upsample2x_nearest(self.out(m4)))
        return T.sigmoid(logits)
