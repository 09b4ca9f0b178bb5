"""Cooperative multi-view training.

Each view (transformer, CNN, fusion) gets a soft-IoU + BCE loss. View
weights have the closed form w_k = exp(-loss_k / lambda) / sum_h exp(-loss_h
/ lambda), the minimizer of the entropy-regularized objective
sum_k w_k loss_k + lambda sum_k w_k ln w_k on the simplex. Training
alternates: solve the weights exactly with parameters fixed, then take one
Adam step on the weighted loss with the weights held constant.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from . import tensor as T
from .model import VIEW_NAMES, SegmentationModel, ViewOutputs
from .tensor import ShapeError, Tensor

CLIP_LO = 1e-7
CLIP_HI = 1.0 - 1e-7


@dataclass
class ViewWeights:
    w: np.ndarray
    lam: float

    def __post_init__(self):
        self.w = np.asarray(self.w, dtype=np.float64)
        if abs(float(self.w.sum()) - 1.0) > 1e-9:
            raise ValueError(f"weights must sum to 1, got {self.w.sum()!r}")
        if (self.w < 0).any():
            raise ValueError(f"weights must be non-negative, got {self.w!r}")
        if self.lam <= 0:
            raise ValueError(f"lambda must be positive, got {self.lam}")


def view_loss(pre: Tensor, gt: Tensor, pixel_weights: Optional[np.ndarray] = None) -> Tensor:
    """Aggregated soft-IoU loss plus pixel-mean binary cross-entropy.

    The prediction is clipped to [1e-7, 1-1e-7] before the logarithms. The
    ground truth must be strictly binary. ``pixel_weights`` is an optional
    importance map applied to both terms (uniform by default).
    """
    if pre.shape != gt.shape:
        raise ShapeError(f"prediction {pre.shape} vs ground truth {gt.shape}")
    g = gt.data
    if not np.isin(g, (0.0, 1.0)).all():
        raise ValueError("ground truth must be binary (0/1)")
    if pixel_weights is None:
        inter = (gt * pre).sum()
        union = (gt + pre - gt * pre).sum()
        pc = T.clip(pre, CLIP_LO, CLIP_HI)
        bce = -(gt * T.log(pc) + (1.0 - gt) * T.log(1.0 - pc)).mean()
    else:
        pw = np.asarray(pixel_weights)
        inter = (gt * pre * pw).sum()
        union = ((gt + pre - gt * pre) * pw).sum()
        pc = T.clip(pre, CLIP_LO, CLIP_HI)
        bce_map = -(gt * T.log(pc) + (1.0 - gt) * T.log(1.0 - pc)) * pw
        bce = bce_map.sum() / float(pw.sum() * (g.size / pw.size))
    iou_term = 1.0 - inter / union
    return iou_term + bce


def solve_weights(losses: Sequence[float], lam: float) -> ViewWeights:
    """Closed-form minimizer of the entropy-regularized objective."""
    if lam <= 0:
        raise ValueError(f"lambda must be positive, got {lam}")
    arr = np.asarray(losses, dtype=np.float64)
    if not np.isfinite(arr).all():
        raise ValueError(f"losses must be finite, got {arr}")
    z = -arr / lam
    z -= z.max()  # shift invariance, exact: exp cancels the common factor
    e = np.exp(z)
    return ViewWeights(e / e.sum(), lam)


def total_objective(w: ViewWeights, losses: Sequence[float]) -> float:
    """sum_k w_k loss_k + lambda sum_k w_k ln w_k, with 0 ln 0 := 0."""
    arr = np.asarray(losses, dtype=np.float64)
    ent = sum(wk * math.log(wk) for wk in w.w if wk > 0.0)
    return float(w.w @ arr + w.lam * ent)


def fuse_decision(w: ViewWeights, outs: ViewOutputs) -> Tensor:
    """Convex combination of the three views, in the views' dtype.

    Accumulates in float64 so the result stays inside the pixelwise
    [min, max] envelope of the views after the final cast. Pure inference
    helper: the result carries no gradient graph.
    """
    views = outs.as_tuple()
    shape = views[0].shape
    for v in views[1:]:
        if v.shape != shape:
            raise ShapeError(f"view shapes differ: {shape} vs {v.shape}")
    dtype = views[0].dtype
    acc = np.zeros(shape, dtype=np.float64)
    for wk, v in zip(w.w, views):
        acc += float(wk) * v.data.astype(np.float64)
    return Tensor(acc.astype(dtype))


class Adam:
    """Bias-corrected Adam over a fixed parameter list."""

    def __init__(self, params: Sequence[Tensor], lr: float = 7e-5,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.params = list(params)
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.step_count = 0
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]

    def step(self):
        self.step_count += 1
        b1, b2 = self.beta1, self.beta2
        bc1 = 1.0 - b1 ** self.step_count
        bc2 = 1.0 - b2 ** self.step_count
        for p, m, v in zip(self.params, self.m, self.v):
            g = p.grad
            if g is None:
                continue
            m += (1.0 - b1) * (g - m)
            v += (1.0 - b2) * (g * g - v)
            p.data -= self.lr * (m / bc1) / (np.sqrt(v / bc2) + self.eps)

    def zero_grad(self):
        for p in self.params:
            p.grad = None


@dataclass
class EpochReport:
    losses: np.ndarray  # epoch-mean per-view losses
    weights: np.ndarray  # solved from the epoch-mean losses
    objective: float
    batch_weights: list[np.ndarray] = field(default_factory=list)


def _batch_losses(model: SegmentationModel, images: Tensor, masks: Tensor):
    outs = model(images)
    losses = []
    for name, pre in zip(VIEW_NAMES, outs.as_tuple()):
        lk = view_loss(pre, masks)
        if not np.isfinite(lk.data).all():
            raise RuntimeError(f"non-finite loss in view {name!r}; aborting")
        losses.append(lk)
    return outs, losses


def train_epoch(
    model: SegmentationModel,
    optimizer: Adam,
    batches: Sequence[tuple[Tensor, Tensor]],
    lam: float,
) -> EpochReport:
    """One alternating-optimization pass over the batches.

    Per batch: forward the three views, solve the weights exactly from the
    detached losses, then step the parameters on the weighted sum with the
    weights as constants. The epoch report re-solves the weights from the
    epoch-mean losses and stores them on the model for inference.
    """
    if not batches:
        raise ValueError("train_epoch needs at least one batch")
    model.train()
    sums = np.zeros(3)
    per_batch_w = []
    for images, masks in batches:
        optimizer.zero_grad()
        _, losses = _batch_losses(model, images, masks)
        vals = [float(lk.item()) for lk in losses]
        w = solve_weights(vals, lam)
        per_batch_w.append(w.w.copy())
        # python floats keep the weighted sum in the losses' dtype
        weighted = sum(lk * float(wk) for lk, wk in zip(losses, w.w))
        T.backward(weighted)
        optimizer.step()
        sums += vals
    means = sums / len(batches)
    w_epoch = solve_weights(means, lam)
    model.view_weights[...] = w_epoch.w
    return EpochReport(
        losses=means,
        weights=w_epoch.w.copy(),
        objective=total_objective(w_epoch, means),
        batch_weights=per_batch_w,
    )
