"""Shared reference implementations used by several test modules.

Everything here is deliberately naive: grids, python loops, and closed
forms that are easy to audit by eye.
"""

import math

import numpy as np


def entropy_objective(w, losses, lam):
    """sum w_k l_k + lam * sum w_k ln w_k with 0 ln 0 := 0."""
    acc = 0.0
    for wk, lk in zip(w, losses):
        acc += wk * lk
        if wk > 0.0:
            acc += lam * wk * math.log(wk)
    return acc


def brute_force_weights(losses, lam, step=1e-3, refine_rounds=2):
    """Grid-search minimizer of the entropy-regularized objective on the
    3-simplex, followed by local refinement around the best grid point.

    The scan enumerates (w1, w2) on a square grid, drops points off the
    simplex, and evaluates the objective on everything left; no calculus.
    """
    l1, l2, l3 = losses

    def xlogx(w):
        out = np.zeros_like(w)
        pos = w > 0.0
        out[pos] = w[pos] * np.log(w[pos])
        return out

    def scan(c1, c2, half_width, h):
        n = int(round(2 * half_width / h))
        axis1 = c1 - half_width + h * np.arange(n + 1)
        axis2 = c2 - half_width + h * np.arange(n + 1)
        w1, w2 = np.meshgrid(axis1, axis2, indexing="ij")
        w3 = 1.0 - w1 - w2
        ok = (w1 >= 0.0) & (w2 >= 0.0) & (w3 >= 0.0)
        w1, w2, w3 = w1[ok], w2[ok], w3[ok]
        vals = (
            w1 * l1 + w2 * l2 + w3 * l3
            + lam * (xlogx(w1) + xlogx(w2) + xlogx(w3))
        )
        k = int(np.argmin(vals))
        return (w1[k], w2[k], w3[k])

    w = scan(0.5, 0.5, 0.5, step)
    h = step
    for _ in range(refine_rounds):
        h /= 10.0
        w = scan(w[0], w[1], 10 * h, h)
    return np.array(w)


def random_simplex(rng, n=3):
    """Uniform sample from the simplex via sorted-uniform gaps."""
    cuts = np.sort(rng.uniform(0.0, 1.0, n - 1))
    parts = np.diff(np.concatenate([[0.0], cuts, [1.0]]))
    return parts


def dice_count(pred_bin, gt_bin):
    """Pixel-count dice with the empty-vs-empty convention of 1."""
    p = int(pred_bin.sum())
    g = int(gt_bin.sum())
    inter = int((pred_bin * gt_bin).sum())
    if p + g == 0:
        return 1.0
    return 2.0 * inter / (p + g)


def iou_count(pred_bin, gt_bin):
    p = int(pred_bin.sum())
    g = int(gt_bin.sum())
    inter = int((pred_bin * gt_bin).sum())
    union = p + g - inter
    if union == 0:
        return 1.0
    return inter / union
