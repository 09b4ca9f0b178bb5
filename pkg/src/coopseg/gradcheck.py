"""Finite-difference verification of analytic gradients.

Central differences at 64-bit with h=1e-5; an analytic/numeric pair passes
when |a-n| / max(|a|, |n|, 1e-6) < 1e-4. Used by the test suite and the
``gradcheck`` CLI subcommand.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np

from . import tensor as T
from .tensor import Tensor, backward, no_grad

H_DEFAULT = 1e-5
TOL_DEFAULT = 1e-4


def relative_error(a: float, n: float) -> float:
    return abs(a - n) / max(abs(a), abs(n), 1e-6)


def _sample_entries(params: Sequence[Tensor], n_samples: Optional[int], rng: np.random.Generator):
    """Pick (param_index, flat_index) pairs, spread across all params."""
    entries = []
    if n_samples is None:
        for pi, p in enumerate(params):
            entries.extend((pi, fi) for fi in range(p.size))
        return entries
    sizes = np.array([p.size for p in params])
    total = int(sizes.sum())
    n = min(n_samples, total)
    # at least one entry per param, remainder proportional
    for pi, p in enumerate(params):
        entries.append((pi, int(rng.integers(p.size))))
    flat = rng.choice(total, size=max(n - len(params), 0), replace=False)
    bounds = np.cumsum(sizes)
    for f in flat:
        pi = int(np.searchsorted(bounds, f, side="right"))
        entries.append((pi, int(f - (bounds[pi - 1] if pi else 0))))
    return entries


def check_function(
    f: Callable[[], Tensor],
    params: Sequence[Tensor],
    rng: np.random.Generator,
    n_samples: Optional[int] = None,
    h: float = H_DEFAULT,
    reset: Optional[Callable[[], None]] = None,
    skip_kinks: bool = False,
) -> float:
    """Max relative error between backward() and central differences.

    ``f`` recomputes a scalar loss from ``params`` (closed over). ``reset``
    restores any state the forward pass mutates (batchnorm running buffers)
    so every evaluation sees identical conditions.

    With ``skip_kinks``, a probe whose two evaluations land on different
    linear pieces of a piecewise op (relu / amax / clip) is discarded and a
    replacement entry drawn: across a kink the central difference averages
    two one-sided slopes and estimates no derivative at all, so agreement
    there is not evidence either way. The number of checked entries stays
    the same; exhausting the replacement budget raises GradientError.
    """
    for p in params:
        p.grad = None
    T.reset_tape()
    if reset is not None:
        reset()
    base_pattern: list = []
    if skip_kinks:
        with T.record_branch_pattern(base_pattern):
            loss = f()
    else:
        loss = f()
    if loss.size != 1:
        raise T.GradientError(f"gradcheck target must be scalar, got {loss.shape}")
    backward(loss)
    analytic = [p.grad if p.grad is not None else np.zeros_like(p.data) for p in params]

    def probe(pi: int, fi: int) -> tuple[float, bool]:
        p = params[pi]
        idx = np.unravel_index(fi, p.shape)
        orig = p.data[idx]
        vals, patterns = [], []
        for delta in (h, -h):
            p.data[idx] = orig + delta
            if reset is not None:
                reset()
            pat: list = []
            with no_grad():
                if skip_kinks:
                    with T.record_branch_pattern(pat):
                        vals.append(f().item())
                else:
                    vals.append(f().item())
            patterns.append(pat)
        p.data[idx] = orig
        smooth = (not skip_kinks) or patterns[0] == patterns[1] == base_pattern
        return (vals[0] - vals[1]) / (2.0 * h), smooth

    entries = list(_sample_entries(params, n_samples, rng))
    bounds = np.cumsum([p.size for p in params])
    spare = 4 * len(entries)
    worst = 0.0
    while entries:
        pi, fi = entries.pop(0)
        numeric, smooth = probe(pi, fi)
        if not smooth:
            if spare == 0:
                raise T.GradientError(
                    "gradcheck: too many probes straddle relu/amax/clip kinks"
                )
            spare -= 1
            flat = int(rng.integers(bounds[-1]))
            pj = int(np.searchsorted(bounds, flat, side="right"))
            entries.append((pj, int(flat - (bounds[pj - 1] if pj else 0))))
            continue
        idx = np.unravel_index(fi, params[pi].shape)
        worst = max(worst, relative_error(float(analytic[pi][idx]), numeric))
    T.reset_tape()
    return worst


def away_from(x: np.ndarray, points: Sequence[float], margin: float = 0.05) -> np.ndarray:
    """Shift entries of x that sit within margin of any kink point."""
    out = x.copy()
    for pt in points:
        near = np.abs(out - pt) < margin
        out[near] = pt + margin * np.where(out[near] >= pt, 2.0, -2.0)
    return out


class _Scalarizer:
    """Reduce an op output to a scalar with fixed random weights.

    Weights are drawn on first use and reused, so repeated loss evaluations
    (the finite-difference probes) see one deterministic function.
    """

    def __init__(self, rng: np.random.Generator):
        self._rng = rng
        self._w: Optional[np.ndarray] = None

    def __call__(self, out: Tensor) -> Tensor:
        if self._w is None:
            self._w = self._rng.standard_normal(out.shape)
        return (out * self._w).sum()


@dataclass
class OpCheckResult:
    name: str
    max_rel_err: float
    tol: float

    @property
    def ok(self) -> bool:
        return self.max_rel_err < self.tol


def _rand(rng, *shape):
    return Tensor(rng.standard_normal(shape), requires_grad=True)


def _op_cases():
    """One named case per differentiable op; each returns (params, loss_fn, reset)."""

    def c_add(rng, s):
        a, b = _rand(rng, 3, 4), _rand(rng, 4)
        return [a, b], lambda: s(a + b), None

    def c_sub(rng, s):
        a, b = _rand(rng, 2, 3), _rand(rng, 2, 3)
        return [a, b], lambda: s(a - b), None

    def c_mul(rng, s):
        a, b = _rand(rng, 3, 4), _rand(rng, 3, 1)
        return [a, b], lambda: s(a * b), None

    def c_div(rng, s):
        a = _rand(rng, 3, 4)
        b = Tensor(away_from(rng.standard_normal((3, 4)), [0.0], 0.4), requires_grad=True)
        return [a, b], lambda: s(a / b), None

    def c_neg(rng, s):
        a = _rand(rng, 5)
        return [a], lambda: s(-a), None

    def c_matmul(rng, s):
        a, b = _rand(rng, 4, 3), _rand(rng, 3, 5)
        return [a, b], lambda: s(a @ b), None

    def c_matmul_batched(rng, s):
        a, b = _rand(rng, 2, 3, 4), _rand(rng, 4, 5)
        return [a, b], lambda: s(a @ b), None

    def c_conv2d(rng, s):
        x, k = _rand(rng, 2, 3, 5, 5), _rand(rng, 4, 3, 3, 3)
        return [x, k], lambda: s(T.conv2d(x, k, stride=1, padding=1)), None

    def c_conv2d_1x1(rng, s):
        x, k = _rand(rng, 2, 4, 3, 3), _rand(rng, 2, 4, 1, 1)
        return [x, k], lambda: s(T.conv2d(x, k, stride=1, padding=0)), None

    def c_softmax(rng, s):
        x = _rand(rng, 3, 6)
        return [x], lambda: s(T.softmax_lastdim(x)), None

    def c_upsample(rng, s):
        x = _rand(rng, 2, 3, 3, 4)
        return [x], lambda: s(T.upsample2x_nearest(x)), None

    def c_avgpool(rng, s):
        x = _rand(rng, 2, 3, 4, 6)
        return [x], lambda: s(T.avgpool2x(x)), None

    def c_concat(rng, s):
        a, b = _rand(rng, 2, 3, 4, 4), _rand(rng, 2, 2, 4, 4)
        return [a, b], lambda: s(T.concat_channels([a, b])), None

    def c_elementwise_add(rng, s):
        a, b = _rand(rng, 2, 3), _rand(rng, 2, 3)
        return [a, b], lambda: s(T.elementwise(a, b, "add")), None

    def c_elementwise_mul(rng, s):
        a, b = _rand(rng, 2, 3), _rand(rng, 2, 3)
        return [a, b], lambda: s(T.elementwise(a, b, "mul")), None

    def c_relu(rng, s):
        x = Tensor(away_from(rng.standard_normal((4, 5)), [0.0]), requires_grad=True)
        return [x], lambda: s(T.relu(x)), None

    def c_gelu(rng, s):
        x = _rand(rng, 4, 5)
        return [x], lambda: s(T.gelu(x)), None

    def c_sigmoid(rng, s):
        x = _rand(rng, 4, 5)
        return [x], lambda: s(T.sigmoid(x)), None

    def c_layernorm(rng, s):
        x, g, b = _rand(rng, 3, 7), _rand(rng, 7), _rand(rng, 7)
        return [x, g, b], lambda: s(T.layernorm_lastdim(x, g, b)), None

    def c_batchnorm_train(rng, s):
        x, g, b = _rand(rng, 3, 4, 5, 5), _rand(rng, 4), _rand(rng, 4)
        rm, rv = np.zeros(4), np.ones(4)
        saved = (rm.copy(), rv.copy())

        def reset():
            rm[:], rv[:] = saved

        return [x, g, b], lambda: s(T.batchnorm_channel(x, g, b, rm, rv, training=True)), reset

    def c_batchnorm_eval(rng, s):
        x, g, b = _rand(rng, 2, 4, 3, 3), _rand(rng, 4), _rand(rng, 4)
        rm, rv = rng.standard_normal(4), 0.5 + rng.random(4)
        return [x, g, b], lambda: s(T.batchnorm_channel(x, g, b, rm, rv, training=False)), None

    def c_sum_axis(rng, s):
        x = _rand(rng, 3, 4, 5)
        return [x], lambda: s(x.sum(axis=1)), None

    def c_mean_axis(rng, s):
        x = _rand(rng, 3, 4, 5)
        return [x], lambda: s(x.mean(axis=(0, 2))), None

    def c_amax(rng, s):
        # spread values so the max stays unique under the FD perturbation
        base = rng.permutation(20).reshape(4, 5) * 0.5
        x = Tensor(base + 0.01 * rng.standard_normal((4, 5)), requires_grad=True)
        return [x], lambda: s(T.amax(x, axis=1)), None

    def c_reshape(rng, s):
        x = _rand(rng, 3, 8)
        return [x], lambda: s(T.reshape(x, (2, 3, 4))), None

    def c_transpose(rng, s):
        x = _rand(rng, 2, 3, 4)
        return [x], lambda: s(T.transpose(x, (2, 0, 1))), None

    def c_clip(rng, s):
        x = Tensor(away_from(2.0 * rng.standard_normal((4, 5)), [-1.0, 1.0]), requires_grad=True)
        return [x], lambda: s(T.clip(x, -1.0, 1.0)), None

    def c_log(rng, s):
        x = Tensor(0.5 + rng.random((4, 5)), requires_grad=True)
        return [x], lambda: s(T.log(x)), None

    fns = [
        c_add, c_sub, c_mul, c_div, c_neg, c_matmul, c_matmul_batched,
        c_conv2d, c_conv2d_1x1, c_softmax, c_upsample, c_avgpool, c_concat,
        c_elementwise_add, c_elementwise_mul, c_relu, c_gelu, c_sigmoid,
        c_layernorm, c_batchnorm_train, c_batchnorm_eval, c_sum_axis,
        c_mean_axis, c_amax, c_reshape, c_transpose, c_clip, c_log,
    ]
    return [(f.__name__[2:], f) for f in fns]


def run_op_suite(
    seed: int = 0,
    inputs_per_op: int = 5,
    tol: float = TOL_DEFAULT,
    h: float = H_DEFAULT,
) -> list[OpCheckResult]:
    """Check every differentiable op on seeded random inputs."""
    results = []
    for ci, (name, build) in enumerate(_op_cases()):
        worst = 0.0
        for trial in range(inputs_per_op):
            rng = np.random.default_rng([seed, ci, trial])
            params, loss_fn, reset = build(rng, _Scalarizer(rng))
            err = check_function(loss_fn, params, rng, h=h, reset=reset)
            worst = max(worst, err)
        results.append(OpCheckResult(name, worst, tol))
    return results


def check_model_end_to_end(seed: int = 0, n_samples: int = 50, h: float = H_DEFAULT) -> float:
    """Gradient-check the full three-view model at 64px, depth 2, 64-bit.

    The loss is the mean of the three view losses on one synthetic batch,
    so every parameter of both branches and the fusion path is live.
    Batchnorm running buffers are snapshot-restored around each evaluation.
    Probes that straddle a relu/amax kink are redrawn (``skip_kinks``): with
    a quarter million relu activations some pre-activation always sits
    within h of zero, making a handful of finite-difference quotients
    meaningless regardless of gradient correctness.
    """
    from .config import toy_config
    from .data import synth_dataset
    from .model import SegmentationModel
    from .train import view_loss
    from .tensor import Tensor

    cfg = toy_config(
        seed=seed, dtype="float64", d_model=48, stem_channels=8,
        stage_units=1, c4=16, c8=24, c16=32, batch_size=2,
    )
    model = SegmentationModel(cfg)
    model.train()
    samples = synth_dataset(2, cfg.image_size, seed)
    images = Tensor(np.stack([s.image for s in samples]))
    masks = Tensor(np.stack([s.mask for s in samples]))

    buffers = dict(model.named_buffers())
    saved = {name: buf.copy() for name, buf in buffers.items()}

    def reset():
        for name, buf in buffers.items():
            buf[...] = saved[name]

    def loss():
        outs = model(images)
        total = sum(view_loss(pre, masks) for pre in outs.as_tuple())
        return total * (1.0 / 3.0)

    rng = np.random.default_rng(seed)
    return check_function(
        loss, model.parameters(), rng, n_samples=n_samples, h=h, reset=reset,
        skip_kinks=True,
    )
