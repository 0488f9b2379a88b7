"""Finite-difference audit of every layer and every stage loss at toy sizes.

Exactly linear (or bilinear) maps and the composite loss must agree with
central differences to 1e-6; everything else to 1e-4.
"""

from __future__ import annotations

import time
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .audio import AudioParams, audio_forward
from .context import AttentionParams, ContextModel, EncoderConfig, multi_head_attention, scaled_dot_attention
from .fusion import SketchParams, circular_convolution, concat_fusion, count_sketch, draw_mcb_params, mcb3
from .layers import (
    Conv3dParams, DenseParams, conv1d_valid, conv3d_same, dense, layer_norm, max_over_time, max_pool3d,
    parameter_dict, relu, softmax,
)
from .losses import ccc, masked_total_loss, mse, total_loss
from .tensor import Tensor, gradient_check, tsum
from .text import EmbeddingTable, TextModel
from .visual import VisualEncoderParams, visual_forward

LINEAR_TOL = 1e-6
DEFAULT_TOL = 1e-4


@dataclass
class CheckResult:
    name: str
    error: float
    tolerance: float
    seconds: float

    @property
    def passed(self) -> bool:
        return self.error < self.tolerance

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        return f"{status} {self.name}: max rel err {self.error:.3e} (tol {self.tolerance:.0e}, {self.seconds:.2f}s)"


def _t(rng, *shape, scale=1.0) -> Tensor:
    return Tensor(rng.normal(0.0, scale, size=shape), requires_grad=True)


def _weighted(rng, shape) -> np.ndarray:
    # random projection turns a tensor output into a scalar without symmetry;
    # lambdas below bind it as a default so later reassignment cannot leak in
    return rng.normal(size=shape)


def _layer_checks(rng) -> list[tuple[str, Callable, list[Tensor], float, int | None]]:
    checks = []
    x = _t(rng, 3, 5)
    p = DenseParams.init(rng, 5, 4)
    w = _weighted(rng, (3, 4))
    checks.append(("dense", lambda x, W, b, w=w: tsum(dense(x, DenseParams(W, b)) * w), [x, p.W, p.b], LINEAR_TOL, None))

    x = Tensor(rng.uniform(0.1, 1.0, size=(4, 6)) * rng.choice([-1, 1], size=(4, 6)), requires_grad=True)
    w = _weighted(rng, (4, 6))
    checks.append(("relu", lambda x, w=w: tsum(relu(x) * w), [x], DEFAULT_TOL, None))

    x = _t(rng, 3, 7)
    w = _weighted(rng, (3, 7))
    checks.append(("softmax", lambda x, w=w: tsum(softmax(x) * w), [x], DEFAULT_TOL, None))

    x, g, b = _t(rng, 4, 6), _t(rng, 6), _t(rng, 6)
    w = _weighted(rng, (4, 6))
    checks.append(("layer_norm", lambda x, g, b, w=w: tsum(layer_norm(x, g, b) * w), [x, g, b], DEFAULT_TOL, None))

    x, k, bias = _t(rng, 2, 9, 3), _t(rng, 4, 3, 3), _t(rng, 4)
    w = _weighted(rng, (2, 7, 4))
    checks.append(("conv1d_valid", lambda x, k, b, w=w: tsum(conv1d_valid(x, k, b) * w), [x, k, bias], LINEAR_TOL, None))

    x = _t(rng, 2, 8, 4)
    w = _weighted(rng, (2, 4))
    checks.append(("max_over_time", lambda x, w=w: tsum(max_over_time(x) * w), [x], DEFAULT_TOL, None))

    x = _t(rng, 2, 4, 5, 3)
    cp = Conv3dParams.init(rng, 2, 3, 3)
    w = _weighted(rng, (3, 4, 5, 3))
    checks.append(("conv3d_same", lambda x, k, b, w=w: tsum(conv3d_same(x, Conv3dParams(k, b)) * w),
                   [x, cp.kernels, cp.bias], LINEAR_TOL, None))

    x = _t(rng, 2, 5, 4, 7)
    w = _weighted(rng, (2, 2, 2, 3))
    checks.append(("max_pool3d_ceil", lambda x, w=w: tsum(max_pool3d(x, 3) * w), [x], DEFAULT_TOL, None))

    Q, K, V = _t(rng, 2, 4, 3), _t(rng, 2, 4, 3), _t(rng, 2, 4, 5)
    mask = np.array([True, True, False, True])
    w = _weighted(rng, (2, 4, 5))
    checks.append(("scaled_dot_attention", lambda Q, K, V, w=w: tsum(scaled_dot_attention(Q, K, V, mask) * w),
                   [Q, K, V], DEFAULT_TOL, None))

    cfg = EncoderConfig(6, d_k=3, d_v=2, h=2, n_blocks=1)
    ap = AttentionParams.init(rng, cfg)
    X = _t(rng, 2, 4, 6)
    m2 = np.array([[True, True, True, False], [True, True, True, True]])
    w = _weighted(rng, (2, 4, 6))
    checks.append(("multi_head_attention",
                   lambda X, *ps, w=w: tsum(multi_head_attention(X, ap, cfg, m2) * w),
                   [X] + list(parameter_dict(ap).values()), DEFAULT_TOL, None))

    a, b = _t(rng, 8), _t(rng, 8)
    w = _weighted(rng, 8)
    checks.append(("circular_convolution", lambda a, b, w=w: tsum(circular_convolution(a, b) * w), [a, b], LINEAR_TOL, None))

    sp = SketchParams.draw(10, 8, 3)
    x = _t(rng, 3, 10)
    w = _weighted(rng, (3, 8))
    checks.append(("count_sketch", lambda x, w=w: tsum(count_sketch(x, sp) * w), [x], LINEAR_TOL, None))

    xl, xv, xa = _t(rng, 3), _t(rng, 4), _t(rng, 2)
    w = _weighted(rng, 9)
    checks.append(("concat_fusion", lambda l, v, a, w=w: tsum(concat_fusion(l, v, a) * w), [xl, xv, xa], LINEAR_TOL, None))

    sk = draw_mcb_params((3, 4, 2), 8, 5)
    w = _weighted(rng, 8)
    checks.append(("mcb3", lambda l, v, a, w=w, sk=sk: tsum(mcb3(l, v, a, sk) * w), [xl, xv, xa], LINEAR_TOL, None))

    px, gy = _t(rng, 6, 2), Tensor(rng.normal(size=(6, 2)))
    checks.append(("mse", lambda x: mse(x, gy), [px], LINEAR_TOL, None))
    checks.append(("ccc", lambda x: ccc(x[:, 0], gy[:, 0]), [px], DEFAULT_TOL, None))
    checks.append(("total_loss", lambda x: total_loss(x, gy), [px], LINEAR_TOL, None))

    pb, gb = _t(rng, 2, 4, 2), Tensor(rng.normal(size=(2, 4, 2)))
    mb = np.array([[True, True, True, False], [True, True, False, False]])
    checks.append(("masked_total_loss", lambda p: masked_total_loss(p, gb, mb), [pb], LINEAR_TOL, None))
    checks.append(("masked_total_loss_batch", lambda p: masked_total_loss(p, gb, mb, ccc_scope="batch"),
                   [pb], LINEAR_TOL, None))
    return checks


def _stage_checks(rng) -> list[tuple[str, Callable, list[Tensor], float, int | None]]:
    checks = []

    vocab = {f"w{i}": i for i in range(12)}
    table = EmbeddingTable(vocab, rng.normal(size=(12, 5)))
    text = TextModel.init(rng, table, window=7, freeze=False)
    idx = rng.integers(-1, 12, size=(4, 7))
    y_text = rng.uniform(size=(4, 2))
    checks.append(("stage text (mse)", lambda *ps: mse(text.forward(idx)[1], y_text),
                   list(parameter_dict(text).values()), DEFAULT_TOL, 40))

    vis = VisualEncoderParams.init(rng, frames=6, size=6, filters=2, kernel=3, pools=(2, 2), hidden=4)
    clips = rng.uniform(size=(2, 3, 6, 6, 6))
    y_vis = rng.uniform(size=(2, 2))
    checks.append(("stage visual (mse)", lambda *ps: mse(visual_forward(clips, vis)[1], y_vis),
                   list(parameter_dict(vis).values()), DEFAULT_TOL, 40))

    aud = AudioParams.init(rng, 6, hidden=5)
    xa = rng.normal(size=(5, 6))
    y_aud = rng.uniform(size=(5, 2))
    checks.append(("stage audio (mse)", lambda *ps: mse(audio_forward(xa, aud)[1], y_aud),
                   list(parameter_dict(aud).values()), DEFAULT_TOL, None))

    cfg = EncoderConfig(6, d_k=3, d_v=3, h=2, n_blocks=2, d_ff=8)
    ctx = ContextModel.init(rng, cfg)
    X = rng.normal(size=(2, 4, 6))
    Y = rng.uniform(size=(2, 4, 2))
    mask = np.array([[True, True, True, True], [True, True, True, False]])
    checks.append(("stage contextual (total_loss)", lambda *ps: masked_total_loss(ctx.forward(X, mask), Y, mask),
                   list(parameter_dict(ctx).values()), DEFAULT_TOL, 30))

    sk = draw_mcb_params((3, 4, 2), 8, 9)
    fcfg = EncoderConfig(8, d_k=2, d_v=2, h=2, n_blocks=1, d_ff=8)
    fused = ContextModel.init(rng, fcfg)
    xl, xv, xa3 = _t(rng, 2, 3, 3), _t(rng, 2, 3, 4), _t(rng, 2, 3, 2)
    Y_fused = rng.uniform(size=(2, 3, 2))
    fmask = np.ones((2, 3), dtype=bool)
    checks.append(("stage fused mcb (total_loss)",
                   lambda l, v, a, *ps: masked_total_loss(fused.forward(mcb3(l, v, a, sk), fmask), Y_fused, fmask),
                   [xl, xv, xa3] + list(parameter_dict(fused).values()), DEFAULT_TOL, 30))
    return checks


def run_gradient_suite(seed: int = 0) -> list[CheckResult]:
    rng = np.random.default_rng(seed)
    results = []
    for name, f, xs, tol, coords in _layer_checks(rng) + _stage_checks(rng):
        start = time.perf_counter()
        err = gradient_check(f, xs, max_coords=coords, seed=seed)
        results.append(CheckResult(name, err, tol, time.perf_counter() - start))
    return results
