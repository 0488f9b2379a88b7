"""Differentiable layer primitives built on :mod:`ctxaffect.tensor`.

All layers accept an optional leading batch axis. Non-differentiable points
get deterministic subgradients: ReLU uses 0 at 0, and every max (pooling,
max-over-time) routes its adjoint to the first maximal element in row-major
window order.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from typing import Iterator

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import DimensionError, NumericError
from .tensor import Tensor, amax, as_tensor, make_op, matmul, mean, sqrt


# ---------------------------------------------------------------------------
# parameter containers


def glorot(rng: np.random.Generator, shape, fan_in: int, fan_out: int) -> Tensor:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return Tensor(rng.uniform(-limit, limit, size=shape), requires_grad=True)


def zeros_param(shape) -> Tensor:
    return Tensor(np.zeros(shape), requires_grad=True)


def named_parameters(obj, prefix: str = "") -> Iterator[tuple[str, Tensor]]:
    """Walk dataclasses, lists and tensors, yielding ``(dotted.name, tensor)``."""
    if isinstance(obj, Tensor):
        yield prefix, obj
    elif dataclasses.is_dataclass(obj):
        for field in dataclasses.fields(obj):
            value = getattr(obj, field.name)
            name = f"{prefix}.{field.name}" if prefix else field.name
            yield from named_parameters(value, name)
    elif isinstance(obj, (list, tuple)):
        for i, value in enumerate(obj):
            yield from named_parameters(value, f"{prefix}.{i}" if prefix else str(i))


def parameter_dict(obj) -> dict[str, Tensor]:
    return dict(named_parameters(obj))


def load_parameters(obj, arrays: dict[str, np.ndarray]) -> None:
    """Copy arrays into the matching parameters of ``obj`` in place."""
    params = parameter_dict(obj)
    missing = sorted(set(params) - set(arrays))
    if missing:
        raise DimensionError(f"checkpoint lacks parameters: {missing}")
    for name, tensor in params.items():
        value = np.asarray(arrays[name], dtype=np.float64)
        if value.shape != tensor.shape:
            raise DimensionError(
                f"parameter {name}: checkpoint shape {value.shape} != model shape {tensor.shape}"
            )
        tensor.data = value.copy()


@dataclass
class DenseParams:
    W: Tensor
    b: Tensor

    @classmethod
    def init(cls, rng: np.random.Generator, n_in: int, n_out: int) -> "DenseParams":
        return cls(glorot(rng, (n_in, n_out), n_in, n_out), zeros_param((n_out,)))

    @property
    def n_in(self) -> int:
        return self.W.shape[0]

    @property
    def n_out(self) -> int:
        return self.W.shape[1]


@dataclass
class Conv3dParams:
    kernels: Tensor  # out_ch x in_ch x k x k x k
    bias: Tensor

    @classmethod
    def init(cls, rng, in_ch: int, out_ch: int, size: int = 5) -> "Conv3dParams":
        taps = size**3
        return cls(
            glorot(rng, (out_ch, in_ch, size, size, size), in_ch * taps, out_ch * taps),
            zeros_param((out_ch,)),
        )


# ---------------------------------------------------------------------------
# pointwise layers


def dense(x, p: DenseParams) -> Tensor:
    x = as_tensor(x)
    if x.shape[-1] != p.n_in:
        raise DimensionError(f"dense expects trailing extent {p.n_in}, got input {x.shape}")
    return matmul(x, p.W) + p.b


def relu(x) -> Tensor:
    x = as_tensor(x)
    mask = x.data > 0
    return make_op(np.where(mask, x.data, 0.0), (x,), lambda g: (g * mask,), "relu")


def softmax(x, axis: int = -1) -> Tensor:
    """Numerically stable softmax; ``-inf`` entries receive exactly zero weight."""
    x = as_tensor(x)
    if np.isnan(x.data).any() or np.isposinf(x.data).any():
        raise NumericError("softmax input contains NaN or +inf")
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    y = e / e.sum(axis=axis, keepdims=True)

    def bw(g):
        return (y * (g - (g * y).sum(axis=axis, keepdims=True)),)

    return make_op(y, (x,), bw, "softmax")


def layer_norm(x, gamma, beta, eps: float = 1e-5) -> Tensor:
    """Normalize over the last axis with the population variance."""
    x = as_tensor(x)
    mu = mean(x, axis=-1, keepdims=True)
    centered = x - mu
    var = mean(centered * centered, axis=-1, keepdims=True)
    return centered / sqrt(var + eps) * gamma + beta


# ---------------------------------------------------------------------------
# convolutions and pooling


def conv1d_valid(x, kernels, bias=None) -> Tensor:
    """Valid 1-d convolution over positions; each kernel spans the full width.

    ``x`` is ``[..., L, k]`` and ``kernels`` is ``[f, w, k]``; the result is
    ``[..., L - w + 1, f]``.
    """
    x, kernels = as_tensor(x), as_tensor(kernels)
    f, w, k = kernels.shape
    L = x.shape[-2]
    if x.shape[-1] != k:
        raise DimensionError(f"conv1d kernel width {k} != embedding width of input {x.shape}")
    if L < w:
        raise DimensionError(f"conv1d sequence length {L} shorter than kernel {w}")
    n_out = L - w + 1
    # [..., n_out, k, w] -> [..., n_out, w*k]
    windows = sliding_window_view(x.data, w, axis=-2)
    cols = np.swapaxes(windows, -1, -2).reshape(x.shape[:-2] + (n_out, w * k))
    kflat = kernels.data.reshape(f, w * k)
    out = cols @ kflat.T

    def bw(g):
        gx = gk = None
        if kernels.requires_grad:
            gk = (g.reshape(-1, f).T @ cols.reshape(-1, w * k)).reshape(f, w, k)
        if x.requires_grad:
            dcols = (g @ kflat).reshape(x.shape[:-2] + (n_out, w, k))
            gx = np.zeros_like(x.data)
            for j in range(w):
                gx[..., j : j + n_out, :] += dcols[..., j, :]
        return gx, gk

    y = make_op(out, (x, kernels), bw, "conv1d")
    return y if bias is None else y + bias


def _same_pad(size: int) -> tuple[int, int]:
    lo = (size - 1) // 2
    return lo, size - 1 - lo


def conv3d_same(x, p: Conv3dParams) -> Tensor:
    """Zero-padded stride-1 3-d convolution that keeps ``D x H x W``.

    ``x`` is ``[c_in, D, H, W]`` or batched ``[B, c_in, D, H, W]``. Computed as
    an im2col matrix product (cross-correlation, the usual CNN convention).
    """
    x = as_tensor(x)
    kernels = p.kernels
    batched = x.ndim == 5
    if x.ndim not in (4, 5):
        raise DimensionError(f"conv3d expects [C,D,H,W] or [B,C,D,H,W], got {x.shape}")
    xb = x.data if batched else x.data[None]
    out_ch, in_ch, kd, kh, kw = kernels.shape
    B, C, D, H, W = xb.shape
    if C != in_ch:
        raise DimensionError(f"conv3d kernels expect {in_ch} input channels, got input {x.shape}")
    pads = [_same_pad(kd), _same_pad(kh), _same_pad(kw)]
    xp = np.pad(xb, [(0, 0), (0, 0)] + pads)
    windows = sliding_window_view(xp, (kd, kh, kw), axis=(2, 3, 4))  # B,C,D,H,W,kd,kh,kw
    ncol = C * kd * kh * kw
    cols = windows.transpose(0, 2, 3, 4, 1, 5, 6, 7).reshape(B * D * H * W, ncol)
    kflat = kernels.data.reshape(out_ch, ncol)
    out = (cols @ kflat.T).reshape(B, D, H, W, out_ch).transpose(0, 4, 1, 2, 3)
    out = out + p.bias.data[None, :, None, None, None]
    if not batched:
        out = out[0]

    def bw(g):
        gb = g if batched else g[None]
        gflat = gb.transpose(0, 2, 3, 4, 1).reshape(-1, out_ch)
        gx = gk = gbias = None
        if kernels.requires_grad:
            gk = (gflat.T @ cols).reshape(kernels.shape)
        if p.bias.requires_grad:
            gbias = gb.sum(axis=(0, 2, 3, 4))
        if x.requires_grad:
            dcols = (gflat @ kflat).reshape(B, D, H, W, C, kd, kh, kw)
            gxp = np.zeros_like(xp)
            for a in range(kd):
                for b in range(kh):
                    for c in range(kw):
                        gxp[:, :, a : a + D, b : b + H, c : c + W] += dcols[
                            :, :, :, :, :, a, b, c
                        ].transpose(0, 4, 1, 2, 3)
            (l0, _), (l1, _), (l2, _) = pads
            gx = gxp[:, :, l0 : l0 + D, l1 : l1 + H, l2 : l2 + W]
            gx = gx if batched else gx[0]
        return gx, gk, gbias

    return make_op(out, (x, kernels, p.bias), bw, "conv3d")


def pool_extent(n: int, window: int, ceil_mode: bool = True) -> int:
    return -(-n // window) if ceil_mode else n // window


def max_pool3d(x, window: int, ceil_mode: bool = True) -> Tensor:
    """Non-overlapping 3-d max pooling over the last three axes.

    In ceil mode trailing partial windows are kept (padded with ``-inf``), so
    an extent ``n`` maps to ``ceil(n / window)``.
    """
    x = as_tensor(x)
    if x.ndim < 3:
        raise DimensionError(f"max_pool3d needs at least 3 axes, got {x.shape}")
    lead = x.shape[:-3]
    dims = x.shape[-3:]
    outs = [pool_extent(n, window, ceil_mode) for n in dims]
    if min(outs) < 1:
        raise DimensionError(f"pool window {window} larger than extents {dims} without ceil mode")
    padded_dims = [o * window for o in outs]
    data = x.data
    if ceil_mode:
        pad = [(0, 0)] * len(lead) + [(0, p - n) for p, n in zip(padded_dims, dims)]
        data = np.pad(data, pad, constant_values=-np.inf)
    else:
        data = data[..., : padded_dims[0], : padded_dims[1], : padded_dims[2]]
    nl = len(lead)
    blocks = data.reshape(lead + (outs[0], window, outs[1], window, outs[2], window))
    perm = tuple(range(nl)) + (nl, nl + 2, nl + 4, nl + 1, nl + 3, nl + 5)
    blocks = blocks.transpose(perm).reshape(lead + tuple(outs) + (window**3,))
    idx = np.argmax(blocks, axis=-1)
    out = np.take_along_axis(blocks, idx[..., None], axis=-1)[..., 0]

    def bw(g):
        gblocks = np.zeros(blocks.shape)
        np.put_along_axis(gblocks, idx[..., None], g[..., None], axis=-1)
        gblocks = gblocks.reshape(lead + tuple(outs) + (window, window, window))
        inverse = np.argsort(perm)
        gdata = gblocks.transpose(inverse).reshape(lead + tuple(padded_dims))
        grad = np.zeros_like(x.data)
        sl = tuple(slice(0, min(n, p)) for n, p in zip(dims, padded_dims))
        grad[(Ellipsis,) + sl] = gdata[(Ellipsis,) + sl]
        return (grad,)

    return make_op(out, (x,), bw, "maxpool3d")


def max_over_time(x) -> Tensor:
    """Column-wise maximum over positions: ``[..., L, f] -> [..., f]``."""
    x = as_tensor(x)
    if x.ndim < 2 or x.shape[-2] < 1:
        raise DimensionError(f"max_over_time needs [..., L>=1, f], got {x.shape}")
    return amax(x, axis=-2)
