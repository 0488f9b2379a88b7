"""Utterance-level multimodal fusion.

Two variants feed the context-dependent multimodal stage:

* concatenation of the linguistic, visual and acoustic vectors, and
* three-way compact bilinear pooling. The flattened outer product
  ``x (x) y (x) z`` is never formed; instead each modality is count-sketched
  to ``d`` dimensions and the sketches are circularly convolved, which equals
  the count sketch of the outer product under the composed hash
  ``(h1(i) + h2(j) + h3(k)) mod d`` and sign ``s1(i) s2(j) s3(k)``.

Circular convolution runs through an iterative radix-2 FFT for power-of-two
lengths and falls back to the direct O(d^2) sum otherwise.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DimensionError
from .tensor import Tensor, as_tensor, concat, make_op, unbroadcast


# ---------------------------------------------------------------------------
# FFT


def is_power_of_two(n: int) -> bool:
    return n >= 1 and n & (n - 1) == 0


def _bit_reverse_indices(n: int) -> np.ndarray:
    bits = n.bit_length() - 1
    idx = np.arange(n)
    rev = np.zeros(n, dtype=np.int64)
    for b in range(bits):
        rev |= ((idx >> b) & 1) << (bits - 1 - b)
    return rev


def fft(x: np.ndarray, inverse: bool = False) -> np.ndarray:
    """Radix-2 decimation-in-time FFT along the last axis.

    The inverse transform includes the ``1/n`` factor.
    """
    x = np.asarray(x, dtype=np.complex128)
    n = x.shape[-1]
    if not is_power_of_two(n):
        raise DimensionError(f"radix-2 FFT needs a power-of-two length, got {n}")
    out = x[..., _bit_reverse_indices(n)]
    sign = 1.0 if inverse else -1.0
    lead = out.shape[:-1]
    m = 2
    while m <= n:
        half = m // 2
        twiddle = np.exp(sign * 2j * np.pi * np.arange(half) / m)
        blocks = out.reshape(lead + (n // m, m))
        even = blocks[..., :half]
        odd = blocks[..., half:] * twiddle
        out = np.concatenate([even + odd, even - odd], axis=-1).reshape(lead + (n,))
        m *= 2
    return out / n if inverse else out


def ifft(x: np.ndarray) -> np.ndarray:
    return fft(x, inverse=True)


def circular_convolution_direct(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Reference ``out[t] = sum_s a[s] * b[(t - s) mod d]`` along the last axis."""
    a, b = np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64)
    d = a.shape[-1]
    if b.shape[-1] != d:
        raise DimensionError(f"circular convolution lengths differ: {a.shape} vs {b.shape}")
    idx = (np.arange(d)[:, None] - np.arange(d)[None, :]) % d  # [t, s] -> t - s
    # circulant[..., t, s] = b[..., (t - s) mod d]
    circulant = b[..., idx]
    return np.einsum("...ts,...s->...t", circulant, a)


def _circular_convolution_array(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    d = a.shape[-1]
    if b.shape[-1] != d:
        raise DimensionError(f"circular convolution lengths differ: {a.shape} vs {b.shape}")
    if is_power_of_two(d):
        return ifft(fft(a) * fft(b)).real
    return circular_convolution_direct(a, b)


def _reflect(v: np.ndarray) -> np.ndarray:
    """``r[u] = v[(-u) mod d]``."""
    d = v.shape[-1]
    return v[..., (-np.arange(d)) % d]


def circular_convolution(a, b) -> Tensor:
    """Differentiable circular convolution along the last axis.

    Adjoints are circular correlations, obtained as convolutions with the
    reflected other operand, so they stay real-valued.
    """
    a, b = as_tensor(a), as_tensor(b)
    if a.shape[-1] != b.shape[-1]:
        raise DimensionError(f"circular convolution lengths differ: {a.shape} vs {b.shape}")
    out = _circular_convolution_array(a.data, b.data)

    def bw(g):
        ga = gb = None
        if a.requires_grad:
            ga = unbroadcast(_circular_convolution_array(g, _reflect(b.data)), a.shape)
        if b.requires_grad:
            gb = unbroadcast(_circular_convolution_array(g, _reflect(a.data)), b.shape)
        return ga, gb

    return make_op(out, (a, b), bw, "circconv")


# ---------------------------------------------------------------------------
# count sketch


@dataclass
class SketchParams:
    """Frozen hash ``[D] -> [d]`` and sign ``[D] -> {-1, +1}`` maps."""

    hash: np.ndarray
    sign: np.ndarray
    d: int
    seed: int | None = None

    def __post_init__(self):
        self.hash = np.asarray(self.hash, dtype=np.int64)
        self.sign = np.asarray(self.sign, dtype=np.float64)
        if self.hash.shape != self.sign.shape or self.hash.ndim != 1:
            raise DimensionError("hash and sign must be 1-d arrays of equal length")
        if self.hash.size and (self.hash.min() < 0 or self.hash.max() >= self.d):
            raise DimensionError(f"hash values must lie in [0, {self.d})")
        if not np.all(np.abs(self.sign) == 1.0):
            raise DimensionError("signs must be +1 or -1")

    @property
    def D(self) -> int:
        return int(self.hash.size)

    @classmethod
    def draw(cls, D: int, d: int, seed: int) -> "SketchParams":
        rng = np.random.default_rng(seed)
        h = rng.integers(0, d, size=D)
        s = rng.choice(np.array([-1.0, 1.0]), size=D)
        return cls(h, s, d, seed)

    def matrix(self) -> np.ndarray:
        """Dense ``[D, d]`` projection with ``S[j, hash[j]] = sign[j]``."""
        S = np.zeros((self.D, self.d))
        S[np.arange(self.D), self.hash] = self.sign
        return S


def count_sketch(x, p: SketchParams) -> Tensor:
    """``out[..., t] = sum over j with hash[j] == t of sign[j] * x[..., j]``."""
    x = as_tensor(x)
    if x.shape[-1] != p.D:
        raise DimensionError(f"sketch defined on {p.D} inputs, got {x.shape}")
    out = x.data @ p.matrix()

    def bw(g):
        return (g[..., p.hash] * p.sign,)

    return make_op(out, (x,), bw, "countsketch")


def compose_sketches(params: list[SketchParams]) -> SketchParams:
    """Sketch of the flattened (row-major) outer product implied by ``params``."""
    d = params[0].d
    if any(p.d != d for p in params):
        raise DimensionError("composed sketches must share the output dimension")
    h = params[0].hash
    s = params[0].sign
    for p in params[1:]:
        h = ((h[:, None] + p.hash[None, :]) % d).reshape(-1)
        s = (s[:, None] * p.sign[None, :]).reshape(-1)
    return SketchParams(h, s, d)


# ---------------------------------------------------------------------------
# fusion variants


def concat_fusion(x_l, x_v, x_a, widths: tuple[int, int, int] | None = None) -> Tensor:
    """``x_l (+) x_v (+) x_a`` along the last axis, in that order."""
    parts = [as_tensor(x_l), as_tensor(x_v), as_tensor(x_a)]
    if widths is not None:
        got = tuple(p.shape[-1] for p in parts)
        if got != tuple(widths):
            raise DimensionError(f"modality widths {got} != expected {tuple(widths)}")
    return concat(parts, axis=-1)


def mcb2(x, y, params: tuple[SketchParams, SketchParams]) -> Tensor:
    """Two-way compact bilinear pooling; kept for checks, not a fusion mode."""
    return circular_convolution(count_sketch(x, params[0]), count_sketch(y, params[1]))


def mcb3(x_l, x_v, x_a, params: tuple[SketchParams, SketchParams, SketchParams]) -> Tensor:
    """Three-way compact bilinear pooling of the modality vectors."""
    if len({p.d for p in params}) != 1:
        raise DimensionError(f"sketch dimensions differ: {[p.d for p in params]}")
    sl = count_sketch(x_l, params[0])
    sv = count_sketch(x_v, params[1])
    sa = count_sketch(x_a, params[2])
    return circular_convolution(circular_convolution(sl, sv), sa)


def draw_mcb_params(widths: tuple[int, int, int], d: int, seed: int):
    """Independent sketch pairs per modality, derived from one seed."""
    seeds = np.random.SeedSequence(seed).generate_state(3)
    return tuple(SketchParams.draw(D, d, int(s)) for D, s in zip(widths, seeds))
