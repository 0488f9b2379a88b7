"""Regression objectives and the concordance metric.

Moments are population (1/N) moments throughout. The concordance correlation
coefficient uses the covariance in its numerator:

    ccc = 2 cov(x, y) / (var(x) + var(y) + (mean(x) - mean(y))**2)

with two degenerate cases: if the denominator vanishes (both series constant
and equal) the value is 1; two constant but different series give 0 because
the covariance is 0.
"""

from __future__ import annotations

import numpy as np

from .errors import InputError
from .tensor import Tensor, as_tensor, mean, tsum, where

DEGENERATE_EPS = 1e-12


def _pair(x, y) -> tuple[Tensor, Tensor]:
    x, y = as_tensor(x), as_tensor(y)
    if x.shape != y.shape:
        raise InputError(f"prediction shape {x.shape} != gold shape {y.shape}")
    if x.ndim == 0 or x.shape[0] < 1:
        raise InputError("need at least one sample")
    return x, y


def _columns(x: Tensor) -> int:
    if x.ndim == 1:
        return 0
    if x.ndim == 2:
        return x.shape[1]
    raise InputError(f"expected [N] or [N, targets], got {x.shape}")


def mse(x, y) -> Tensor:
    """Mean squared error over all entries."""
    x, y = _pair(x, y)
    d = x - y
    return mean(d * d)


def ccc(x, y) -> Tensor:
    """Lin's concordance correlation coefficient of two 1-d series."""
    x, y = _pair(x, y)
    if x.ndim != 1:
        raise InputError(f"ccc takes 1-d series, got {x.shape}")
    if x.shape[0] < 2:
        raise InputError("ccc needs at least two samples")
    mx, my = mean(x), mean(y)
    dx, dy = x - mx, y - my
    cov = mean(dx * dy)
    den = mean(dx * dx) + mean(dy * dy) + (mx - my) * (mx - my)
    degenerate = den.data < DEGENERATE_EPS
    safe = where(degenerate, 1.0, den)
    return where(degenerate, 1.0, 2.0 * cov / safe)


def pearson(x, y) -> float:
    x, y = np.asarray(x, dtype=float), np.asarray(y, dtype=float)
    dx, dy = x - x.mean(), y - y.mean()
    den = np.sqrt((dx * dx).sum() * (dy * dy).sum())
    return float((dx * dy).sum() / den) if den > 0 else 0.0


def total_loss(x, y, ccc_weight: float = 0.25) -> Tensor:
    """``mse + ccc_weight * (1 - ccc)`` per target, summed over target columns.

    1-d inputs are a single target; ``[N, 2]`` inputs hold arousal and valence.
    """
    x, y = _pair(x, y)
    if _columns(x) == 0:
        return mse(x, y) + ccc_weight * (1.0 - ccc(x, y))
    terms = [total_loss(x[:, j], y[:, j], ccc_weight) for j in range(x.shape[1])]
    out = terms[0]
    for t in terms[1:]:
        out = out + t
    return out


def masked_total_loss(pred, gold, mask, ccc_weight: float = 0.25, ccc_scope: str = "video"):
    """Training objective for padded video batches.

    ``pred`` and ``gold`` are ``[B, T, n_targets]``, ``mask`` is ``[B, T]``.
    MSE is averaged over valid utterances of the batch. With
    ``ccc_scope="video"`` the CCC term is computed inside each video (videos
    with fewer than two valid utterances are skipped) and averaged; with
    ``"batch"`` all valid utterances are pooled.
    """
    pred, gold = as_tensor(pred), as_tensor(gold)
    m = np.asarray(mask, dtype=np.float64)
    if pred.shape != gold.shape or pred.shape[:2] != m.shape:
        raise InputError(f"shapes disagree: pred {pred.shape}, gold {gold.shape}, mask {m.shape}")
    n_valid = m.sum()
    if n_valid < 1:
        raise InputError("mask selects no utterance")
    w = m[..., None]
    d = (pred - gold) * w
    mse_per_target = tsum(d * d, axis=(0, 1)) * (1.0 / n_valid)

    if ccc_scope == "batch":
        keep = np.flatnonzero(m.reshape(-1) > 0)
        n_t = pred.shape[-1]
        flat_p = pred.reshape(-1, n_t)[keep]
        flat_g = gold.reshape(-1, n_t)[keep]
        if flat_p.shape[0] < 2:
            return tsum(mse_per_target)
        cccs = [ccc(flat_p[:, j], flat_g[:, j]) for j in range(n_t)]
        loss = tsum(mse_per_target)
        for c in cccs:
            loss = loss + ccc_weight * (1.0 - c)
        return loss
    if ccc_scope != "video":
        raise InputError(f"unknown ccc_scope {ccc_scope!r}")

    counts = m.sum(axis=1)  # B
    usable = counts >= 2
    if not usable.any():
        return tsum(mse_per_target)
    n = np.maximum(counts, 1.0)[:, None]  # B x 1
    mx = tsum(pred * w, axis=1) * (1.0 / n)  # B x n_t
    my = tsum(gold * w, axis=1) * (1.0 / n)
    dx = (pred - mx.reshape(mx.shape[0], 1, mx.shape[1])) * w
    dy = (gold - my.reshape(my.shape[0], 1, my.shape[1])) * w
    cov = tsum(dx * dy, axis=1) * (1.0 / n)
    vx = tsum(dx * dx, axis=1) * (1.0 / n)
    vy = tsum(dy * dy, axis=1) * (1.0 / n)
    den = vx + vy + (mx - my) * (mx - my)
    degenerate = den.data < DEGENERATE_EPS
    per_video = where(degenerate, 1.0, 2.0 * cov / where(degenerate, 1.0, den))
    sel = usable.astype(np.float64)[:, None]
    mean_ccc = tsum(per_video * sel, axis=0) * (1.0 / sel.sum())  # n_t
    return tsum(mse_per_target + ccc_weight * (1.0 - mean_ccc))


def ccc_value(x, y) -> float:
    return float(ccc(np.asarray(x, dtype=float), np.asarray(y, dtype=float)).data)


def mean_ccc(predictions, golds, video_ids=None, pooling: str = "pooled") -> tuple[float, float, float]:
    """Return ``(ccc_arousal, ccc_valence, mean)`` for ``[N, 2]`` predictions.

    ``pooling="pooled"`` scores all utterances of the split together;
    ``"per_video"`` averages per-video coefficients (videos shorter than 2
    utterances are ignored) and needs ``video_ids``.
    """
    p = np.asarray(predictions, dtype=np.float64)
    g = np.asarray(golds, dtype=np.float64)
    if p.shape != g.shape or p.ndim != 2 or p.shape[1] != 2:
        raise InputError(f"mean_ccc expects aligned [N, 2] arrays, got {p.shape} and {g.shape}")
    if pooling == "pooled":
        scores = [ccc_value(p[:, j], g[:, j]) for j in range(2)]
    elif pooling == "per_video":
        if video_ids is None:
            raise InputError("per_video pooling needs video ids")
        ids = np.asarray(video_ids)
        groups = [np.flatnonzero(ids == v) for v in dict.fromkeys(ids.tolist())]
        groups = [gi for gi in groups if gi.size >= 2]
        if not groups:
            raise InputError("no video has two or more utterances")
        scores = [float(np.mean([ccc_value(p[gi, j], g[gi, j]) for gi in groups])) for j in range(2)]
    else:
        raise InputError(f"unknown pooling {pooling!r}")
    return scores[0], scores[1], (scores[0] + scores[1]) / 2.0


def format_report_line(split: str, model: str, scores: tuple[float, float, float]) -> str:
    a, v, m = scores
    return f"{split},{model},{a:.6f},{v:.6f},{m:.6f}"
