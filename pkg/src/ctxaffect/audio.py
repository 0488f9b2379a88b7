"""Acoustic pipeline over precomputed per-utterance feature vectors.

Columns are ranked per target by the univariate regression F-statistic

    F_j = r_j^2 / (1 - r_j^2) * (n - 2)

where r_j is the Pearson correlation of column j with the target. The top k
columns for arousal and for valence are merged (set union, sorted). Selected
columns are standardized with training-split statistics; the standardized
vector is the utterance's acoustic feature, and a small MLP gives the
context-independent prediction.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DimensionError, InputError
from .layers import DenseParams, dense, relu
from .tensor import Tensor, as_tensor
from .train import History, StageData, fit, stage_rng, utterance_evaluator, utterance_losses

R2_CLAMP = 1.0 - 1e-12


def univariate_scores(X, y) -> np.ndarray:
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if X.ndim != 2 or y.shape != (X.shape[0],):
        raise DimensionError(f"need X [n, D] and y [n], got {X.shape} and {y.shape}")
    n = X.shape[0]
    if n < 3:
        raise InputError(f"univariate scores need at least 3 samples, got {n}")
    if not np.all(np.isfinite(X)) or not np.all(np.isfinite(y)):
        raise InputError("feature matrix or target contains non-finite values")
    Xc = X - X.mean(axis=0)
    yc = y - y.mean()
    sx = np.sqrt((Xc * Xc).sum(axis=0))
    sy = np.sqrt((yc * yc).sum())
    scores = np.zeros(X.shape[1])
    if sy == 0.0:
        return scores
    ok = sx > 0
    r = (Xc[:, ok] * yc[:, None]).sum(axis=0) / (sx[ok] * sy)
    r2 = np.minimum(r * r, R2_CLAMP)
    scores[ok] = r2 / (1.0 - r2) * (n - 2)
    return scores


def top_k(scores, k: int) -> np.ndarray:
    """Indices of the k largest scores; ties go to the lower index."""
    scores = np.asarray(scores)
    return np.sort(np.argsort(-scores, kind="stable")[:k])


def kbest_merge(X, y_arousal, y_valence, k: int = 80) -> np.ndarray:
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] < k:
        raise InputError(f"need at least k={k} feature columns, got {X.shape}")
    sel_a = top_k(univariate_scores(X, y_arousal), k)
    sel_v = top_k(univariate_scores(X, y_valence), k)
    return np.union1d(sel_a, sel_v).astype(np.int64)


def standardize(X_train, X_apply=None):
    """Scale columns by training mean/std (std 0 clamps to 1).

    Returns ``(train_std, apply_std, mean, std)``; ``apply_std`` is None when
    ``X_apply`` is None.
    """
    X_train = np.asarray(X_train, dtype=np.float64)
    mu = X_train.mean(axis=0)
    sd = X_train.std(axis=0)
    sd = np.where(sd > 0, sd, 1.0)
    applied = None if X_apply is None else (np.asarray(X_apply, dtype=np.float64) - mu) / sd
    return (X_train - mu) / sd, applied, mu, sd


@dataclass
class AudioFrontEnd:
    """Selected column indices plus the standardization fitted on training rows."""

    indices: np.ndarray
    mean: np.ndarray
    std: np.ndarray

    @classmethod
    def fit(cls, X_train, y_train, k: int = 80) -> "AudioFrontEnd":
        y_train = np.asarray(y_train, dtype=np.float64)
        idx = kbest_merge(X_train, y_train[:, 0], y_train[:, 1], k)
        _, _, mu, sd = standardize(np.asarray(X_train)[:, idx])
        return cls(idx, mu, sd)

    def transform(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=np.float64)
        return (X[:, self.indices] - self.mean) / self.std

    @property
    def width(self) -> int:
        return int(self.indices.size)


@dataclass
class AudioParams:
    hidden: DenseParams
    out: DenseParams

    @classmethod
    def init(cls, rng, width: int, hidden: int = 64) -> "AudioParams":
        return cls(DenseParams.init(rng, width, hidden), DenseParams.init(rng, hidden, 2))


def audio_forward(x, p: AudioParams) -> tuple[Tensor, Tensor]:
    """Return ``(x, prediction)``: the selected vector is itself the feature."""
    x = as_tensor(x)
    if x.shape[-1] != p.hidden.n_in:
        raise DimensionError(f"audio regressor expects width {p.hidden.n_in}, got {x.shape}")
    return x, dense(relu(dense(x, p.hidden)), p.out)


def train_audio(train, config, val=None) -> tuple[AudioFrontEnd, AudioParams, History]:
    """Select and standardize columns on the training rows, then fit the MLP with MSE.

    ``train.inputs`` and ``val.inputs`` hold raw ``[n, D]`` feature rows.
    """
    front = AudioFrontEnd.fit(train.inputs, train.targets, config.audio_k)
    sel_train = StageData(front.transform(train.inputs), train.targets, train.videos, train.video_ids)
    sel_val = None
    if val is not None:
        sel_val = StageData(front.transform(val.inputs), val.targets, val.videos, val.video_ids)
    params = AudioParams.init(stage_rng(config.seed, "audio"), front.width, config.audio_hidden)

    def predictor(data):
        if data is None:
            return None
        return lambda rows: audio_forward(data.inputs[rows], params)[1]

    history = fit(
        params,
        sel_train,
        utterance_losses(predictor(sel_train), sel_train, config.chunk_size),
        utterance_evaluator(predictor(sel_val), sel_val, config.chunk_size, config.metric_pooling),
        config,
        "audio",
    )
    return front, params, history
