"""Shared training loop: seeded video batching, micro-batched backward, best-epoch selection."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable, Iterable

import numpy as np

from .errors import InputError
from .layers import parameter_dict
from .losses import mean_ccc, mse
from .optim import make_optimizer, zero_grad
from .tensor import Tensor, backward, no_grad

log = logging.getLogger(__name__)

STAGE_SALT = {
    "text": 11,
    "visual": 12,
    "audio": 13,
    "context-text": 21,
    "context-visual": 22,
    "context-audio": 23,
    "fusion": 31,
}


def stage_rng(seed: int, stage: str, purpose: int = 0) -> np.random.Generator:
    return np.random.default_rng([int(seed), STAGE_SALT[stage], purpose])


@dataclass
class StageData:
    """Per-utterance inputs and gold labels, grouped by video.

    ``videos`` lists the row indices of each video in utterance order.
    """

    inputs: np.ndarray
    targets: np.ndarray
    videos: list[np.ndarray]
    video_ids: list[str] = field(default_factory=list)

    def __post_init__(self):
        self.targets = np.asarray(self.targets, dtype=np.float64)
        if len(self.inputs) != len(self.targets):
            raise InputError(f"{len(self.inputs)} inputs but {len(self.targets)} targets")
        if not self.videos:
            raise InputError("dataset has no videos")
        if not self.video_ids:
            self.video_ids = [str(i) for i in range(len(self.videos))]

    @property
    def n(self) -> int:
        return len(self.targets)

    def row_video_ids(self) -> np.ndarray:
        ids = np.empty(self.n, dtype=object)
        for vid, rows in zip(self.video_ids, self.videos):
            ids[rows] = vid
        return ids


@dataclass
class History:
    epochs: list[dict] = field(default_factory=list)
    best_epoch: int = -1
    best_score: float = float("-inf")

    @property
    def train_losses(self) -> list[float]:
        return [e["train_loss"] for e in self.epochs]


def video_batches(n_videos: int, batch_size: int, rng: np.random.Generator) -> list[np.ndarray]:
    order = rng.permutation(n_videos)
    return [order[i : i + batch_size] for i in range(0, n_videos, batch_size)]


def fit(
    params_obj,
    data: StageData,
    batch_losses: Callable[[list[np.ndarray]], Iterable[Tensor]],
    evaluate: Callable[[], float] | None,
    config,
    stage: str,
    epochs: int | None = None,
    max_steps: int | None = None,
) -> History:
    """Optimize ``params_obj`` in place; restores the best-scoring epoch at the end.

    ``batch_losses(videos)`` yields partial losses summing to the batch loss;
    each gets its own backward pass and gradients accumulate before one
    optimizer step. ``evaluate`` returns a higher-is-better validation score;
    without it the negative epoch training loss is used.
    """
    params = {k: v for k, v in parameter_dict(params_obj).items() if v.requires_grad}
    opt = make_optimizer(config.replace(lr=config.lr_for(stage)))
    rng = stage_rng(config.seed, stage, purpose=1)
    epochs = config.epochs_for(stage) if epochs is None else epochs
    history = History()
    best_state = {k: v.data.copy() for k, v in params.items()}
    steps = 0
    for epoch in range(epochs):
        total, count = 0.0, 0
        for batch in video_batches(len(data.videos), config.batch_size, rng):
            zero_grad(params)
            batch_loss = 0.0
            for loss in batch_losses([data.videos[i] for i in batch]):
                batch_loss += loss.item()
                backward(loss)
            opt.step(params)
            total += batch_loss
            count += 1
            steps += 1
            if max_steps is not None and steps >= max_steps:
                break
        train_loss = total / max(count, 1)
        score = evaluate() if evaluate is not None else -train_loss
        history.epochs.append({"epoch": epoch, "train_loss": train_loss, "score": score})
        log.info("%s epoch %d train_loss %.6f score %.6f", stage, epoch, train_loss, score)
        if score > history.best_score:
            history.best_score, history.best_epoch = score, epoch
            best_state = {k: v.data.copy() for k, v in params.items()}
        if max_steps is not None and steps >= max_steps:
            break
        if config.target_loss and train_loss < config.target_loss:
            break
    for k, v in params.items():
        v.data = best_state[k]
        v.grad = None
    return history


def predict_rows(predict: Callable[[np.ndarray], Tensor], rows: np.ndarray, chunk: int) -> np.ndarray:
    """Run ``predict`` over row indices in chunks without recording a graph."""
    out = []
    with no_grad():
        for i in range(0, len(rows), chunk):
            out.append(predict(rows[i : i + chunk]).data)
    return np.concatenate(out, axis=0) if out else np.zeros((0, 2))


def utterance_losses(predict, data: StageData, chunk: int):
    """MSE over the utterances of a batch of videos, split into weighted chunks."""

    def batch_losses(videos):
        rows = np.concatenate(videos)
        n = len(rows)
        for i in range(0, n, chunk):
            part = rows[i : i + chunk]
            yield mse(predict(part), data.targets[part]) * (len(part) / n)

    return batch_losses


def utterance_evaluator(predict, val: StageData | None, chunk: int, pooling: str = "pooled"):
    if val is None:
        return None
    rows = np.concatenate(val.videos)

    def evaluate() -> float:
        preds = predict_rows(predict, rows, chunk)
        return mean_ccc(preds, val.targets[rows], val.row_video_ids()[rows], pooling)[2]

    return evaluate
