"""Context-independent linguistic encoder: a one-layer sentence CNN.

A sentence becomes a fixed 50 x k window of frozen word vectors. Three kernel
banks (widths 3, 4, 2 with 30, 30 and 60 maps) run a valid convolution, each
followed by ReLU and max-over-time pooling. The pooled vectors are
concatenated into the 120-d utterance feature, passed through ReLU, and a
dense layer predicts (arousal, valence).
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import DimensionError, FormatError
from .layers import DenseParams, dense, glorot, max_over_time, relu, zeros_param, conv1d_valid
from .tensor import Tensor, as_tensor, concat
from .train import fit, stage_rng, utterance_evaluator, utterance_losses

WINDOW = 50
KERNEL_WIDTHS = (3, 4, 2)
FEATURE_MAPS = (30, 30, 60)


@dataclass
class EmbeddingTable:
    """Token -> row lookup into a frozen ``[V, k]`` matrix; unknown tokens embed to 0."""

    vocabulary: dict[str, int]
    vectors: np.ndarray

    def __post_init__(self):
        self.vectors = np.asarray(self.vectors, dtype=np.float64)
        if self.vectors.ndim != 2:
            raise DimensionError(f"embedding matrix must be 2-d, got {self.vectors.shape}")
        if not np.all(np.isfinite(self.vectors)):
            raise FormatError("embedding vectors contain non-finite values")

    @property
    def dim(self) -> int:
        return self.vectors.shape[1]

    def lookup(self, token: str) -> np.ndarray:
        row = self.vocabulary.get(token)
        return np.zeros(self.dim) if row is None else self.vectors[row]

    @classmethod
    def load(cls, path) -> "EmbeddingTable":
        """Read ``token v1 ... vk`` lines, with an optional ``V k`` header line."""
        vocab: dict[str, int] = {}
        rows: list[list[float]] = []
        with open(path, encoding="utf-8") as fh:
            lines = fh.read().splitlines()
        start = 0
        if lines:
            head = lines[0].split()
            if len(head) == 2 and all(tok.isdigit() for tok in head):
                start = 1
        width = None
        for lineno, line in enumerate(lines[start:], start=start + 1):
            parts = line.split()
            if not parts:
                continue
            try:
                values = [float(v) for v in parts[1:]]
            except ValueError as exc:
                raise FormatError(f"{path}:{lineno}: non-numeric embedding value") from exc
            if width is None:
                width = len(values)
            if len(values) != width or width == 0:
                raise FormatError(f"{path}:{lineno}: expected {width} values, got {len(values)}")
            vocab[parts[0]] = len(rows)
            rows.append(values)
        if not rows:
            raise FormatError(f"{path}: no embedding rows")
        return cls(vocab, np.array(rows))

    def save(self, path) -> None:
        inverse = sorted(self.vocabulary.items(), key=lambda kv: kv[1])
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(f"{len(inverse)} {self.dim}\n")
            for token, row in inverse:
                fh.write(token + " " + " ".join(repr(float(v)) for v in self.vectors[row]) + "\n")


def read_transcripts(path) -> list[list[str]]:
    """One utterance per line, lowercased and whitespace-tokenized."""
    lines = Path(path).read_text(encoding="utf-8").split("\n")
    if lines and lines[-1] == "":
        lines.pop()
    return [line.lower().split() for line in lines]


def embed_sentence(tokens, table: EmbeddingTable, window: int = WINDOW) -> np.ndarray:
    """First ``window`` tokens as rows of word vectors, zero-padded at the end."""
    out = np.zeros((window, table.dim))
    for i, tok in enumerate(list(tokens)[:window]):
        out[i] = table.lookup(tok)
    return out


@dataclass
class ConvBank:
    kernels: Tensor  # maps x width x k
    bias: Tensor


@dataclass
class TextEncoderParams:
    banks: list[ConvBank]
    fc_out: DenseParams
    window: int = WINDOW

    @classmethod
    def init(
        cls,
        rng: np.random.Generator,
        embed_dim: int,
        widths=KERNEL_WIDTHS,
        maps=FEATURE_MAPS,
        window: int = WINDOW,
    ) -> "TextEncoderParams":
        banks = [
            ConvBank(
                glorot(rng, (f, w, embed_dim), w * embed_dim, f * w),
                zeros_param((f,)),
            )
            for w, f in zip(widths, maps)
        ]
        return cls(banks, DenseParams.init(rng, sum(maps), 2), window)

    @property
    def embed_dim(self) -> int:
        return self.banks[0].kernels.shape[2]

    @property
    def feature_dim(self) -> int:
        return sum(b.kernels.shape[0] for b in self.banks)


def text_forward(window, p: TextEncoderParams) -> tuple[Tensor, Tensor]:
    """Return the pre-FC utterance feature and the (arousal, valence) prediction.

    Accepts one window ``[50, k]`` or a batch ``[B, 50, k]``.
    """
    x = as_tensor(window)
    if x.ndim not in (2, 3) or x.shape[-2:] != (p.window, p.embed_dim):
        raise DimensionError(
            f"text window must be [..., {p.window}, {p.embed_dim}], got {x.shape}"
        )
    pooled = [max_over_time(relu(conv1d_valid(x, b.kernels, b.bias))) for b in p.banks]
    features = relu(concat(pooled, axis=-1))
    return features, dense(features, p.fc_out)


def tokens_to_indices(sentences, table: EmbeddingTable, window: int = WINDOW) -> np.ndarray:
    """``[n, window]`` row indices into ``table``; -1 marks padding and unknown tokens."""
    idx = np.full((len(sentences), window), -1, dtype=np.int64)
    for i, tokens in enumerate(sentences):
        for j, tok in enumerate(list(tokens)[:window]):
            idx[i, j] = table.vocabulary.get(tok, -1)
    return idx


@dataclass
class TextModel:
    """Sentence CNN plus the embedding matrix it reads (one extra all-zero row)."""

    encoder: TextEncoderParams
    embedding: Tensor

    @classmethod
    def init(cls, rng, table: EmbeddingTable, window: int = WINDOW, freeze: bool = True):
        vectors = np.vstack([table.vectors, np.zeros((1, table.dim))])
        return cls(
            TextEncoderParams.init(rng, table.dim, window=window),
            Tensor(vectors, requires_grad=not freeze),
        )

    def windows(self, indices) -> Tensor:
        idx = np.asarray(indices, dtype=np.int64)
        pad_row = self.embedding.shape[0] - 1
        rows = np.where(idx < 0, pad_row, idx)
        win = self.embedding[rows]
        if self.embedding.requires_grad:
            win = win * (idx >= 0)[..., None].astype(np.float64)
        return win

    def forward(self, indices) -> tuple[Tensor, Tensor]:
        return text_forward(self.windows(indices), self.encoder)


def train_text(train, config, val=None, table: EmbeddingTable | None = None):
    """Fit the sentence CNN with MSE; ``train.inputs`` are token index rows.

    Returns ``(model, history)`` with the best validation epoch restored.
    """
    if table is None:
        raise DimensionError("train_text needs the embedding table")
    model = TextModel.init(stage_rng(config.seed, "text"), table, config.text_window,
                           config.freeze_embeddings)

    def predictor(data):
        if data is None:
            return None
        return lambda rows: model.forward(data.inputs[rows])[1]

    history = fit(
        model,
        train,
        utterance_losses(predictor(train), train, config.chunk_size),
        utterance_evaluator(predictor(val), val, config.chunk_size, config.metric_pooling),
        config,
        "text",
    )
    return model, history
