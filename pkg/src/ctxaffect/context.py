"""Context-dependent stage: a post-norm transformer encoder over one video's utterances.

Each block computes ``LayerNorm(x + MHA(x))`` then ``LayerNorm(x + FFN(x))``.
There is no positional encoding, so the encoder is permutation-equivariant in
the utterance axis. Padded positions are excluded as attention keys and from
the loss; their own outputs are meaningless.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ContractError, DimensionError
from .layers import DenseParams, dense, glorot, layer_norm, relu, softmax, zeros_param
from .losses import masked_total_loss, mean_ccc
from .tensor import Tensor, as_tensor, matmul, no_grad, reshape, transpose, where
from .train import StageData, fit, stage_rng


@dataclass
class EncoderConfig:
    d_model: int
    d_k: int = 64
    d_v: int = 64
    h: int = 8
    n_blocks: int = 2
    d_ff: int | None = None
    eps: float = 1e-5

    def __post_init__(self):
        if self.d_ff is None or self.d_ff == 0:
            self.d_ff = 4 * self.d_model
        for name in ("d_model", "d_k", "d_v", "h", "n_blocks", "d_ff"):
            if getattr(self, name) <= 0:
                raise DimensionError(f"{name} must be positive")


@dataclass
class AttentionParams:
    Wq: Tensor  # d_model x h*d_k
    bq: Tensor
    Wk: Tensor
    bk: Tensor
    Wv: Tensor  # d_model x h*d_v
    bv: Tensor
    Wo: Tensor  # h*d_v x d_model
    bo: Tensor

    @classmethod
    def init(cls, rng, cfg: EncoderConfig) -> "AttentionParams":
        dq, dv = cfg.h * cfg.d_k, cfg.h * cfg.d_v
        m = cfg.d_model
        return cls(
            glorot(rng, (m, dq), m, cfg.d_k), zeros_param((dq,)),
            glorot(rng, (m, dq), m, cfg.d_k), zeros_param((dq,)),
            glorot(rng, (m, dv), m, cfg.d_v), zeros_param((dv,)),
            glorot(rng, (dv, m), dv, m), zeros_param((m,)),
        )


@dataclass
class BlockParams:
    attention: AttentionParams
    ln1_gamma: Tensor
    ln1_beta: Tensor
    ff1: DenseParams
    ff2: DenseParams
    ln2_gamma: Tensor
    ln2_beta: Tensor

    @classmethod
    def init(cls, rng, cfg: EncoderConfig) -> "BlockParams":
        m = cfg.d_model
        return cls(
            AttentionParams.init(rng, cfg),
            Tensor(np.ones(m), requires_grad=True), zeros_param((m,)),
            DenseParams.init(rng, m, cfg.d_ff), DenseParams.init(rng, cfg.d_ff, m),
            Tensor(np.ones(m), requires_grad=True), zeros_param((m,)),
        )


@dataclass
class ContextParams:
    blocks: list[BlockParams]
    head: DenseParams

    @classmethod
    def init(cls, rng, cfg: EncoderConfig) -> "ContextParams":
        return cls([BlockParams.init(rng, cfg) for _ in range(cfg.n_blocks)],
                   DenseParams.init(rng, cfg.d_model, 2))


def _key_mask(mask, T: int) -> np.ndarray | None:
    if mask is None:
        return None
    m = np.asarray(mask, dtype=bool)
    if m.shape[-1] != T:
        raise DimensionError(f"mask length {m.shape[-1]} != sequence length {T}")
    if not m.any(axis=-1).all():
        raise ContractError("every sequence needs at least one unmasked position")
    return m


def scaled_dot_attention(Q, K, V, mask=None, return_weights: bool = False):
    """``softmax(Q K^T / sqrt(d_k)) V`` with masked keys given zero weight.

    Shapes are ``[..., T, d_k]`` for Q and K and ``[..., T, d_v]`` for V; the
    mask is ``[T]`` or broadcastable ``[..., T]`` over keys.
    """
    Q, K, V = as_tensor(Q), as_tensor(K), as_tensor(V)
    if Q.shape[-1] != K.shape[-1] or K.shape[-2] != V.shape[-2]:
        raise DimensionError(f"attention shapes disagree: Q {Q.shape}, K {K.shape}, V {V.shape}")
    d_k = Q.shape[-1]
    scores = matmul(Q, transpose(K, tuple(range(K.ndim - 2)) + (K.ndim - 1, K.ndim - 2)))
    scores = scores * (1.0 / np.sqrt(d_k))
    m = _key_mask(mask, K.shape[-2])
    if m is not None:
        keys = np.broadcast_to(m[..., None, :], scores.shape)  # same keys for every query
        scores = where(keys, scores, -np.inf)
    weights = softmax(scores, axis=-1)
    out = matmul(weights, V)
    return (out, weights) if return_weights else out


def _split_heads(x: Tensor, h: int, d: int) -> Tensor:
    # [..., T, h*d] -> [..., h, T, d]
    lead, T = x.shape[:-2], x.shape[-2]
    x = reshape(x, lead + (T, h, d))
    n = len(lead)
    return transpose(x, tuple(range(n)) + (n + 1, n, n + 2))


def _merge_heads(x: Tensor) -> Tensor:
    # [..., h, T, d] -> [..., T, h*d]
    lead = x.shape[:-3]
    h, T, d = x.shape[-3:]
    n = len(lead)
    x = transpose(x, tuple(range(n)) + (n + 1, n, n + 2))
    return reshape(x, lead + (T, h * d))


def multi_head_attention(X, p: AttentionParams, cfg: EncoderConfig, mask=None,
                         return_weights: bool = False):
    """h parallel attention heads, concatenated to h*d_v and projected back to d_model."""
    X = as_tensor(X)
    if X.shape[-1] != cfg.d_model:
        raise DimensionError(f"attention expects d_model={cfg.d_model}, got {X.shape}")
    q = _split_heads(matmul(X, p.Wq) + p.bq, cfg.h, cfg.d_k)
    k = _split_heads(matmul(X, p.Wk) + p.bk, cfg.h, cfg.d_k)
    v = _split_heads(matmul(X, p.Wv) + p.bv, cfg.h, cfg.d_v)
    head_mask = None
    if mask is not None:
        head_mask = np.asarray(mask, dtype=bool)[..., None, :]  # [..., 1, T] over heads
    heads, weights = scaled_dot_attention(q, k, v, head_mask, return_weights=True)
    concat = _merge_heads(heads)
    out = matmul(concat, p.Wo) + p.bo
    return (out, weights, concat) if return_weights else out


def transformer_encode(X, cfg: EncoderConfig, params: ContextParams, mask=None) -> Tensor:
    X = as_tensor(X)
    if X.ndim < 2 or X.shape[-2] < 1:
        raise DimensionError(f"encoder input must be [..., T>=1, d_model], got {X.shape}")
    x = X
    for block in params.blocks:
        x = layer_norm(x + multi_head_attention(x, block.attention, cfg, mask),
                       block.ln1_gamma, block.ln1_beta, cfg.eps)
        ff = dense(relu(dense(x, block.ff1)), block.ff2)
        x = layer_norm(x + ff, block.ln2_gamma, block.ln2_beta, cfg.eps)
    return x


def context_predict(encoded, params: ContextParams) -> Tensor:
    """Per-utterance (arousal, valence) from encoder outputs."""
    return dense(encoded, params.head)


def context_forward(X, cfg: EncoderConfig, params: ContextParams, mask=None) -> Tensor:
    return context_predict(transformer_encode(X, cfg, params, mask), params)


@dataclass
class ContextModel:
    cfg: EncoderConfig
    params: ContextParams

    @classmethod
    def init(cls, rng, cfg: EncoderConfig) -> "ContextModel":
        return cls(cfg, ContextParams.init(rng, cfg))

    def forward(self, X, mask=None) -> Tensor:
        return context_forward(X, self.cfg, self.params, mask)


def encoder_config_for(d_model: int, config) -> EncoderConfig:
    return EncoderConfig(d_model, config.d_k, config.d_v, config.heads, config.blocks,
                         config.d_ff or None, config.ln_eps)


def pack_videos(features, targets, videos):
    """Stack videos into zero-padded ``[B, T_max, d]`` inputs, targets and a validity mask."""
    features = np.asarray(features, dtype=np.float64)
    T = max(len(v) for v in videos)
    B = len(videos)
    X = np.zeros((B, T, features.shape[1]))
    Y = np.zeros((B, T, 2))
    mask = np.zeros((B, T), dtype=bool)
    for b, rows in enumerate(videos):
        X[b, : len(rows)] = features[rows]
        if targets is not None:
            Y[b, : len(rows)] = targets[rows]
        mask[b, : len(rows)] = True
    return X, Y, mask


def predict_videos(model: ContextModel, features, videos, batch_size: int = 8) -> np.ndarray:
    """Per-row predictions ``[n, 2]`` for every row listed in ``videos``."""
    out = np.zeros((len(features), 2))
    with no_grad():
        for i in range(0, len(videos), batch_size):
            chunk = videos[i : i + batch_size]
            X, _, mask = pack_videos(features, None, chunk)
            pred = model.forward(X, mask).data
            for b, rows in enumerate(chunk):
                out[rows] = pred[b, : len(rows)]
    return out


def train_context(train: StageData, config, stage: str, val: StageData | None = None):
    """Fit the encoder and head on per-utterance features with the composite loss."""
    model = ContextModel.init(stage_rng(config.seed, stage),
                              encoder_config_for(train.inputs.shape[1], config))

    def batch_losses(videos):
        X, Y, mask = pack_videos(train.inputs, train.targets, videos)
        yield masked_total_loss(model.forward(X, mask), Y, mask, config.ccc_weight,
                                config.ccc_scope)

    evaluate = None
    if val is not None:
        rows = np.concatenate(val.videos)
        ids = val.row_video_ids()

        def evaluate() -> float:
            preds = predict_videos(model, val.inputs, val.videos, config.batch_size)
            return mean_ccc(preds[rows], val.targets[rows], ids[rows], config.metric_pooling)[2]

    history = fit(model, train, batch_losses, evaluate, config, stage)
    return model, history
