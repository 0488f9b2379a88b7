"""Context-independent visual encoder: a two-layer 3-D CNN over sampled clips.

Clips are channels-first ``[3, frames, height, width]`` with values in
``[0, 1]``. With the default 32-frame 32 x 32 clips the shapes run

    32^3 -conv-> 32^3 -pool4-> 8^3 -conv-> 8^3 -pool3(ceil)-> 3^3

so the flattened map has 32 * 27 = 864 entries, followed by FC [864 -> 128]
(the extracted feature) and FC [128 -> 2].
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DimensionError, InputError
from .layers import Conv3dParams, DenseParams, conv3d_same, dense, max_pool3d, pool_extent, relu
from .tensor import Tensor, as_tensor, reshape
from .train import History, fit, stage_rng, utterance_evaluator, utterance_losses

CLIP_FRAMES = 32


def sample_frames(video, n: int = CLIP_FRAMES) -> np.ndarray:
    """Pick ``n`` equally spaced frames: output frame i is input frame floor(i*F/n).

    ``video`` is ``[channels, F, H, W]``; short videos repeat frames.
    """
    video = np.asarray(video, dtype=np.float64)
    if video.ndim != 4:
        raise DimensionError(f"video must be [C, F, H, W], got {video.shape}")
    F = video.shape[1]
    if F == 0:
        raise InputError("cannot sample frames from an empty video")
    idx = (np.arange(n) * F) // n
    return video[:, idx]


def flatten_size(filters: int, frames: int, size: int, pools=(4, 3)) -> int:
    dims = [frames, size, size]
    for w in pools:
        dims = [pool_extent(d, w) for d in dims]
    return filters * int(np.prod(dims))


@dataclass
class VisualEncoderParams:
    conv1: Conv3dParams
    conv2: Conv3dParams
    fc1: DenseParams
    fc2: DenseParams
    pools: tuple[int, int] = (4, 3)

    @classmethod
    def init(
        cls,
        rng: np.random.Generator,
        frames: int = CLIP_FRAMES,
        size: int = 32,
        filters: int = 32,
        kernel: int = 5,
        pools=(4, 3),
        hidden: int = 128,
        channels: int = 3,
    ) -> "VisualEncoderParams":
        flat = flatten_size(filters, frames, size, pools)
        return cls(
            Conv3dParams.init(rng, channels, filters, kernel),
            Conv3dParams.init(rng, filters, filters, kernel),
            DenseParams.init(rng, flat, hidden),
            DenseParams.init(rng, hidden, 2),
            tuple(pools),
        )

    @property
    def flatten_dim(self) -> int:
        return self.fc1.n_in


def visual_stages(clip, p: VisualEncoderParams) -> dict[str, Tensor]:
    """All intermediate activations, keyed by stage name (for shape checks)."""
    x = as_tensor(clip)
    if x.ndim not in (4, 5) or x.shape[-4] != p.conv1.kernels.shape[1]:
        raise DimensionError(
            f"clip must be [..., {p.conv1.kernels.shape[1]}, D, H, W], got {x.shape}"
        )
    out = {"input": x}
    out["conv1"] = h = relu(conv3d_same(x, p.conv1))
    out["pool1"] = h = max_pool3d(h, p.pools[0])
    out["conv2"] = h = relu(conv3d_same(h, p.conv2))
    out["pool2"] = h = max_pool3d(h, p.pools[1])
    lead = h.shape[:-4]
    flat = reshape(h, lead + (int(np.prod(h.shape[-4:])),))
    if flat.shape[-1] != p.flatten_dim:
        raise DimensionError(
            f"flattened activation has {flat.shape[-1]} entries, FC1 expects {p.flatten_dim}"
        )
    out["flatten"] = flat
    out["features"] = h = relu(dense(flat, p.fc1))
    out["prediction"] = dense(h, p.fc2)
    return out


def visual_forward(clip, p: VisualEncoderParams) -> tuple[Tensor, Tensor]:
    """Return the 128-d feature (before FC2) and the (arousal, valence) prediction."""
    stages = visual_stages(clip, p)
    return stages["features"], stages["prediction"]


def train_visual(train, config, val=None) -> tuple[VisualEncoderParams, History]:
    """Fit the 3-D CNN with MSE; ``train.inputs`` is ``[n, 3, F, S, S]``."""
    frames, size = train.inputs.shape[2], train.inputs.shape[3]
    params = VisualEncoderParams.init(
        stage_rng(config.seed, "visual"),
        frames=frames,
        size=size,
        filters=config.visual_filters,
        kernel=config.visual_kernel,
        pools=(config.visual_pool1, config.visual_pool2),
        hidden=config.visual_hidden,
        channels=train.inputs.shape[1],
    )

    def predictor(data):
        if data is None:
            return None
        return lambda rows: visual_forward(data.inputs[rows], params)[1]

    history = fit(
        params,
        train,
        utterance_losses(predictor(train), train, config.chunk_size),
        utterance_evaluator(predictor(val), val, config.chunk_size, config.metric_pooling),
        config,
        "visual",
    )
    return params, history
