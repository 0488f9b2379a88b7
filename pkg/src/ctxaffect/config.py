"""Run configuration: one flat ``key = value`` file covering data, model and training.

Blank lines and ``#`` comments are ignored. Unknown keys, malformed values
and out-of-range settings raise :class:`~ctxaffect.errors.ConfigError`.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from pathlib import Path

from .errors import ConfigError

STAGES = (
    "text",
    "visual",
    "audio",
    "context-text",
    "context-visual",
    "context-audio",
    "fusion",
)


@dataclass
class Config:
    seed: int = 0

    # synthetic data
    n_train_videos: int = 200
    n_val_videos: int = 50
    min_utterances: int = 3
    max_utterances: int = 8
    alpha: float = 0.5
    arousal_min: float = 0.0
    arousal_max: float = 1.0
    valence_min: float = -1.0
    valence_max: float = 1.0
    vocab_size: int = 300
    filler_words: int = 100
    embed_dim: int = 50
    audio_dim: int = 300
    audio_informative: int = 24
    clip_frames: int = 32
    clip_size: int = 32
    text_noise: float = 0.15
    visual_noise: float = 0.15
    audio_noise: float = 0.15

    # models
    text_window: int = 50
    freeze_embeddings: bool = True
    visual_filters: int = 32
    visual_kernel: int = 5
    visual_pool1: int = 4
    visual_pool2: int = 3
    visual_hidden: int = 128
    audio_k: int = 80
    audio_hidden: int = 64
    d_k: int = 64
    d_v: int = 64
    heads: int = 8
    blocks: int = 2
    d_ff: int = 0  # 0 means 4 * d_model
    ln_eps: float = 1e-5
    fusion: str = "concat"
    sketch_dim: int = 512

    # optimization
    optimizer: str = "adam"
    lr: float = 1e-3
    lr_context: float = 0.0  # 0 means lr
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    batch_size: int = 8
    chunk_size: int = 64
    epochs: int = 20
    epochs_text: int = 0
    epochs_visual: int = 0
    epochs_audio: int = 0
    epochs_context: int = 0
    epochs_fusion: int = 0
    ccc_weight: float = 0.25
    ccc_scope: str = "video"
    metric_pooling: str = "pooled"
    target_loss: float = 0.0  # stop once an epoch's training loss drops below; 0 disables

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        positive = [
            "n_train_videos", "min_utterances", "max_utterances", "vocab_size", "embed_dim",
            "audio_dim", "clip_frames", "clip_size", "text_window", "visual_filters",
            "visual_kernel", "visual_pool1", "visual_pool2", "visual_hidden", "audio_k",
            "audio_hidden", "d_k", "d_v", "heads", "blocks", "sketch_dim", "lr",
            "batch_size", "chunk_size", "epochs",
        ]
        for name in positive:
            if getattr(self, name) <= 0:
                raise ConfigError(f"{name} must be positive, got {getattr(self, name)}")
        nonneg = ["n_val_videos", "filler_words", "audio_informative", "d_ff", "lr_context",
                  "text_noise", "visual_noise", "audio_noise", "ccc_weight", "target_loss"]
        for name in nonneg + [f"epochs_{s}" for s in ("text", "visual", "audio", "context", "fusion")]:
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be non-negative, got {getattr(self, name)}")
        if self.min_utterances > self.max_utterances:
            raise ConfigError("min_utterances exceeds max_utterances")
        if not (0.0 <= self.alpha < 1.0):
            raise ConfigError(f"alpha must lie in [0, 1), got {self.alpha}")
        if self.arousal_min >= self.arousal_max or self.valence_min >= self.valence_max:
            raise ConfigError("label ranges must have min < max")
        if 2 * self.audio_informative > self.audio_dim:
            raise ConfigError("audio_informative columns do not fit in audio_dim")
        if self.visual_kernel % 2 == 0:
            raise ConfigError("visual_kernel must be odd for same padding")
        choices = {
            "fusion": ("concat", "mcb"),
            "optimizer": ("adam", "sgd"),
            "ccc_scope": ("video", "batch"),
            "metric_pooling": ("pooled", "per_video"),
        }
        for name, allowed in choices.items():
            if getattr(self, name) not in allowed:
                raise ConfigError(f"{name} must be one of {allowed}, got {getattr(self, name)!r}")

    def epochs_for(self, stage: str) -> int:
        key = {"text": "text", "visual": "visual", "audio": "audio", "fusion": "fusion"}.get(
            stage, "context"
        )
        return getattr(self, f"epochs_{key}") or self.epochs

    def lr_for(self, stage: str) -> float:
        if stage.startswith("context") or stage == "fusion":
            return self.lr_context or self.lr
        return self.lr

    def replace(self, **changes) -> "Config":
        return dataclasses.replace(self, **changes)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def dumps(self) -> str:
        return "".join(f"{k} = {_format(v)}\n" for k, v in self.to_dict().items())


def _format(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    return repr(value) if isinstance(value, float) else str(value)


def _coerce(name: str, kind, raw: str):
    try:
        if kind is bool:
            low = raw.lower()
            if low not in ("true", "false", "1", "0", "yes", "no"):
                raise ValueError(raw)
            return low in ("true", "1", "yes")
        if kind is int:
            return int(raw)
        if kind is float:
            return float(raw)
        return raw
    except ValueError as exc:
        raise ConfigError(f"bad value for {name}: {raw!r}") from exc


_TYPES = {f.name: {"int": int, "float": float, "bool": bool, "str": str}[f.type]
          for f in dataclasses.fields(Config)}


def from_mapping(values: dict, base: Config | None = None) -> Config:
    unknown = sorted(set(values) - set(_TYPES))
    if unknown:
        raise ConfigError(f"unknown config keys: {unknown}")
    coerced = {
        k: _coerce(k, _TYPES[k], v) if isinstance(v, str) else v for k, v in values.items()
    }
    return dataclasses.replace(base or Config(), **coerced)


def parse_config(text: str, base: Config | None = None) -> Config:
    values: dict[str, str] = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {line!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        if key in values:
            raise ConfigError(f"line {lineno}: duplicate key {key!r}")
        values[key] = value
    return from_mapping(values, base)


def load_config(path) -> Config:
    return parse_config(Path(path).read_text(encoding="utf-8"))
