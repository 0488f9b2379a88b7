"""Synthetic stand-in for a per-utterance arousal/valence corpus with context dependence.

Every utterance t has a latent base b_t drawn uniformly from the label range
(separately for arousal and valence). Its gold label mixes in the neighbours:

    label_t = clip((1 - alpha) * b_t + alpha * mean(b_{t-1}, b_{t+1}))

with missing neighbours at the video boundaries left out of the mean. The
transcript, clip and acoustic row of an utterance are noisy encodings of b_t
alone, so a single utterance under-determines its label while the rest of
the video helps.

On-disk layout under the output directory::

    manifest.csv            one row per utterance
    splits.csv              video_id,split (train | val)
    embeddings.txt          word vectors, "V k" header
    transcripts/<vid>.txt   one utterance per line
    clips/<vid>_<t>.omgt    [3, frames, size, size] tensors
    audio_features.omgt     [n, audio_dim] raw acoustic rows
    audio_ids.txt           "<vid>:<t>" per audio row
    config.txt              generating configuration
"""

from __future__ import annotations

import logging
from pathlib import Path

import numpy as np

from .config import Config
from .io import Utterance, write_lines, write_manifest, write_tensor
from .text import EmbeddingTable

log = logging.getLogger(__name__)

DATA_SALT = 7
AFFECT_DIMS = 4


def context_labels(bases, alpha: float, lo: float, hi: float) -> np.ndarray:
    """Blend each base with the mean of its existing neighbours, then clip."""
    b = np.asarray(bases, dtype=np.float64)
    T = len(b)
    out = np.empty(T)
    for t in range(T):
        nb = [b[s] for s in (t - 1, t + 1) if 0 <= s < T]
        ctx = np.mean(nb) if nb else b[t]
        out[t] = (1.0 - alpha) * b[t] + alpha * ctx
    return np.clip(out, lo, hi)


def _vocabulary(cfg: Config, rng: np.random.Generator):
    affect = rng.uniform(0.0, 1.0, size=(cfg.vocab_size, 2))
    n_words = cfg.vocab_size + cfg.filler_words
    vectors = rng.normal(0.0, 0.3, size=(n_words, cfg.embed_dim))
    k = min(AFFECT_DIMS, cfg.embed_dim)
    signal = np.column_stack([affect[:, 0], 1 - affect[:, 0], affect[:, 1], 1 - affect[:, 1]])
    vectors[: cfg.vocab_size, :k] = 2.0 * signal[:, :k]
    vectors[cfg.vocab_size :, :k] = 0.0
    words = [f"w{i:04d}" for i in range(cfg.vocab_size)]
    words += [f"f{i:04d}" for i in range(cfg.filler_words)]
    table = EmbeddingTable({w: i for i, w in enumerate(words)}, vectors)
    return table, words, affect


def _sentence(u, cfg, rng, words, affect) -> str:
    obs = u + rng.normal(0.0, cfg.text_noise, size=2)
    n_affect = int(rng.integers(3, 7))
    tokens = []
    for _ in range(n_affect):
        target = obs + rng.normal(0.0, 0.05, size=2)
        tokens.append(words[int(np.argmin(((affect - target) ** 2).sum(axis=1)))])
    if cfg.filler_words:
        n_fill = int(rng.integers(3, 11))
        fillers = rng.integers(cfg.vocab_size, cfg.vocab_size + cfg.filler_words, size=n_fill)
        tokens += [words[int(i)] for i in fillers]
    order = rng.permutation(len(tokens))
    return " ".join(tokens[i] for i in order)


def _clip(u, cfg, rng) -> np.ndarray:
    F, S = cfg.clip_frames, cfg.clip_size
    obs = np.clip(u + rng.normal(0.0, cfg.visual_noise, size=2), 0.0, 1.0)
    clip = np.empty((3, F, S, S))
    clip[0] = 0.15 + 0.7 * obs[0]
    clip[1] = 0.15 + 0.7 * obs[1]
    clip[2] = 0.25
    clip += rng.normal(0.0, 0.05, size=clip.shape)
    # an uninformative square drifting across the frames
    side = max(1, S // 4)
    start = rng.integers(0, S - side + 1, size=2)
    step = rng.choice([-1, 1], size=2)
    for f in range(F):
        r, c = (start + step * f) % (S - side + 1)
        clip[2, f, r : r + side, c : c + side] = 0.9
    return np.clip(clip, 0.0, 1.0)


def _audio_layout(cfg: Config, rng: np.random.Generator):
    cols = rng.permutation(cfg.audio_dim)
    k = cfg.audio_informative
    informative = [cols[:k], cols[k : 2 * k]]
    scale = np.exp(rng.normal(0.0, 1.5, size=cfg.audio_dim))
    offset = rng.normal(0.0, 5.0, size=cfg.audio_dim) * scale
    return informative, scale, offset


def _audio_row(u, cfg, rng, layout) -> np.ndarray:
    informative, scale, offset = layout
    row = rng.normal(0.0, 1.0, size=cfg.audio_dim)
    obs = u + rng.normal(0.0, cfg.audio_noise, size=2)
    for target, cols in enumerate(informative):
        row[cols] = 3.0 * (obs[target] - 0.5) + rng.normal(0.0, 0.3, size=len(cols))
    return row * scale + offset


def generate_synthetic(cfg: Config, out_dir, seed: int | None = None) -> Path:
    """Write a complete dataset; identical config and seed give identical bytes."""
    seed = cfg.seed if seed is None else seed
    out = Path(out_dir)
    (out / "transcripts").mkdir(parents=True, exist_ok=True)
    (out / "clips").mkdir(exist_ok=True)
    rng = np.random.default_rng([int(seed), DATA_SALT])

    table, words, affect = _vocabulary(cfg, rng)
    layout = _audio_layout(cfg, rng)
    ranges = np.array([[cfg.arousal_min, cfg.arousal_max], [cfg.valence_min, cfg.valence_max]])
    n_videos = cfg.n_train_videos + cfg.n_val_videos

    utterances: list[Utterance] = []
    audio_rows, audio_ids, splits = [], [], []
    for v in range(n_videos):
        vid = f"v{v:04d}"
        T = int(rng.integers(cfg.min_utterances, cfg.max_utterances + 1))
        bases = rng.uniform(ranges[:, 0], ranges[:, 1], size=(T, 2))
        labels = np.column_stack(
            [context_labels(bases[:, j], cfg.alpha, *ranges[j]) for j in range(2)]
        )
        units = (bases - ranges[:, 0]) / (ranges[:, 1] - ranges[:, 0])
        sentences = []
        for t in range(T):
            sentences.append(_sentence(units[t], cfg, rng, words, affect))
            clip_rel = f"clips/{vid}_{t:02d}.omgt"
            write_tensor(_clip(units[t], cfg, rng), out / clip_rel)
            audio_rows.append(_audio_row(units[t], cfg, rng, layout))
            audio_ids.append(f"{vid}:{t}")
            utterances.append(
                Utterance(vid, t, float(labels[t, 0]), float(labels[t, 1]),
                          f"transcripts/{vid}.txt", clip_rel, len(audio_rows) - 1)
            )
        write_lines(sentences, out / "transcripts" / f"{vid}.txt")
        splits.append(f"{vid},{'train' if v < cfg.n_train_videos else 'val'}")

    write_manifest(utterances, out / "manifest.csv")
    write_lines(["video_id,split"] + splits, out / "splits.csv")
    table.save(out / "embeddings.txt")
    write_tensor(np.array(audio_rows), out / "audio_features.omgt")
    write_lines(audio_ids, out / "audio_ids.txt")
    (out / "config.txt").write_bytes(cfg.replace(seed=int(seed)).dumps().encode("utf-8"))
    log.info("wrote %d videos / %d utterances to %s", n_videos, len(utterances), out)
    return out
