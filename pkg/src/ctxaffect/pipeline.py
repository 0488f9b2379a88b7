"""Stage orchestration: dataset loading, checkpoints, feature extraction and evaluation.

A run directory holds everything produced from one dataset::

    checkpoints/<model>.npz        parameters, auxiliary arrays, JSON metadata
    features/<modality>.omgt       stage-1 features in manifest row order
    features/<modality>_ids.txt    "<video_id>:<utterance_index>" per feature row
    report.csv                     split,model,ccc_arousal,ccc_valence,mean_ccc

Stage-1 models (text, visual, audio) train on raw inputs. Contextual models
read the extracted features of one modality; the fused model reads all three.
Outputs of a later stage are never needed by an earlier one, so deleting
them leaves earlier checkpoints valid.
"""

from __future__ import annotations

import csv
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .audio import AudioFrontEnd, AudioParams, audio_forward, train_audio
from .config import STAGES, Config, from_mapping
from .context import ContextModel, EncoderConfig, predict_videos, train_context
from .errors import FormatError, PipelineError
from .fusion import SketchParams, concat_fusion, draw_mcb_params, mcb3
from .io import read_lines, read_manifest, read_tensor, validate_dataset, write_lines, write_tensor
from .layers import load_parameters, parameter_dict
from .losses import format_report_line, mean_ccc
from .tensor import Tensor, no_grad
from .text import EmbeddingTable, TextEncoderParams, TextModel, read_transcripts, tokens_to_indices, train_text
from .train import StageData, predict_rows
from .visual import VisualEncoderParams, sample_frames, train_visual, visual_forward

log = logging.getLogger(__name__)

CHECKPOINT_VERSION = 1
MODALITIES = ("text", "visual", "audio")
REPORT_HEADER = "split,model,ccc_arousal,ccc_valence,mean_ccc"


# ---------------------------------------------------------------------------
# dataset


@dataclass
class Dataset:
    """A validated dataset directory with every modality loaded in manifest order."""

    root: Path
    utterances: list
    splits: dict[str, str]
    table: EmbeddingTable
    audio: np.ndarray
    clips: np.ndarray
    targets: np.ndarray = field(init=False)

    def __post_init__(self):
        self.targets = np.array([[u.arousal, u.valence] for u in self.utterances])

    @property
    def n(self) -> int:
        return len(self.utterances)

    def row_ids(self) -> list[str]:
        return [f"{u.video_id}:{u.utterance_index}" for u in self.utterances]

    def split_rows(self, split: str) -> tuple[np.ndarray, list[np.ndarray], list[str]]:
        """Global row order, per-video local row lists, and video ids for a split."""
        order: dict[str, list[tuple[int, int]]] = {}
        for row, u in enumerate(self.utterances):
            if self.splits[u.video_id] == split:
                order.setdefault(u.video_id, []).append((u.utterance_index, row))
        if not order:
            raise PipelineError(f"split {split!r} has no videos")
        rows, videos, start = [], [], 0
        for vid, items in order.items():
            items.sort()
            rows.extend(r for _, r in items)
            videos.append(np.arange(start, start + len(items)))
            start += len(items)
        return np.array(rows), videos, list(order)

    def has_split(self, split: str) -> bool:
        return split in self.splits.values()

    def stage_data(self, split: str, inputs) -> tuple[StageData, np.ndarray]:
        """Split-local StageData over ``inputs`` (indexed by manifest row) plus its row map."""
        rows, videos, ids = self.split_rows(split)
        return StageData(inputs[rows], self.targets[rows], videos, ids), rows

    def text_indices(self, window: int) -> np.ndarray:
        return tokens_to_indices([u.tokens for u in self.utterances], self.table, window)

    def audio_rows(self) -> np.ndarray:
        return self.audio[[u.audio_row for u in self.utterances]]


def load_dataset(root, config: Config) -> Dataset:
    """Read and cross-check every file of a dataset directory."""
    root = Path(root)
    manifest = root / "manifest.csv"
    if not manifest.is_file():
        raise PipelineError(f"missing dataset manifest {manifest}")
    utterances = read_manifest(manifest)
    audio = read_tensor(root / "audio_features.omgt")
    label_range = ((config.arousal_min, config.arousal_max), (config.valence_min, config.valence_max))
    validate_dataset(root, utterances, audio.shape[0], label_range)

    splits = {}
    for line in read_lines(root / "splits.csv")[1:]:
        vid, split = line.split(",")
        splits[vid] = split
    missing = sorted({u.video_id for u in utterances} - set(splits))
    if missing:
        raise PipelineError(f"videos without a split entry: {missing}")

    problems = []
    cache: dict[str, list[list[str]]] = {}
    for u in utterances:
        if u.transcript_path not in cache:
            cache[u.transcript_path] = read_transcripts(root / u.transcript_path)
        lines = cache[u.transcript_path]
        if u.utterance_index >= len(lines):
            problems.append(f"{u.key}: transcript {u.transcript_path} has {len(lines)} lines")
            continue
        u.tokens = lines[u.utterance_index]
    if problems:
        raise PipelineError("transcript check failed:\n  " + "\n  ".join(problems))

    clips = []
    for u in utterances:
        clip = read_tensor(root / u.clip_path)
        if clip.ndim != 4:
            raise PipelineError(f"{u.key}: clip must be [C, F, H, W], got {clip.shape}")
        if clip.shape[1] != config.clip_frames:
            clip = sample_frames(clip, config.clip_frames)
        clips.append(clip.astype(np.float32))
    shapes = {c.shape for c in clips}
    if len(shapes) != 1:
        raise PipelineError(f"clips disagree in shape: {sorted(shapes)}")

    table = EmbeddingTable.load(root / "embeddings.txt")
    return Dataset(root, utterances, splits, table, audio, np.stack(clips))


# ---------------------------------------------------------------------------
# checkpoints


@dataclass
class Checkpoint:
    model: str
    stage: str
    config: Config
    params: dict[str, np.ndarray]
    aux: dict[str, np.ndarray] = field(default_factory=dict)
    meta: dict = field(default_factory=dict)


def model_name(stage: str, config: Config) -> str:
    return f"fusion-{config.fusion}" if stage == "fusion" else stage


def checkpoint_path(out_dir, model: str) -> Path:
    return Path(out_dir) / "checkpoints" / f"{model}.npz"


def save_checkpoint(ck: Checkpoint, path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    header = {
        "version": CHECKPOINT_VERSION,
        "model": ck.model,
        "stage": ck.stage,
        "config": ck.config.to_dict(),
        "meta": ck.meta,
    }
    arrays = {f"param/{k}": v for k, v in ck.params.items()}
    arrays.update({f"aux/{k}": v for k, v in ck.aux.items()})
    arrays["header"] = np.frombuffer(json.dumps(header, sort_keys=True).encode("utf-8"), dtype=np.uint8)
    with open(path, "wb") as fh:
        np.savez(fh, **arrays)


def load_checkpoint(path) -> Checkpoint:
    path = Path(path)
    if not path.is_file():
        raise PipelineError(f"missing checkpoint {path}")
    with np.load(path, allow_pickle=False) as z:
        if "header" not in z.files:
            raise FormatError(f"{path}: not a checkpoint (no header)", 0)
        header = json.loads(z["header"].tobytes().decode("utf-8"))
        if header.get("version") != CHECKPOINT_VERSION:
            raise FormatError(f"{path}: unsupported checkpoint version {header.get('version')}", 0)
        params = {k[6:]: z[k] for k in z.files if k.startswith("param/")}
        aux = {k[4:]: z[k] for k in z.files if k.startswith("aux/")}
    config = from_mapping(header["config"])
    return Checkpoint(header["model"], header["stage"], config, params, aux, header["meta"])


def _arrays(obj) -> dict[str, np.ndarray]:
    return {k: v.data.copy() for k, v in parameter_dict(obj).items()}


def _check_stats(mean, std, width: int, what: str):
    if mean.shape != (width,):
        raise PipelineError(f"{what}: feature width {width} does not match checkpoint width {mean.shape[0]}")


# model reconstruction ------------------------------------------------------


def build_text(ck: Checkpoint) -> TextModel:
    emb = ck.params["embedding"]
    encoder = TextEncoderParams.init(np.random.default_rng(0), emb.shape[1], window=ck.config.text_window)
    model = TextModel(encoder, Tensor(np.zeros_like(emb), requires_grad=False))
    load_parameters(model, ck.params)
    return model


def build_visual(ck: Checkpoint) -> VisualEncoderParams:
    c, m = ck.config, ck.meta
    params = VisualEncoderParams.init(
        np.random.default_rng(0), frames=m["frames"], size=m["size"], filters=c.visual_filters,
        kernel=c.visual_kernel, pools=(c.visual_pool1, c.visual_pool2), hidden=c.visual_hidden,
        channels=m["channels"],
    )
    load_parameters(params, ck.params)
    return params


def build_audio(ck: Checkpoint) -> tuple[AudioFrontEnd, AudioParams]:
    front = AudioFrontEnd(ck.aux["indices"].astype(np.int64), ck.aux["mean"], ck.aux["std"])
    params = AudioParams.init(np.random.default_rng(0), front.width, ck.config.audio_hidden)
    load_parameters(params, ck.params)
    return front, params


def build_context(ck: Checkpoint) -> ContextModel:
    model = ContextModel.init(np.random.default_rng(0), EncoderConfig(**ck.meta["encoder"]))
    load_parameters(model, ck.params)
    return model


def _sketches(ck: Checkpoint) -> tuple[SketchParams, ...]:
    d = int(ck.meta["sketch_dim"])
    seeds = ck.meta["sketch_seeds"]
    return tuple(
        SketchParams(ck.aux[f"sketch_hash_{m}"], ck.aux[f"sketch_sign_{m}"], d, seeds[i])
        for i, m in enumerate(MODALITIES)
    )


# ---------------------------------------------------------------------------
# features


def feature_path(out_dir, modality: str) -> Path:
    return Path(out_dir) / "features" / f"{modality}.omgt"


def _ids_path(out_dir, modality: str) -> Path:
    return Path(out_dir) / "features" / f"{modality}_ids.txt"


def stage1_features(ck: Checkpoint, data: Dataset, chunk: int = 64) -> np.ndarray:
    """``[n, width]`` pre-output-layer features for every manifest row."""
    rows = np.arange(data.n)
    if ck.stage == "text":
        model = build_text(ck)
        idx = data.text_indices(ck.config.text_window)
        return predict_rows(lambda r: model.forward(idx[r])[0], rows, chunk)
    if ck.stage == "visual":
        params = build_visual(ck)
        return predict_rows(lambda r: visual_forward(data.clips[r], params)[0], rows, chunk)
    if ck.stage == "audio":
        front, params = build_audio(ck)
        if data.audio.shape[1] <= int(front.indices.max()):
            raise PipelineError("audio checkpoint selects columns beyond the dataset feature width")
        return front.transform(data.audio_rows())
    raise PipelineError(f"{ck.model} is not a stage-1 model")


def extract_features(out_dir, data: Dataset, modality: str) -> Path:
    """Write the stage-1 features of ``modality`` aligned to the manifest rows."""
    ck = load_checkpoint(checkpoint_path(out_dir, modality))
    feats = stage1_features(ck, data, ck.config.chunk_size)
    path = feature_path(out_dir, modality)
    path.parent.mkdir(parents=True, exist_ok=True)
    write_tensor(feats, path)
    write_lines(data.row_ids(), _ids_path(out_dir, modality))
    log.info("extracted %s features %s -> %s", modality, feats.shape, path)
    return path


def load_features(out_dir, data: Dataset, modality: str) -> np.ndarray:
    path = feature_path(out_dir, modality)
    if not path.is_file():
        raise PipelineError(
            f"missing artifact {path}; train the {modality} stage and run extract-features first"
        )
    feats = read_tensor(path)
    ids_path = _ids_path(out_dir, modality)
    ids = read_lines(ids_path) if ids_path.is_file() else None
    if ids != data.row_ids() or feats.ndim != 2 or feats.shape[0] != data.n:
        raise PipelineError(f"{path}: feature rows do not match the dataset manifest ids")
    return feats


def block_scale(X) -> tuple[np.ndarray, np.ndarray]:
    """Per-column means and one shared scale: the RMS of the centered block.

    A shared scale keeps near-dead ReLU features small instead of blowing
    them up to unit variance the way per-column standardization would.
    """
    X = np.asarray(X, dtype=np.float64)
    mean = X.mean(axis=0)
    rms = float(np.sqrt(np.mean((X - mean) ** 2)))
    return mean, np.full(X.shape[1], rms if rms > 0 else 1.0)


def _standardized(out_dir, data: Dataset, modality: str, stats=None):
    """Features centered and scaled by training-split statistics (or the given ``(mean, std)``)."""
    feats = load_features(out_dir, data, modality)
    if stats is None:
        rows, _, _ = data.split_rows("train")
        mean, std = block_scale(feats[rows])
    else:
        mean, std = stats
        _check_stats(mean, std, feats.shape[1], modality)
    return (feats - mean) / std, mean, std


def fused_inputs(parts: list[np.ndarray], variant: str, sketches=None) -> np.ndarray:
    """Fuse per-row modality features with the frozen fusion map."""
    with no_grad():
        if variant == "concat":
            return concat_fusion(*parts).data
        return mcb3(*parts, sketches).data


# ---------------------------------------------------------------------------
# training


def _optional(data: Dataset, split: str, inputs) -> StageData | None:
    return data.stage_data(split, inputs)[0] if data.has_split(split) else None


def train_stage(stage: str, config: Config, data: Dataset, out_dir) -> Checkpoint:
    """Train one stage on the train split and write its checkpoint.

    Epochs are scored on the val split when it exists, otherwise by training loss.
    """
    if stage not in STAGES:
        raise PipelineError(f"unknown stage {stage!r}; expected one of {STAGES}")
    name = model_name(stage, config)
    log.info("training %s", name)
    meta: dict = {}
    aux: dict[str, np.ndarray] = {}
    if stage == "text":
        idx = data.text_indices(config.text_window)
        train, _ = data.stage_data("train", idx)
        val = _optional(data, "val", idx)
        model, history = train_text(train, config, val, data.table)
        params = _arrays(model)
    elif stage == "visual":
        train, _ = data.stage_data("train", data.clips)
        val = _optional(data, "val", data.clips)
        model, history = train_visual(train, config, val)
        params = _arrays(model)
        meta.update(channels=int(data.clips.shape[1]), frames=int(data.clips.shape[2]),
                    size=int(data.clips.shape[3]))
    elif stage == "audio":
        raw = data.audio_rows()
        train, _ = data.stage_data("train", raw)
        val = _optional(data, "val", raw)
        front, model, history = train_audio(train, config, val)
        params = _arrays(model)
        aux.update(indices=front.indices, mean=front.mean, std=front.std)
    else:
        features, aux, meta = prepare_context_inputs(stage, config, data, out_dir)
        train, _ = data.stage_data("train", features)
        val = _optional(data, "val", features)
        model, history = train_context(train, config, stage, val)
        params = _arrays(model)
        meta["encoder"] = vars(model.cfg).copy()
    meta["history"] = history.epochs
    meta["best_epoch"] = history.best_epoch
    ck = Checkpoint(name, stage, config, params, aux, meta)
    save_checkpoint(ck, checkpoint_path(out_dir, name))
    return ck


def prepare_context_inputs(stage: str, config: Config, data: Dataset, out_dir, ck: Checkpoint | None = None):
    """Model inputs for a contextual or fused stage plus the aux/meta needed to rebuild them.

    With ``ck`` given, the statistics and sketches stored in it are reused.
    """
    aux: dict[str, np.ndarray] = {}
    meta: dict = {}
    if stage.startswith("context-"):
        modality = stage.split("-", 1)[1]
        stats = None if ck is None else (ck.aux["mean"], ck.aux["std"])
        feats, mean, std = _standardized(out_dir, data, modality, stats)
        aux.update(mean=mean, std=std)
        meta["modality"] = modality
        return feats, aux, meta

    variant = config.fusion if ck is None else ck.meta["fusion"]
    parts = []
    for m in MODALITIES:
        if variant == "mcb":
            # sketched as-is: centering would strip the first-order terms of the triple product
            parts.append(load_features(out_dir, data, m))
            continue
        stats = None if ck is None else (ck.aux[f"mean_{m}"], ck.aux[f"std_{m}"])
        feats, mean, std = _standardized(out_dir, data, m, stats)
        parts.append(feats)
        aux[f"mean_{m}"], aux[f"std_{m}"] = mean, std
    widths = [p.shape[1] for p in parts]
    meta.update(fusion=variant, widths=widths)
    sketches = None
    if variant == "mcb":
        if ck is None:
            sketches = draw_mcb_params(tuple(widths), config.sketch_dim, config.seed)
        else:
            sketches = _sketches(ck)
            if tuple(s.D for s in sketches) != tuple(widths):
                raise PipelineError(
                    f"fusion checkpoint expects widths {[s.D for s in sketches]}, features have {widths}"
                )
        for m, s in zip(MODALITIES, sketches):
            aux[f"sketch_hash_{m}"], aux[f"sketch_sign_{m}"] = s.hash, s.sign
        meta.update(sketch_dim=int(sketches[0].d), sketch_seeds=[int(s.seed) for s in sketches])
    return fused_inputs(parts, variant, sketches), aux, meta


# ---------------------------------------------------------------------------
# evaluation


def predict_split(ck: Checkpoint, data: Dataset, split: str, out_dir) -> tuple[np.ndarray, np.ndarray]:
    """Predictions and gold labels for every utterance of ``split`` (grouped by video)."""
    chunk = ck.config.chunk_size
    if ck.stage in MODALITIES:
        rows, _, _ = data.split_rows(split)
        if ck.stage == "text":
            model = build_text(ck)
            idx = data.text_indices(ck.config.text_window)
            preds = predict_rows(lambda r: model.forward(idx[rows[r]])[1], np.arange(len(rows)), chunk)
        elif ck.stage == "visual":
            params = build_visual(ck)
            if data.clips.shape[1:] != (ck.meta["channels"], ck.meta["frames"], ck.meta["size"], ck.meta["size"]):
                raise PipelineError(f"clip shape {data.clips.shape[1:]} does not match the visual checkpoint")
            preds = predict_rows(lambda r: visual_forward(data.clips[rows[r]], params)[1],
                                 np.arange(len(rows)), chunk)
        else:
            front, params = build_audio(ck)
            x = front.transform(data.audio_rows()[rows])
            with no_grad():
                preds = audio_forward(x, params)[1].data
        return preds, data.targets[rows]

    features, _, _ = prepare_context_inputs(ck.stage, ck.config, data, out_dir, ck)
    model = build_context(ck)
    if features.shape[1] != model.cfg.d_model:
        raise PipelineError(
            f"{ck.model}: input width {features.shape[1]} != model width {model.cfg.d_model}"
        )
    split_data, _ = data.stage_data(split, features)
    preds = predict_videos(model, split_data.inputs, split_data.videos, ck.config.batch_size)
    return preds, split_data.targets


def evaluate(out_dir, data: Dataset, model: str, split: str = "val") -> str:
    """Score a trained model on a split and return its report line."""
    ck = load_checkpoint(checkpoint_path(out_dir, model))
    preds, gold = predict_split(ck, data, split, out_dir)
    rows, videos, ids = data.split_rows(split)
    vid_of_row = np.empty(len(rows), dtype=object)
    for vid, local in zip(ids, videos):
        vid_of_row[local] = vid
    scores = mean_ccc(preds, gold, vid_of_row, ck.config.metric_pooling)
    return format_report_line(split, model, scores)


def write_report(lines: list[str], path) -> None:
    write_lines([REPORT_HEADER] + list(lines), path)


def read_report(path) -> dict[tuple[str, str], tuple[float, float, float]]:
    out = {}
    with open(path, newline="", encoding="utf-8") as fh:
        for row in csv.DictReader(fh):
            out[(row["split"], row["model"])] = (
                float(row["ccc_arousal"]), float(row["ccc_valence"]), float(row["mean_ccc"])
            )
    return out


def run_pipeline(config: Config, data_dir, out_dir, fusions=("concat", "mcb")) -> Path:
    """Generate data if absent, train every stage, and write ``report.csv`` for the val split."""
    from .synthetic import generate_synthetic

    data_dir, out_dir = Path(data_dir), Path(out_dir)
    if not (data_dir / "manifest.csv").is_file():
        generate_synthetic(config, data_dir)
    data = load_dataset(data_dir, config)
    models = []
    for modality in MODALITIES:
        train_stage(modality, config, data, out_dir)
        extract_features(out_dir, data, modality)
        models.append(modality)
    for modality in MODALITIES:
        train_stage(f"context-{modality}", config, data, out_dir)
        models.append(f"context-{modality}")
    for variant in fusions:
        cfg = config.replace(fusion=variant)
        train_stage("fusion", cfg, data, out_dir)
        models.append(model_name("fusion", cfg))
    lines = [evaluate(out_dir, data, m, "val") for m in models]
    report = out_dir / "report.csv"
    write_report(lines, report)
    for line in lines:
        log.info("%s", line)
    return report
