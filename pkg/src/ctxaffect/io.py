"""On-disk formats: binary tensors, the utterance manifest, split lists.

Binary tensor layout (all little-endian)::

    offset 0   4 bytes   magic b"OMGT"
    offset 4   1 byte    format version (1)
    offset 5   uint32    rank r
    offset 9   r uint32  extents
    then       float32   payload, row-major, prod(extents) values

Zero-dimensional arrays are written as shape ``[1]``. Readers widen the
payload to float64.
"""

from __future__ import annotations

import csv
import hashlib
import io
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import FormatError, PipelineError

MAGIC = b"OMGT"
VERSION = 1
MANIFEST_HEADER = [
    "video_id",
    "utterance_index",
    "arousal",
    "valence",
    "transcript_path",
    "clip_path",
    "audio_row",
]


def encode_tensor(array) -> bytes:
    a = np.asarray(array, dtype=np.float64)
    if a.ndim == 0:
        a = a.reshape(1)
    header = MAGIC + bytes([VERSION]) + struct.pack("<I", a.ndim)
    header += struct.pack(f"<{a.ndim}I", *a.shape)
    return header + np.ascontiguousarray(a, dtype="<f4").tobytes()


def decode_tensor(buf: bytes) -> np.ndarray:
    if len(buf) < 4:
        raise FormatError("truncated header: missing magic", offset=len(buf))
    if buf[:4] != MAGIC:
        raise FormatError(f"bad magic {buf[:4]!r}, expected {MAGIC!r}", offset=0)
    if len(buf) < 5:
        raise FormatError("truncated header: missing version", offset=4)
    if buf[4] != VERSION:
        raise FormatError(f"unsupported format version {buf[4]}", offset=4)
    if len(buf) < 9:
        raise FormatError("truncated header: missing rank", offset=5)
    (rank,) = struct.unpack_from("<I", buf, 5)
    end = 9 + 4 * rank
    if len(buf) < end:
        raise FormatError(f"truncated header: rank {rank} needs {end} bytes", offset=len(buf))
    shape = struct.unpack_from(f"<{rank}I", buf, 9)
    count = int(np.prod(shape, dtype=np.int64))
    need = end + 4 * count
    if len(buf) != need:
        what = "truncated payload" if len(buf) < need else "trailing bytes after payload"
        raise FormatError(f"{what}: expected {need} bytes, got {len(buf)}", offset=min(len(buf), need))
    data = np.frombuffer(buf, dtype="<f4", count=count, offset=end)
    return data.astype(np.float64).reshape(shape)


def write_tensor(array, path) -> None:
    Path(path).write_bytes(encode_tensor(array))


def read_tensor(path) -> np.ndarray:
    try:
        return decode_tensor(Path(path).read_bytes())
    except FormatError as exc:
        err = FormatError(f"{path}: {exc}")
        err.offset = exc.offset
        raise err from exc


def file_digest(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


# ---------------------------------------------------------------------------
# manifest


@dataclass
class Utterance:
    video_id: str
    utterance_index: int
    arousal: float
    valence: float
    transcript_path: str
    clip_path: str
    audio_row: int
    tokens: list[str] = field(default_factory=list)

    @property
    def key(self) -> tuple[str, int]:
        return self.video_id, self.utterance_index


@dataclass
class VideoSequence:
    video_id: str
    utterances: list[Utterance]

    def __len__(self) -> int:
        return len(self.utterances)


def write_manifest(utterances: list[Utterance], path) -> None:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(MANIFEST_HEADER)
    for u in utterances:
        writer.writerow(
            [
                u.video_id,
                u.utterance_index,
                repr(float(u.arousal)),
                repr(float(u.valence)),
                u.transcript_path,
                u.clip_path,
                u.audio_row,
            ]
        )
    Path(path).write_bytes(buf.getvalue().encode("utf-8"))


def read_manifest(path) -> list[Utterance]:
    text = Path(path).read_text(encoding="utf-8")
    rows = list(csv.reader(io.StringIO(text)))
    if not rows or rows[0] != MANIFEST_HEADER:
        raise FormatError(f"{path}: manifest header must be {','.join(MANIFEST_HEADER)}")
    out, problems = [], []
    for lineno, row in enumerate(rows[1:], start=2):
        if not row:
            continue
        if len(row) != len(MANIFEST_HEADER):
            problems.append(f"line {lineno}: expected {len(MANIFEST_HEADER)} fields, got {len(row)}")
            continue
        try:
            out.append(
                Utterance(row[0], int(row[1]), float(row[2]), float(row[3]), row[4], row[5], int(row[6]))
            )
        except ValueError as exc:
            problems.append(f"line {lineno}: {exc}")
    if problems:
        raise FormatError(f"{path}: " + "; ".join(problems))
    return out


def group_videos(utterances: list[Utterance]) -> list[VideoSequence]:
    """Group by video in first-appearance order, sorting each video by index."""
    groups: dict[str, list[Utterance]] = {}
    for u in utterances:
        groups.setdefault(u.video_id, []).append(u)
    return [
        VideoSequence(vid, sorted(us, key=lambda u: u.utterance_index)) for vid, us in groups.items()
    ]


def validate_dataset(root, utterances: list[Utterance], n_audio_rows: int | None = None,
                     label_range=None) -> None:
    """Check referential integrity and ordering; raise one error listing every problem."""
    root = Path(root)
    problems: list[str] = []
    seen: set[tuple[str, int]] = set()
    for u in utterances:
        if u.key in seen:
            problems.append(f"duplicate utterance {u.key}")
        seen.add(u.key)
        if not (np.isfinite(u.arousal) and np.isfinite(u.valence)):
            problems.append(f"{u.key}: non-finite gold label")
        elif label_range is not None:
            (a0, a1), (v0, v1) = label_range
            if not (a0 <= u.arousal <= a1 and v0 <= u.valence <= v1):
                problems.append(f"{u.key}: gold label outside configured range")
        if u.clip_path and not (root / u.clip_path).is_file():
            problems.append(f"{u.key}: missing clip {u.clip_path}")
        if u.transcript_path and not (root / u.transcript_path).is_file():
            problems.append(f"{u.key}: missing transcript {u.transcript_path}")
        if n_audio_rows is not None and not (0 <= u.audio_row < n_audio_rows):
            problems.append(f"{u.key}: audio row {u.audio_row} outside [0, {n_audio_rows})")
    for video in group_videos(utterances):
        indices = [u.utterance_index for u in video.utterances]
        if indices != list(range(len(indices))):
            problems.append(f"video {video.video_id}: utterance indices not contiguous from 0")
    if problems:
        raise PipelineError("dataset integrity check failed:\n  " + "\n  ".join(problems))


def write_lines(lines, path) -> None:
    Path(path).write_bytes("".join(f"{line}\n" for line in lines).encode("utf-8"))


def read_lines(path) -> list[str]:
    text = Path(path).read_text(encoding="utf-8")
    return [line for line in text.split("\n") if line]
