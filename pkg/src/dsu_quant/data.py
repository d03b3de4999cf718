"""Domain types and file formats: feature sequences, alignments, manifests.

Binary feature files use the DSUF container (see ``save_feature_file``);
alignments are TSV, manifests are JSON arrays with paths relative to the
manifest's directory.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import (
    AlignmentError,
    BadMagicError,
    DegenerateSegmentError,
    InvalidDataError,
    ManifestError,
    NonFiniteDataError,
    TruncatedFileError,
    UnknownSplitError,
)

DSUF_MAGIC = b"DSUF"
DSUF_VERSION = 1
NULL_TONE = "T0"
SPLITS = ("train", "validation", "test")

ALIGNMENT_COLUMNS = ("utterance_id", "start_frame", "end_frame", "phone", "tone", "is_vowel")


@dataclass(frozen=True)
class FeatureSequence:
    """One utterance worth of continuous frame vectors (T x D, float32).

    ``frame_rate_hz`` is informational and not persisted in DSUF files.
    """

    utterance_id: str
    frames: np.ndarray
    frame_rate_hz: float = 50.0

    def __post_init__(self):
        frames = np.asarray(self.frames, dtype=np.float32)
        if frames.ndim != 2 or frames.shape[0] < 1 or frames.shape[1] < 1:
            raise InvalidDataError(
                f"frames must be a T x D matrix with T, D >= 1, got shape {frames.shape}"
            )
        if not np.isfinite(frames).all():
            raise NonFiniteDataError(f"non-finite frame values in {self.utterance_id!r}")
        if self.frame_rate_hz <= 0:
            raise InvalidDataError("frame_rate_hz must be positive")
        frames = np.ascontiguousarray(frames)
        frames.flags.writeable = False
        object.__setattr__(self, "frames", frames)

    @property
    def num_frames(self) -> int:
        return self.frames.shape[0]

    @property
    def dim(self) -> int:
        return self.frames.shape[1]


@dataclass(frozen=True, order=True)
class PhoneSegment:
    """A labelled frame span; frame indices are [start_frame, end_frame)."""

    utterance_id: str
    start_frame: int
    end_frame: int
    phone_label: str
    tone_label: str
    is_vowel: bool

    def __post_init__(self):
        if self.start_frame < 0 or self.end_frame <= self.start_frame:
            raise InvalidDataError(
                f"bad span [{self.start_frame}, {self.end_frame}) in {self.utterance_id!r}"
            )

    @property
    def length(self) -> int:
        return self.end_frame - self.start_frame


@dataclass(frozen=True)
class ManifestEntry:
    utterance_id: str
    feature_path: Path
    alignment_path: Path
    split: str


@dataclass(frozen=True)
class CorpusManifest:
    entries: tuple[ManifestEntry, ...]
    feature_dim: int

    def __post_init__(self):
        ids = [e.utterance_id for e in self.entries]
        if len(set(ids)) != len(ids):
            raise ManifestError("duplicate utterance ids in manifest")
        for e in self.entries:
            if e.split not in SPLITS:
                raise ManifestError(
                    f"unknown split {e.split!r} for {e.utterance_id!r}; expected one of {SPLITS}"
                )

    def splits_present(self) -> set[str]:
        return {e.split for e in self.entries}

    def __len__(self) -> int:
        return len(self.entries)


# -- DSUF feature files ------------------------------------------------

_HEADER = struct.Struct("<4sIII")


def save_feature_file(seq: FeatureSequence, path: str | Path) -> None:
    """Write ``seq`` as a DSUF file: magic, version, T, D, float32 LE rows.

    Round-trips bit-exactly through ``load_feature_file``.
    """
    t, d = seq.frames.shape
    payload = np.ascontiguousarray(seq.frames, dtype="<f4").tobytes()
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(DSUF_MAGIC, DSUF_VERSION, t, d))
        fh.write(payload)


def load_feature_file(path: str | Path) -> FeatureSequence:
    """Read a DSUF file; the utterance id is the file's stem."""
    path = Path(path)
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < _HEADER.size:
        raise TruncatedFileError(f"{path}: file shorter than the DSUF header")
    magic, version, t, d = _HEADER.unpack_from(raw)
    if magic != DSUF_MAGIC:
        raise BadMagicError(f"{path}: bad magic {magic!r}")
    if version != DSUF_VERSION:
        raise BadMagicError(f"{path}: unsupported DSUF version {version}")
    if t < 1 or d < 1:
        raise InvalidDataError(f"{path}: header declares empty matrix {t}x{d}")
    expected = _HEADER.size + 4 * t * d
    if len(raw) != expected:
        raise TruncatedFileError(
            f"{path}: expected {expected} bytes for {t}x{d} floats, found {len(raw)}"
        )
    frames = np.frombuffer(raw, dtype="<f4", offset=_HEADER.size).reshape(t, d)
    if not np.isfinite(frames).all():
        raise NonFiniteDataError(f"{path}: payload contains non-finite values")
    return FeatureSequence(utterance_id=path.stem, frames=frames.copy())


# -- alignment TSV -----------------------------------------------------


def save_alignments(segments: Sequence[PhoneSegment], path: str | Path) -> None:
    lines = ["\t".join(ALIGNMENT_COLUMNS)]
    for s in segments:
        lines.append(
            f"{s.utterance_id}\t{s.start_frame}\t{s.end_frame}"
            f"\t{s.phone_label}\t{s.tone_label}\t{int(s.is_vowel)}"
        )
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def load_alignments(path: str | Path, seq: FeatureSequence) -> list[PhoneSegment]:
    """Parse an alignment TSV for ``seq``; returns sorted non-overlapping spans."""
    path = Path(path)
    text = path.read_text(encoding="utf-8")
    lines = text.splitlines()
    if not lines or lines[0].split("\t") != list(ALIGNMENT_COLUMNS):
        raise AlignmentError(f"{path}: missing or wrong header", line=1)
    segments: list[PhoneSegment] = []
    for lineno, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        fields = line.split("\t")
        if len(fields) != len(ALIGNMENT_COLUMNS):
            raise AlignmentError(f"{path}: expected 6 tab-separated fields", line=lineno)
        utt, start_s, end_s, phone, tone, vowel_s = fields
        if utt != seq.utterance_id:
            raise AlignmentError(
                f"{path}: row for {utt!r} does not match utterance {seq.utterance_id!r}",
                line=lineno,
            )
        try:
            start, end = int(start_s), int(end_s)
        except ValueError:
            raise AlignmentError(f"{path}: non-integer frame index", line=lineno)
        if vowel_s not in ("0", "1"):
            raise AlignmentError(f"{path}: is_vowel must be 0 or 1, got {vowel_s!r}", line=lineno)
        if start < 0 or end <= start or end > seq.num_frames:
            raise AlignmentError(
                f"{path}: span [{start}, {end}) outside [0, {seq.num_frames})", line=lineno
            )
        segments.append(
            PhoneSegment(
                utterance_id=utt,
                start_frame=start,
                end_frame=end,
                phone_label=phone,
                tone_label=tone,
                is_vowel=vowel_s == "1",
            )
        )
    segments.sort(key=lambda s: s.start_frame)
    for prev, cur in zip(segments, segments[1:]):
        if cur.start_frame < prev.end_frame:
            raise AlignmentError(
                f"{path}: segment [{cur.start_frame}, {cur.end_frame}) overlaps"
                f" [{prev.start_frame}, {prev.end_frame})"
            )
    return segments


# -- manifests ---------------------------------------------------------


def save_manifest(entries: Sequence[ManifestEntry], path: str | Path) -> None:
    """Write the manifest JSON with paths relative to its own directory."""
    path = Path(path)
    base = path.parent.resolve()
    rows = [
        {
            "id": e.utterance_id,
            "features": e.feature_path.resolve().relative_to(base).as_posix(),
            "alignments": e.alignment_path.resolve().relative_to(base).as_posix(),
            "split": e.split,
        }
        for e in entries
    ]
    path.write_text(json.dumps(rows, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def _peek_dims(path: Path) -> tuple[int, int]:
    with open(path, "rb") as fh:
        raw = fh.read(_HEADER.size)
    if len(raw) < _HEADER.size:
        raise TruncatedFileError(f"{path}: file shorter than the DSUF header")
    magic, version, t, d = _HEADER.unpack(raw)
    if magic != DSUF_MAGIC or version != DSUF_VERSION:
        raise BadMagicError(f"{path}: not a DSUF v{DSUF_VERSION} file")
    return t, d


def load_manifest(path: str | Path, check_files: bool = True) -> CorpusManifest:
    path = Path(path)
    try:
        rows = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as e:
        raise ManifestError(f"{path}: invalid JSON ({e})")
    if not isinstance(rows, list):
        raise ManifestError(f"{path}: manifest must be a JSON array")
    base = path.parent
    entries = []
    for i, row in enumerate(rows):
        missing = {"id", "features", "alignments", "split"} - set(row)
        if missing:
            raise ManifestError(f"{path}: entry {i} missing keys {sorted(missing)}")
        entries.append(
            ManifestEntry(
                utterance_id=row["id"],
                feature_path=base / row["features"],
                alignment_path=base / row["alignments"],
                split=row["split"],
            )
        )
    feature_dim = 0
    if entries:
        if check_files:
            for e in entries:
                for p in (e.feature_path, e.alignment_path):
                    if not p.is_file():
                        raise ManifestError(f"{path}: referenced file missing: {p}")
        _, feature_dim = _peek_dims(entries[0].feature_path)
    return CorpusManifest(entries=tuple(entries), feature_dim=feature_dim)


def split_dataset(corpus: CorpusManifest, split: str) -> CorpusManifest:
    """Filter the manifest to one split, preserving order. Idempotent."""
    if split not in SPLITS:
        raise UnknownSplitError(f"unknown split {split!r}; expected one of {SPLITS}")
    kept = tuple(e for e in corpus.entries if e.split == split)
    return CorpusManifest(entries=kept, feature_dim=corpus.feature_dim)


# -- segment handling --------------------------------------------------


def load_utterance(entry: ManifestEntry) -> tuple[FeatureSequence, list[PhoneSegment]]:
    seq = load_feature_file(entry.feature_path)
    if seq.utterance_id != entry.utterance_id:
        seq = FeatureSequence(
            utterance_id=entry.utterance_id, frames=seq.frames, frame_rate_hz=seq.frame_rate_hz
        )
    return seq, load_alignments(entry.alignment_path, seq)


def extract_vowel_segments(
    corpus: CorpusManifest,
) -> list[tuple[PhoneSegment, np.ndarray]]:
    """All segments flagged is_vowel, paired with their frame rows.

    Order is manifest order, then segment order within each utterance.
    """
    out: list[tuple[PhoneSegment, np.ndarray]] = []
    for entry in corpus.entries:
        seq, segments = load_utterance(entry)
        for seg in segments:
            if seg.is_vowel:
                out.append((seg, seq.frames[seg.start_frame : seg.end_frame]))
    return out


def mean_pool_segment(seg_frames: np.ndarray) -> np.ndarray:
    """Component-wise mean over the rows of an L x D block (L >= 1).

    Accumulates in float64, returns float32 to match feature storage.
    """
    seg_frames = np.asarray(seg_frames)
    if seg_frames.ndim != 2 or seg_frames.shape[0] < 1:
        raise DegenerateSegmentError(f"cannot pool block of shape {seg_frames.shape}")
    pooled = seg_frames.astype(np.float64).mean(axis=0)
    if not np.isfinite(pooled).all():
        raise NonFiniteDataError("pooled vector is non-finite")
    return pooled.astype(np.float32)
