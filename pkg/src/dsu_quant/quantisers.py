"""The non-neural quantisation strategies behind one common output type.

Every quantiser maps an utterance (frames, plus alignments where needed)
to integer codes over one or more levels and to the continuous probe
vector each code tuple stands for. Probes consume the vectors, never the
code ids.

Code numbering: levels that depend on segment coverage at frame
granularity (the SVC segment level and the residual frame-variant phone
level) reserve code 0 for frames outside any usable segment and store
``centroid_index + 1`` otherwise. Segment-granularity codes are plain
0-based centroid indices.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from . import kmeans
from ._util import derive_seed
from .data import FeatureSequence, PhoneSegment, mean_pool_segment
from .errors import DimensionMismatchError, InvalidConfigError
from .kmeans import Codebook, KMeansConfig

RESIDUAL_VARIANTS = ("frame", "segmental")

NO_SEGMENT_CODE = 0


@dataclass(frozen=True)
class QuantisedSequence:
    """Codes and probe vectors for one utterance.

    ``codes`` is (positions x levels); ``probe_vectors`` is (positions x D).
    ``level_vectors`` carries the per-level centroid contribution for
    quantisers with a reconstruction-sum decomposition (residual, RVQ).
    """

    utterance_id: str
    granularity: str  # "frame" | "segment"
    codes: np.ndarray
    probe_vectors: np.ndarray
    level_vectors: tuple[np.ndarray, ...] | None = None

    def __post_init__(self):
        if self.granularity not in ("frame", "segment"):
            raise InvalidConfigError(f"unknown granularity {self.granularity!r}")
        codes = np.asarray(self.codes, dtype=np.int64)
        if codes.ndim != 2:
            raise InvalidConfigError("codes must be positions x levels")
        vectors = np.asarray(self.probe_vectors, dtype=np.float32)
        if vectors.ndim != 2 or vectors.shape[0] != codes.shape[0]:
            raise InvalidConfigError("probe_vectors must align with codes")
        object.__setattr__(self, "codes", codes)
        object.__setattr__(self, "probe_vectors", vectors)

    @property
    def num_positions(self) -> int:
        return self.codes.shape[0]

    @property
    def num_levels(self) -> int:
        return self.codes.shape[1]


def level_probe_vectors(q: QuantisedSequence, level: int) -> np.ndarray:
    """Probe vectors truncated to the centroid sum of the first ``level``
    levels (1-based); e.g. level 1 of a residual quantiser is the phone
    centroid alone."""
    if q.level_vectors is None:
        raise InvalidConfigError(
            "this quantiser does not define a per-level sum decomposition"
        )
    if not 1 <= level <= len(q.level_vectors):
        raise ValueError(f"unknown level {level}; have 1..{len(q.level_vectors)}")
    total = np.zeros_like(q.level_vectors[0], dtype=np.float32)
    for part in q.level_vectors[:level]:
        total += part
    return total


# -- classic K-means (frame-level) --------------------------------------


def fit_classic(
    train_frames: np.ndarray,
    k: int,
    *,
    seed: int = 42,
    max_iters: int = 100,
    rel_tol: float = 1e-6,
    workers: int | None = None,
) -> Codebook:
    """Frame-level codebook fit on every frame of the training split."""
    cfg = KMeansConfig(k=k, max_iters=max_iters, rel_tol=rel_tol, seed=seed)
    return kmeans.fit(train_frames, cfg, workers=workers)


def quantise_classic(
    codebook: Codebook, seq: FeatureSequence, workers: int | None = None
) -> QuantisedSequence:
    codes, _ = kmeans.assign_batch(codebook, seq.frames, workers=workers)
    return QuantisedSequence(
        utterance_id=seq.utterance_id,
        granularity="frame",
        codes=codes[:, None],
        probe_vectors=codebook.centroids[codes],
    )


# -- mean-pooled K-means (segment-level) ---------------------------------


def _pool_blocks(segment_frames: Sequence[np.ndarray]) -> np.ndarray:
    if len(segment_frames) == 0:
        return np.empty((0, 0), dtype=np.float32)
    return np.stack([mean_pool_segment(block) for block in segment_frames])


def fit_mean_pooled(
    segment_frames: Sequence[np.ndarray],
    k: int,
    *,
    seed: int = 42,
    max_iters: int = 100,
    rel_tol: float = 1e-6,
    workers: int | None = None,
) -> Codebook:
    """Segment-level codebook fit on mean-pooled vowel segments."""
    pooled = _pool_blocks(segment_frames)
    cfg = KMeansConfig(k=k, max_iters=max_iters, rel_tol=rel_tol, seed=seed)
    return kmeans.fit(pooled, cfg, workers=workers)


def quantise_mean_pooled(
    codebook: Codebook,
    utterance_id: str,
    segment_frames: Sequence[np.ndarray],
    workers: int | None = None,
) -> QuantisedSequence:
    pooled = _pool_blocks(segment_frames)
    codes, _ = kmeans.assign_batch(codebook, pooled, workers=workers)
    return QuantisedSequence(
        utterance_id=utterance_id,
        granularity="segment",
        codes=codes[:, None],
        probe_vectors=codebook.centroids[codes],
    )


# -- SVC: fused frame + pooled-segment centroids -------------------------


def fit_svc(
    train_frames: np.ndarray,
    segment_frames: Sequence[np.ndarray],
    k_frame: int = 250,
    k_segment: int = 250,
    *,
    seed: int = 42,
    max_iters: int = 100,
    rel_tol: float = 1e-6,
    workers: int | None = None,
) -> tuple[Codebook, Codebook]:
    """Two codebooks: one over frames, one over pooled vowel segments."""
    frame_cb = fit_classic(
        train_frames,
        k_frame,
        seed=derive_seed(seed, "svc-frame"),
        max_iters=max_iters,
        rel_tol=rel_tol,
        workers=workers,
    )
    segment_cb = fit_mean_pooled(
        segment_frames,
        k_segment,
        seed=derive_seed(seed, "svc-segment"),
        max_iters=max_iters,
        rel_tol=rel_tol,
        workers=workers,
    )
    return frame_cb, replace(segment_cb, level_id=1)


def _segment_index_map(num_frames: int, segments: Sequence[PhoneSegment]) -> np.ndarray:
    index = np.full(num_frames, -1, dtype=np.int64)
    for i, seg in enumerate(segments):
        if seg.end_frame > num_frames:
            raise DimensionMismatchError(
                f"segment [{seg.start_frame}, {seg.end_frame}) exceeds {num_frames} frames"
            )
        index[seg.start_frame : seg.end_frame] = i
    return index


def quantise_svc(
    codebooks: tuple[Codebook, Codebook],
    seq: FeatureSequence,
    segments: Sequence[PhoneSegment],
    workers: int | None = None,
) -> QuantisedSequence:
    """Fused representation: the arithmetic mean of the frame centroid and
    the covering segment's pooled centroid. Frames outside any segment use
    the frame centroid alone and the reserved segment code 0."""
    frame_cb, segment_cb = codebooks
    frame_codes, _ = kmeans.assign_batch(frame_cb, seq.frames, workers=workers)
    probe = frame_cb.centroids[frame_codes].copy()
    seg_col = np.full(seq.num_frames, NO_SEGMENT_CODE, dtype=np.int64)
    seg_index = _segment_index_map(seq.num_frames, segments)
    if segments:
        pooled = _pool_blocks([seq.frames[s.start_frame : s.end_frame] for s in segments])
        seg_codes, _ = kmeans.assign_batch(segment_cb, pooled, workers=workers)
        covered = seg_index >= 0
        owner = seg_index[covered]
        seg_col[covered] = seg_codes[owner] + 1
        probe[covered] = (probe[covered] + segment_cb.centroids[seg_codes[owner]]) / 2.0
    return QuantisedSequence(
        utterance_id=seq.utterance_id,
        granularity="frame",
        codes=np.stack([frame_codes, seg_col], axis=1),
        probe_vectors=probe,
    )


# -- residual K-means ----------------------------------------------------


def fit_residual(
    segment_frames: Sequence[np.ndarray],
    k_phone: int = 50,
    k_residual: int = 450,
    variant: str = "segmental",
    *,
    seed: int = 42,
    max_iters: int = 100,
    rel_tol: float = 1e-6,
    workers: int | None = None,
) -> tuple[Codebook, Codebook]:
    """Coarse codebook on pooled segments, then a second codebook on what is
    left after subtracting each item's coarse centroid (per pooled segment
    for ``segmental``, per frame for ``frame``)."""
    if variant not in RESIDUAL_VARIANTS:
        raise InvalidConfigError(f"variant must be one of {RESIDUAL_VARIANTS}")
    pooled = _pool_blocks(segment_frames)
    phone_cb = fit_mean_pooled(
        segment_frames,
        k_phone,
        seed=derive_seed(seed, "residual-phone"),
        max_iters=max_iters,
        rel_tol=rel_tol,
        workers=workers,
    )
    codes, _ = kmeans.assign_batch(phone_cb, pooled, workers=workers)
    anchors = phone_cb.centroids[codes]
    if variant == "segmental":
        residuals = pooled - anchors
    else:
        residuals = np.concatenate(
            [
                np.asarray(block, dtype=np.float32) - anchors[i]
                for i, block in enumerate(segment_frames)
            ]
        )
    residual_cb = kmeans.fit(
        residuals,
        KMeansConfig(
            k=k_residual,
            max_iters=max_iters,
            rel_tol=rel_tol,
            seed=derive_seed(seed, "residual-level2"),
        ),
        workers=workers,
    )
    return phone_cb, replace(residual_cb, level_id=1)


def quantise_residual(
    codebooks: tuple[Codebook, Codebook],
    variant: str,
    *,
    seq: FeatureSequence | None = None,
    segments: Sequence[PhoneSegment] | None = None,
    utterance_id: str | None = None,
    segment_frames: Sequence[np.ndarray] | None = None,
    workers: int | None = None,
) -> QuantisedSequence:
    """Two-level codes with probe vector = phone centroid + residual centroid.

    ``segmental`` consumes (utterance_id, segment_frames) and emits one
    position per segment. ``frame`` consumes (seq, segments); only vowel
    segments provide the phone-level lookup, all other frames fall back to
    residual-only treatment with the reserved phone code 0.
    """
    if variant not in RESIDUAL_VARIANTS:
        raise InvalidConfigError(f"variant must be one of {RESIDUAL_VARIANTS}")
    phone_cb, residual_cb = codebooks
    if variant == "segmental":
        if utterance_id is None or segment_frames is None:
            raise InvalidConfigError("segmental variant needs utterance_id and segment_frames")
        pooled = _pool_blocks(segment_frames)
        code1, _ = kmeans.assign_batch(phone_cb, pooled, workers=workers)
        level1 = phone_cb.centroids[code1]
        code2, _ = kmeans.assign_batch(residual_cb, pooled - level1, workers=workers)
        level2 = residual_cb.centroids[code2]
        return QuantisedSequence(
            utterance_id=utterance_id,
            granularity="segment",
            codes=np.stack([code1, code2], axis=1),
            probe_vectors=level1 + level2,
            level_vectors=(level1, level2),
        )
    if seq is None or segments is None:
        raise InvalidConfigError("frame variant needs seq and segments")
    vowels = [s for s in segments if s.is_vowel]
    seg_index = _segment_index_map(seq.num_frames, vowels)
    code1_col = np.full(seq.num_frames, NO_SEGMENT_CODE, dtype=np.int64)
    level1 = np.zeros_like(seq.frames)
    if vowels:
        pooled = _pool_blocks([seq.frames[s.start_frame : s.end_frame] for s in vowels])
        seg_code1, _ = kmeans.assign_batch(phone_cb, pooled, workers=workers)
        covered = seg_index >= 0
        owner = seg_index[covered]
        code1_col[covered] = seg_code1[owner] + 1
        level1[covered] = phone_cb.centroids[seg_code1[owner]]
    code2, _ = kmeans.assign_batch(residual_cb, seq.frames - level1, workers=workers)
    level2 = residual_cb.centroids[code2]
    return QuantisedSequence(
        utterance_id=seq.utterance_id,
        granularity="frame",
        codes=np.stack([code1_col, code2], axis=1),
        probe_vectors=level1 + level2,
        level_vectors=(level1, level2),
    )


# -- TSV interchange ------------------------------------------------------

UNITS_TSV_COLUMNS = ("utterance_id", "position", "granularity", "level", "code")


def write_units_tsv(sequences: Iterable[QuantisedSequence], path: str | Path) -> None:
    """Long-format TSV: one row per (position, level) code."""
    lines = ["\t".join(UNITS_TSV_COLUMNS)]
    for q in sequences:
        for pos in range(q.num_positions):
            for level in range(q.num_levels):
                lines.append(
                    f"{q.utterance_id}\t{pos}\t{q.granularity}\t{level}\t{q.codes[pos, level]}"
                )
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")
