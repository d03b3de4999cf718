"""Synthetic two-factor corpus generator.

Frames are drawn as ``phone_mean + tone_basis @ tone_path(t/L) + noise``:
phone identity is a high-variance offset shared by every frame of a
segment, tone is a low-norm time-varying signal confined to a small
subspace, realised only on vowel segments. Consonant segments carry the
reserved null tone "T0". The same seed always produces identical bytes
on disk.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
import numpy as np

from ._util import content_hash, new_rng
from .data import (
    NULL_TONE,
    CorpusManifest,
    FeatureSequence,
    ManifestEntry,
    PhoneSegment,
    SPLITS,
    load_manifest,
    save_alignments,
    save_feature_file,
    save_manifest,
)
from .errors import InvalidConfigError

# Anchor (start, end) pitch heights cycled over the tone inventory. Index 0/4/6
# are level tones, the rest are linear contours. Heights stay within [-1.2, 1.2]
# and every anchor has a nonzero time average, so tones stay distinguishable
# after mean pooling (each tone also gets its own subspace direction) while
# contours still sweep a wide range within the segment. Kept modest so the
# per-frame, per-direction tone variance stays near the noise floor: frame-level
# clustering then under-resolves tone, which sequence and pooled probes can
# still integrate out.
_TONE_ANCHORS = (
    (1.0, 1.0),
    (-0.4, 1.2),
    (-1.0, -0.6),
    (0.4, -1.2),
    (0.6, 0.6),
    (-1.2, 0.4),
    (-0.6, -0.6),
    (1.2, -0.4),
)


@dataclass(frozen=True)
class SyntheticSpec:
    """Parameters of the generative model; defaults are the desk-scale setup."""

    num_phones: int = 50
    num_tones: int = 4
    dim: int = 64
    phone_spread: float = 1.0
    tone_scale: float = 0.15
    noise_scale: float = 0.05
    tone_subspace_dim: int = 8
    frames_per_segment: tuple[int, int] = (4, 12)
    segments_per_utterance: tuple[int, int] = (6, 10)
    num_utterances: dict[str, int] = field(
        default_factory=lambda: {"train": 2150, "validation": 260, "test": 260}
    )
    seed: int = 42
    frame_rate_hz: float = 50.0

    def __post_init__(self):
        if self.num_phones < 1 or self.num_tones < 1 or self.dim < 1:
            raise InvalidConfigError("num_phones, num_tones and dim must be >= 1")
        if self.phone_spread <= 0:
            raise InvalidConfigError("phone_spread must be positive")
        if not 0 <= self.tone_scale < self.phone_spread:
            raise InvalidConfigError("tone_scale must satisfy 0 <= tone_scale < phone_spread")
        if self.noise_scale < 0:
            raise InvalidConfigError("noise_scale must be non-negative")
        if not 1 <= self.tone_subspace_dim <= self.dim:
            raise InvalidConfigError("tone_subspace_dim must be in [1, dim]")
        for name, (lo, hi) in (
            ("frames_per_segment", self.frames_per_segment),
            ("segments_per_utterance", self.segments_per_utterance),
        ):
            if lo < 1 or hi < lo:
                raise InvalidConfigError(f"{name} must be a range [lo, hi] with 1 <= lo <= hi")
        if set(self.num_utterances) != set(SPLITS):
            raise InvalidConfigError(f"num_utterances must cover exactly the splits {SPLITS}")
        if any(n < 1 for n in self.num_utterances.values()):
            raise InvalidConfigError("every split needs at least one utterance")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["frames_per_segment"] = list(self.frames_per_segment)
        d["segments_per_utterance"] = list(self.segments_per_utterance)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "SyntheticSpec":
        d = dict(d)
        for key in ("frames_per_segment", "segments_per_utterance"):
            if key in d:
                d[key] = tuple(d[key])
        return cls(**d)


@dataclass(frozen=True)
class ToneComponent:
    """Linear pitch path ``height(t) = start + (end - start) * t`` along one
    axis of the tone subspace."""

    start: float
    end: float
    axis: int

    def heights(self, taus: np.ndarray) -> np.ndarray:
        return self.start + (self.end - self.start) * taus


@dataclass(frozen=True)
class ToneTemplate:
    label: str
    components: tuple[ToneComponent, ...]

    def coefficients(self, taus: np.ndarray, scale: float, subspace_dim: int) -> np.ndarray:
        out = np.zeros((len(taus), subspace_dim))
        for comp in self.components:
            out[:, comp.axis] += comp.heights(taus)
        return scale * out

    def pooled_coefficients(self, length: int, scale: float, subspace_dim: int) -> np.ndarray:
        taus = np.arange(length) / length
        return self.coefficients(taus, scale, subspace_dim).mean(axis=0)


def build_tone_templates(num_tones: int, subspace_dim: int) -> list[ToneTemplate]:
    """One template per tone. Tone t owns the subspace axes congruent to t
    modulo num_tones, each carrying its own anchor path, so the evidence for
    a tone is spread over several directions while the variance along any
    single direction stays modest (one anchor's worth). Anchors cycle through
    ``_TONE_ANCHORS``; combinations that repeat are shrunk to stay distinct."""
    templates = []
    for t in range(num_tones):
        axes = list(range(t % subspace_dim, subspace_dim, num_tones))
        components = []
        for k, axis in enumerate(axes):
            start, end = _TONE_ANCHORS[(t + 2 * k) % len(_TONE_ANCHORS)]
            wrap = t // max(len(_TONE_ANCHORS), subspace_dim)
            shrink = 0.75**wrap
            components.append(ToneComponent(start=start * shrink, end=end * shrink, axis=axis))
        templates.append(ToneTemplate(label=f"T{t + 1}", components=tuple(components)))
    return templates


@dataclass(frozen=True)
class GeneratedCorpus:
    """In-memory handle on a generated corpus, including its ground truth."""

    spec: SyntheticSpec
    manifest_path: Path
    manifest: CorpusManifest
    stats: dict
    phone_means: np.ndarray  # (num_phones, dim), rows ordered vowels then consonants
    phone_labels: list[str]
    vowel_labels: list[str]
    consonant_labels: list[str]
    tone_basis: np.ndarray  # (dim, tone_subspace_dim), orthonormal columns
    tone_templates: list[ToneTemplate]


def _phone_inventory(num_phones: int) -> tuple[list[str], list[str]]:
    n_vowels = (num_phones + 1) // 2
    width = max(2, len(str(num_phones - 1)))
    vowels = [f"v{i:0{width}d}" for i in range(n_vowels)]
    consonants = [f"c{i:0{width}d}" for i in range(num_phones - n_vowels)]
    return vowels, consonants


def _orthonormal_basis(rng: np.random.Generator, dim: int, k: int) -> np.ndarray:
    q, r = np.linalg.qr(rng.normal(size=(dim, k)))
    d = np.diag(r)
    return q * np.where(d == 0, 1.0, np.sign(d))


def generate_synthetic_corpus(spec: SyntheticSpec, out_dir: str | Path) -> GeneratedCorpus:
    """Generate features, alignments, manifest and meta.json under ``out_dir``."""
    out_dir = Path(out_dir)
    feat_dir = out_dir / "features"
    align_dir = out_dir / "alignments"
    feat_dir.mkdir(parents=True, exist_ok=True)
    align_dir.mkdir(parents=True, exist_ok=True)

    rng = new_rng(spec.seed)
    vowel_labels, consonant_labels = _phone_inventory(spec.num_phones)
    phone_labels = vowel_labels + consonant_labels
    phone_means = rng.normal(0.0, spec.phone_spread, size=(spec.num_phones, spec.dim))
    basis = _orthonormal_basis(rng, spec.dim, spec.tone_subspace_dim)
    templates = build_tone_templates(spec.num_tones, spec.tone_subspace_dim)

    label_to_index = {lbl: i for i, lbl in enumerate(phone_labels)}
    s_lo, s_hi = spec.segments_per_utterance
    l_lo, l_hi = spec.frames_per_segment

    entries: list[ManifestEntry] = []
    stats: dict = {}
    for split in SPLITS:
        split_stats = {
            "utterances": 0,
            "segments": 0,
            "vowel_segments": 0,
            "frames": 0,
            "tone_counts": {t.label: 0 for t in templates},
            "phone_counts": {lbl: 0 for lbl in phone_labels},
        }
        for u in range(spec.num_utterances[split]):
            utt_id = f"{split}_{u:05d}"
            n_segments = int(rng.integers(s_lo, s_hi + 1))
            vowel_first = bool(rng.integers(0, 2)) if consonant_labels else True
            segments: list[PhoneSegment] = []
            blocks: list[np.ndarray] = []
            cursor = 0
            for s in range(n_segments):
                is_vowel = not consonant_labels or (s % 2 == 0) == vowel_first
                if is_vowel:
                    phone = vowel_labels[int(rng.integers(0, len(vowel_labels)))]
                    tone_idx = int(rng.integers(0, spec.num_tones))
                    tone = templates[tone_idx].label
                else:
                    phone = consonant_labels[int(rng.integers(0, len(consonant_labels)))]
                    tone_idx = -1
                    tone = NULL_TONE
                length = int(rng.integers(l_lo, l_hi + 1))
                block = phone_means[label_to_index[phone]] + rng.normal(
                    0.0, spec.noise_scale, size=(length, spec.dim)
                )
                if tone_idx >= 0:
                    taus = np.arange(length) / length
                    coeffs = templates[tone_idx].coefficients(
                        taus, spec.tone_scale, spec.tone_subspace_dim
                    )
                    block += coeffs @ basis.T
                blocks.append(block)
                segments.append(
                    PhoneSegment(
                        utterance_id=utt_id,
                        start_frame=cursor,
                        end_frame=cursor + length,
                        phone_label=phone,
                        tone_label=tone,
                        is_vowel=is_vowel,
                    )
                )
                cursor += length
                split_stats["segments"] += 1
                split_stats["phone_counts"][phone] += 1
                if is_vowel:
                    split_stats["vowel_segments"] += 1
                    split_stats["tone_counts"][tone] += 1
            frames = np.concatenate(blocks, axis=0).astype(np.float32)
            seq = FeatureSequence(
                utterance_id=utt_id, frames=frames, frame_rate_hz=spec.frame_rate_hz
            )
            feature_path = feat_dir / f"{utt_id}.dsuf"
            alignment_path = align_dir / f"{utt_id}.tsv"
            save_feature_file(seq, feature_path)
            save_alignments(segments, alignment_path)
            entries.append(
                ManifestEntry(
                    utterance_id=utt_id,
                    feature_path=feature_path,
                    alignment_path=alignment_path,
                    split=split,
                )
            )
            split_stats["utterances"] += 1
            split_stats["frames"] += cursor
        stats[split] = split_stats

    manifest_path = out_dir / "manifest.json"
    save_manifest(entries, manifest_path)
    meta = {
        "spec": spec.to_dict(),
        "spec_hash": content_hash(spec.to_dict()),
        "stats": stats,
    }
    (out_dir / "meta.json").write_text(
        json.dumps(meta, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )
    return GeneratedCorpus(
        spec=spec,
        manifest_path=manifest_path,
        manifest=load_manifest(manifest_path),
        stats=stats,
        phone_means=phone_means,
        phone_labels=phone_labels,
        vowel_labels=vowel_labels,
        consonant_labels=consonant_labels,
        tone_basis=basis,
        tone_templates=templates,
    )
