"""Experiment orchestration: matched-budget comparison, codebook sweep and
per-level residual analysis over a corpus manifest, emitting deterministic
CSV tables.

Codebooks, codecs and probes only ever see train (fit) and validation
(early stopping) data; the test split is loaded for evaluation alone, which
a phase-tagged load log makes checkable.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from . import codec as codec_mod
from . import quantisers
from ._util import content_hash, derive_seed
from .data import (
    CorpusManifest,
    FeatureSequence,
    PhoneSegment,
    SPLITS,
    load_manifest,
    load_utterance,
    mean_pool_segment,
    split_dataset,
)
from .errors import (
    DivergenceError,
    InvalidConfigError,
    ManifestError,
    RepresentationError,
)
from .probes import (
    ProbeConfig,
    SequenceDataset,
    evaluate,
    task_vector_dataset,
    train_logistic,
    train_recurrent,
)
from .quantisers import QuantisedSequence

TASKS = ("phone", "tone")

QUANTISER_KINDS = (
    "continuous",
    "classic",
    "vq",
    "rvq",
    "mean_pooled",
    "svc",
    "residual_frame",
    "residual_segmental",
)

FRAME_GRANULARITY_KINDS = ("continuous", "classic", "vq", "rvq", "svc", "residual_frame")


@dataclass(frozen=True)
class RepresentationSpec:
    """One row of the comparison: a quantiser kind plus its budget params."""

    name: str
    kind: str
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in QUANTISER_KINDS:
            raise InvalidConfigError(
                f"unknown quantiser kind {self.kind!r}; expected one of {QUANTISER_KINDS}"
            )

    @property
    def levels(self) -> int:
        if self.kind == "continuous":
            return 0
        if self.kind in ("classic", "mean_pooled", "vq"):
            return 1
        if self.kind == "rvq":
            return int(self.params.get("num_levels", 2))
        return 2

    def to_dict(self) -> dict:
        return {"name": self.name, "kind": self.kind, "params": dict(self.params)}


def default_representations(budget: int = 500) -> list[RepresentationSpec]:
    """The full matched-budget comparison set: the continuous baseline plus
    the eight quantised rows."""
    if budget % 4 != 0 or budget % 10 != 0:
        raise InvalidConfigError("budget must be divisible by 4 and 10")
    k_phone = budget // 10
    k_res = budget - k_phone
    half = budget // 2
    quarter = budget // 4
    return [
        RepresentationSpec("latent", "continuous"),
        RepresentationSpec(f"classic_kmeans_{budget}", "classic", {"k": budget}),
        RepresentationSpec(
            f"vq_{budget}x1", "vq", {"num_levels": 1, "codes_per_level": budget}
        ),
        RepresentationSpec(f"rvq_{half}x2", "rvq", {"num_levels": 2, "codes_per_level": half}),
        RepresentationSpec(
            f"rvq_{quarter}x4", "rvq", {"num_levels": 4, "codes_per_level": quarter}
        ),
        RepresentationSpec(f"mean_pooled_kmeans_{budget}", "mean_pooled", {"k": budget}),
        RepresentationSpec(f"svc_{half}x2", "svc", {"k_frame": half, "k_segment": half}),
        RepresentationSpec(
            f"residual_frame_{k_phone}+{k_res}",
            "residual_frame",
            {"k_phone": k_phone, "k_residual": k_res},
        ),
        RepresentationSpec(
            f"residual_segmental_{k_phone}+{k_res}",
            "residual_segmental",
            {"k_phone": k_phone, "k_residual": k_res},
        ),
    ]


def representations_by_names(names: Sequence[str], budget: int = 500) -> list[RepresentationSpec]:
    """Baseline plus the named subset of the default representation list."""
    full = default_representations(budget)
    by_key = {
        "classic": full[1],
        "vq": full[2],
        "rvq2": full[3],
        "rvq4": full[4],
        "mean_pooled": full[5],
        "svc": full[6],
        "residual_frame": full[7],
        "residual_segmental": full[8],
    }
    out = [full[0]]
    for name in names:
        if name not in by_key:
            raise InvalidConfigError(
                f"unknown quantiser name {name!r}; expected one of {sorted(by_key)}"
            )
        out.append(by_key[name])
    return out


@dataclass(frozen=True)
class ExperimentSpec:
    manifest_path: Path
    representations: tuple[RepresentationSpec, ...] = ()
    sweep_grid: tuple[int, ...] = (50, 100, 200, 500, 1000)
    residual_grid: tuple[int, ...] = (10, 25, 50, 100)
    residual_codes: int = 450
    output_dir: Path | None = None
    seed: int = 42
    workers: int | None = None
    recurrent_overrides: dict = field(default_factory=dict)
    logistic_overrides: dict = field(default_factory=dict)
    codec_overrides: dict = field(default_factory=dict)
    kmeans_max_iters: int = 100
    kmeans_rel_tol: float = 1e-6

    def __post_init__(self):
        object.__setattr__(self, "manifest_path", Path(self.manifest_path))
        if self.output_dir is not None:
            object.__setattr__(self, "output_dir", Path(self.output_dir))
        reps = tuple(self.representations) or tuple(default_representations())
        object.__setattr__(self, "representations", reps)
        for grid_name in ("sweep_grid", "residual_grid"):
            grid = tuple(int(k) for k in getattr(self, grid_name))
            if not grid or any(k < 1 for k in grid):
                raise InvalidConfigError(f"{grid_name} must be non-empty positive integers")
            if list(grid) != sorted(grid):
                raise InvalidConfigError(f"{grid_name} must be sorted ascending")
            object.__setattr__(self, grid_name, grid)
        if self.residual_codes < 1:
            raise InvalidConfigError("residual_codes must be >= 1")

    def to_dict(self) -> dict:
        return {
            "manifest_path": str(self.manifest_path),
            "representations": [r.to_dict() for r in self.representations],
            "sweep_grid": list(self.sweep_grid),
            "residual_grid": list(self.residual_grid),
            "residual_codes": self.residual_codes,
            "seed": self.seed,
            "recurrent_overrides": dict(self.recurrent_overrides),
            "logistic_overrides": dict(self.logistic_overrides),
            "codec_overrides": dict(self.codec_overrides),
            "kmeans_max_iters": self.kmeans_max_iters,
            "kmeans_rel_tol": self.kmeans_rel_tol,
        }

    def spec_hash(self) -> str:
        return content_hash(self.to_dict())

    def recurrent_config(self, seed: int) -> ProbeConfig:
        return ProbeConfig(
            task="phone", probe_kind="recurrent", seed=seed, **self.recurrent_overrides
        )

    def logistic_config(self, task: str, seed: int) -> ProbeConfig:
        defaults = {"max_epochs": 150, "patience": 10}
        defaults.update(self.logistic_overrides)
        return ProbeConfig(task=task, probe_kind="logistic", seed=seed, **defaults)


# -- corpus access with phase-tagged load log ---------------------------------


@dataclass
class Utterance:
    utterance_id: str
    frames: np.ndarray
    segments: list[PhoneSegment]

    def vowel_segments(self) -> list[PhoneSegment]:
        return [s for s in self.segments if s.is_vowel]


class SplitCache:
    """Loads each split at most once and records (split, phase) load events;
    tests use the log to assert the test split is untouched before eval."""

    def __init__(self, manifest: CorpusManifest):
        self.manifest = manifest
        self.phase = "init"
        self.load_events: list[tuple[str, str]] = []
        self._splits: dict[str, list[Utterance]] = {}
        self._frames: dict[str, np.ndarray] = {}

    def utterances(self, split: str) -> list[Utterance]:
        if split not in self._splits:
            self.load_events.append((split, self.phase))
            part = split_dataset(self.manifest, split)
            loaded = []
            for entry in part.entries:
                seq, segments = load_utterance(entry)
                loaded.append(
                    Utterance(
                        utterance_id=entry.utterance_id, frames=seq.frames, segments=segments
                    )
                )
            self._splits[split] = loaded
        return self._splits[split]

    def all_frames(self, split: str) -> np.ndarray:
        if split not in self._frames:
            utts = self.utterances(split)
            self._frames[split] = np.concatenate([u.frames for u in utts])
        return self._frames[split]

    def vowel_segment_blocks(self, split: str) -> list[np.ndarray]:
        return [
            u.frames[s.start_frame : s.end_frame]
            for u in self.utterances(split)
            for s in u.vowel_segments()
        ]

    def vowel_labels(self, split: str) -> tuple[list[str], list[str]]:
        phones, tones = [], []
        for u in self.utterances(split):
            for s in u.vowel_segments():
                phones.append(s.phone_label)
                tones.append(s.tone_label)
        return phones, tones


def _continuous_sequences(cache: SplitCache, split: str) -> SequenceDataset:
    phones, tones = cache.vowel_labels(split)
    return SequenceDataset(
        sequences=tuple(cache.vowel_segment_blocks(split)),
        phone_labels=tuple(phones),
        tone_labels=tuple(tones),
    )


def _quantised_sequences(
    cache: SplitCache, split: str, quantise_fn: Callable[[Utterance], QuantisedSequence]
) -> SequenceDataset:
    """Frame-granularity probe dataset: quantise each utterance, slice the
    probe vectors of each vowel segment."""
    sequences, phones, tones = [], [], []
    for u in cache.utterances(split):
        q = quantise_fn(u)
        for s in u.vowel_segments():
            sequences.append(q.probe_vectors[s.start_frame : s.end_frame])
            phones.append(s.phone_label)
            tones.append(s.tone_label)
    return SequenceDataset(
        sequences=tuple(sequences), phone_labels=tuple(phones), tone_labels=tuple(tones)
    )


def _quantised_vectors(
    cache: SplitCache,
    split: str,
    quantise_fn: Callable[[Utterance, list[PhoneSegment]], QuantisedSequence],
) -> tuple[np.ndarray, list[str], list[str]]:
    """Segment-granularity probe dataset over vowel segments."""
    vectors, phones, tones = [], [], []
    for u in cache.utterances(split):
        vowels = u.vowel_segments()
        if not vowels:
            continue
        q = quantise_fn(u, vowels)
        vectors.append(q.probe_vectors)
        phones.extend(s.phone_label for s in vowels)
        tones.extend(s.tone_label for s in vowels)
    stacked = np.concatenate(vectors) if vectors else np.empty((0, 0), dtype=np.float32)
    return stacked, phones, tones


# -- result containers ---------------------------------------------------------


@dataclass
class ResultRow:
    representation: str
    levels: int
    phone_f1: float
    tone_f1: float
    train_time_s: float
    eval_segments: int
    extra: dict = field(default_factory=dict)


@dataclass
class ResultTable:
    rows: list[ResultRow]
    seed: int
    spec_hash: str

    def row(self, representation: str) -> ResultRow:
        for r in self.rows:
            if r.representation == representation:
                return r
        raise KeyError(representation)


def _provenance_lines(seed: int, spec_hash: str) -> list[str]:
    from . import __version__

    return [
        f"# tool: dsu-quant {__version__}",
        f"# seed: {seed}",
        f"# spec_hash: {spec_hash}",
    ]


def write_comparison_csv(table: ResultTable, path: Path) -> None:
    """Deterministic columns only; timings go to the sidecar file."""
    lines = _provenance_lines(table.seed, table.spec_hash)
    lines.append("representation,levels,phone_f1,tone_f1,eval_segments")
    for r in table.rows:
        lines.append(
            f"{r.representation},{r.levels},{r.phone_f1:.6f},{r.tone_f1:.6f},{r.eval_segments}"
        )
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


def write_timings_csv(table: ResultTable, path: Path) -> None:
    lines = _provenance_lines(table.seed, table.spec_hash)
    lines.append("representation,train_time_s")
    for r in table.rows:
        lines.append(f"{r.representation},{r.train_time_s:.3f}")
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


# -- probe drivers ---------------------------------------------------------------


def _probe_sequences(
    datasets: dict[str, SequenceDataset], spec: ExperimentSpec, seed: int, representation: str
) -> dict[str, float]:
    cfg = spec.recurrent_config(seed)
    probe = train_recurrent(datasets["train"], datasets["validation"], cfg)
    out = {}
    for task in TASKS:
        report = evaluate(
            probe, datasets["test"], replace(cfg, task=task), representation=representation
        )
        out[task] = report.weighted_f1
    return out


def _probe_vectors(
    splits: dict[str, tuple[np.ndarray, list[str], list[str]]],
    spec: ExperimentSpec,
    seed: int,
    representation: str,
) -> dict[str, float]:
    out = {}
    for task in TASKS:
        cfg = spec.logistic_config(task, derive_seed(seed, "logistic", task))
        sets = {
            name: task_vector_dataset(vecs, phones, tones, task)
            for name, (vecs, phones, tones) in splits.items()
        }
        probe = train_logistic(sets["train"], sets["validation"], cfg)
        report = evaluate(probe, sets["test"], cfg, representation=representation)
        out[task] = report.weighted_f1
    return out


# -- representation runners --------------------------------------------------------


def _run_representation(
    rep: RepresentationSpec, cache: SplitCache, spec: ExperimentSpec, seed: int
) -> ResultRow:
    t0 = time.perf_counter()
    extra: dict = {}
    workers = spec.workers
    km = dict(max_iters=spec.kmeans_max_iters, rel_tol=spec.kmeans_rel_tol, workers=workers)

    cache.phase = "fit"
    if rep.kind == "continuous":
        datasets = {}
        cache.phase = "probe"
        datasets["train"] = _continuous_sequences(cache, "train")
        datasets["validation"] = _continuous_sequences(cache, "validation")
        cache.phase = "eval"
        datasets["test"] = _continuous_sequences(cache, "test")
        f1 = _probe_sequences(datasets, spec, derive_seed(seed, "probe"), rep.name)
        eval_segments = len(datasets["test"])

    elif rep.kind == "classic":
        cb = quantisers.fit_classic(
            cache.all_frames("train"), rep.params["k"], seed=derive_seed(seed, "fit"), **km
        )
        quantise = lambda u: quantisers.quantise_classic(
            cb, FeatureSequence(u.utterance_id, u.frames), workers=workers
        )
        f1, eval_segments = _frame_probe_phases(cache, spec, seed, rep.name, quantise)
        extra["final_inertia"] = cb.training_stats.final_inertia

    elif rep.kind in ("vq", "rvq"):
        cfg = codec_mod.CodecConfig(
            input_dim=cache.manifest.feature_dim,
            num_levels=rep.params["num_levels"],
            codes_per_level=rep.params["codes_per_level"],
            seed=derive_seed(seed, "codec"),
            **spec.codec_overrides,
        )
        train_frames = cache.all_frames("train")
        warm = train_frames[: max(cfg.batch_size, 4 * cfg.codes_per_level)]
        params = codec_mod.init_params(cfg, warm)
        params, log = codec_mod.train(
            params, train_frames, cache.all_frames("validation"), cfg
        )
        extra["val_mse"] = log[-1]["best_val_mse"]
        extra["epochs"] = sum(1 for e in log if e.get("event") == "epoch")
        quantise = lambda u: codec_mod.encode_to_units(
            params, FeatureSequence(u.utterance_id, u.frames), cfg
        )
        f1, eval_segments = _frame_probe_phases(cache, spec, seed, rep.name, quantise)

    elif rep.kind == "mean_pooled":
        cb = quantisers.fit_mean_pooled(
            cache.vowel_segment_blocks("train"),
            rep.params["k"],
            seed=derive_seed(seed, "fit"),
            **km,
        )
        quantise = lambda u, vowels: quantisers.quantise_mean_pooled(
            cb,
            u.utterance_id,
            [u.frames[s.start_frame : s.end_frame] for s in vowels],
            workers=workers,
        )
        f1, eval_segments = _vector_probe_phases(cache, spec, seed, rep.name, quantise)

    elif rep.kind == "svc":
        cbs = quantisers.fit_svc(
            cache.all_frames("train"),
            cache.vowel_segment_blocks("train"),
            rep.params["k_frame"],
            rep.params["k_segment"],
            seed=derive_seed(seed, "fit"),
            **km,
        )
        quantise = lambda u: quantisers.quantise_svc(
            cbs, FeatureSequence(u.utterance_id, u.frames), u.segments, workers=workers
        )
        f1, eval_segments = _frame_probe_phases(cache, spec, seed, rep.name, quantise)

    elif rep.kind == "residual_frame":
        cbs = quantisers.fit_residual(
            cache.vowel_segment_blocks("train"),
            rep.params["k_phone"],
            rep.params["k_residual"],
            variant="frame",
            seed=derive_seed(seed, "fit"),
            **km,
        )
        quantise = lambda u: quantisers.quantise_residual(
            cbs,
            "frame",
            seq=FeatureSequence(u.utterance_id, u.frames),
            segments=u.segments,
            workers=workers,
        )
        f1, eval_segments = _frame_probe_phases(cache, spec, seed, rep.name, quantise)

    elif rep.kind == "residual_segmental":
        cbs = quantisers.fit_residual(
            cache.vowel_segment_blocks("train"),
            rep.params["k_phone"],
            rep.params["k_residual"],
            variant="segmental",
            seed=derive_seed(seed, "fit"),
            **km,
        )
        quantise = lambda u, vowels: quantisers.quantise_residual(
            cbs,
            "segmental",
            utterance_id=u.utterance_id,
            segment_frames=[u.frames[s.start_frame : s.end_frame] for s in vowels],
            workers=workers,
        )
        f1, eval_segments = _vector_probe_phases(cache, spec, seed, rep.name, quantise)

    else:  # pragma: no cover - guarded by RepresentationSpec
        raise InvalidConfigError(f"unhandled kind {rep.kind}")

    return ResultRow(
        representation=rep.name,
        levels=rep.levels,
        phone_f1=f1["phone"],
        tone_f1=f1["tone"],
        train_time_s=time.perf_counter() - t0,
        eval_segments=eval_segments,
        extra=extra,
    )


def _frame_probe_phases(cache, spec, seed, name, quantise) -> tuple[dict[str, float], int]:
    datasets = {}
    cache.phase = "probe"
    datasets["train"] = _quantised_sequences(cache, "train", quantise)
    datasets["validation"] = _quantised_sequences(cache, "validation", quantise)
    cache.phase = "eval"
    datasets["test"] = _quantised_sequences(cache, "test", quantise)
    f1 = _probe_sequences(datasets, spec, derive_seed(seed, "probe"), name)
    return f1, len(datasets["test"])


def _vector_probe_phases(cache, spec, seed, name, quantise) -> tuple[dict[str, float], int]:
    splits = {}
    cache.phase = "probe"
    splits["train"] = _quantised_vectors(cache, "train", quantise)
    splits["validation"] = _quantised_vectors(cache, "validation", quantise)
    cache.phase = "eval"
    splits["test"] = _quantised_vectors(cache, "test", quantise)
    f1 = _probe_vectors(splits, spec, derive_seed(seed, "probe"), name)
    return f1, len(splits["test"][1])


def _require_all_splits(manifest: CorpusManifest) -> None:
    present = manifest.splits_present()
    if set(SPLITS) - present:
        raise ManifestError(
            f"corpus rejected for probe training: splits {sorted(set(SPLITS) - present)} missing"
        )


def run_representation(
    spec: ExperimentSpec, rep: RepresentationSpec, _cache: SplitCache | None = None
) -> ResultRow:
    """Fit, quantise and probe a single representation (no baseline required)."""
    manifest = load_manifest(spec.manifest_path)
    _require_all_splits(manifest)
    cache = _cache if _cache is not None else SplitCache(manifest)
    try:
        return _run_representation(rep, cache, spec, derive_seed(spec.seed, "rep", 0))
    except DivergenceError as e:
        raise DivergenceError(f"representation '{rep.name}': {e}") from e
    except Exception as e:
        raise RepresentationError(rep.name, str(e)) from e


def run_comparison(spec: ExperimentSpec, _cache: SplitCache | None = None) -> ResultTable:
    """Fit, quantise and probe every representation in the spec; one row each.

    The continuous baseline must be present. Deterministic given the seed;
    per-representation seeds come from a fixed counter scheme.
    """
    if not any(r.kind == "continuous" for r in spec.representations):
        raise InvalidConfigError("the continuous baseline must be in the representation list")
    manifest = load_manifest(spec.manifest_path)
    _require_all_splits(manifest)
    cache = _cache if _cache is not None else SplitCache(manifest)
    rows = []
    for idx, rep in enumerate(spec.representations):
        rep_seed = derive_seed(spec.seed, "rep", idx)
        try:
            rows.append(_run_representation(rep, cache, spec, rep_seed))
        except DivergenceError as e:
            raise DivergenceError(f"representation '{rep.name}': {e}") from e
        except Exception as e:
            raise RepresentationError(rep.name, str(e)) from e
    table = ResultTable(rows=rows, seed=spec.seed, spec_hash=spec.spec_hash())
    if spec.output_dir is not None:
        spec.output_dir.mkdir(parents=True, exist_ok=True)
        write_comparison_csv(table, spec.output_dir / "comparison.csv")
        write_timings_csv(table, spec.output_dir / "comparison_timings.csv")
    return table


# -- codebook-size sweep ------------------------------------------------------------


@dataclass
class SweepRow:
    k: int
    variant: str  # "frame" | "pooled"
    status: str  # "ok" | "skipped:insufficient-data"
    phone_f1: float | None
    tone_f1: float | None
    train_time_s: float
    eval_segments: int


@dataclass
class SweepTable:
    rows: list[SweepRow]
    seed: int
    spec_hash: str


def run_codebook_sweep(spec: ExperimentSpec, _cache: SplitCache | None = None) -> SweepTable:
    """Classic frame-level K-means and its mean-pooled variant at each grid K."""
    manifest = load_manifest(spec.manifest_path)
    _require_all_splits(manifest)
    cache = _cache if _cache is not None else SplitCache(manifest)
    rows: list[SweepRow] = []
    for k in spec.sweep_grid:
        for variant in ("frame", "pooled"):
            t0 = time.perf_counter()
            seed = derive_seed(spec.seed, "sweep", variant, k)
            cache.phase = "fit"
            available = (
                len(cache.all_frames("train"))
                if variant == "frame"
                else len(cache.vowel_segment_blocks("train"))
            )
            if k > available:
                rows.append(
                    SweepRow(
                        k=k,
                        variant=variant,
                        status="skipped:insufficient-data",
                        phone_f1=None,
                        tone_f1=None,
                        train_time_s=time.perf_counter() - t0,
                        eval_segments=0,
                    )
                )
                continue
            rep = (
                RepresentationSpec(f"classic_kmeans_{k}", "classic", {"k": k})
                if variant == "frame"
                else RepresentationSpec(f"mean_pooled_kmeans_{k}", "mean_pooled", {"k": k})
            )
            row = _run_representation(rep, cache, spec, seed)
            rows.append(
                SweepRow(
                    k=k,
                    variant=variant,
                    status="ok",
                    phone_f1=row.phone_f1,
                    tone_f1=row.tone_f1,
                    train_time_s=row.train_time_s,
                    eval_segments=row.eval_segments,
                )
            )
    table = SweepTable(rows=rows, seed=spec.seed, spec_hash=spec.spec_hash())
    if spec.output_dir is not None:
        spec.output_dir.mkdir(parents=True, exist_ok=True)
        write_sweep_csv(table, spec.output_dir / "sweep.csv")
        write_sweep_long_csv(table, spec.output_dir / "sweep_long.csv")
    return table


def _fmt_f1(value: float | None) -> str:
    return "" if value is None else f"{value:.6f}"


def write_sweep_csv(table: SweepTable, path: Path) -> None:
    lines = _provenance_lines(table.seed, table.spec_hash)
    lines.append("k,variant,status,phone_f1,tone_f1,eval_segments")
    for r in table.rows:
        lines.append(
            f"{r.k},{r.variant},{r.status},{_fmt_f1(r.phone_f1)},{_fmt_f1(r.tone_f1)},"
            f"{r.eval_segments}"
        )
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


def write_sweep_long_csv(table: SweepTable, path: Path) -> None:
    lines = _provenance_lines(table.seed, table.spec_hash)
    lines.append("k,variant,task,f1")
    for r in table.rows:
        if r.status != "ok":
            continue
        lines.append(f"{r.k},{r.variant},phone,{_fmt_f1(r.phone_f1)}")
        lines.append(f"{r.k},{r.variant},tone,{_fmt_f1(r.tone_f1)}")
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


# -- residual per-level analysis ------------------------------------------------------


@dataclass
class ResidualRow:
    k_phone: int
    level: int
    task: str
    f1: float
    latent_f1: float
    eval_segments: int


@dataclass
class ResidualTable:
    rows: list[ResidualRow]
    seed: int
    spec_hash: str


def run_residual_analysis(
    spec: ExperimentSpec, _cache: SplitCache | None = None
) -> ResidualTable:
    """Probe the level-1 and level-1+2 reconstructions of the segmental
    residual quantiser across the K_phone grid; the pooled continuous latents
    probed the same way provide the baseline column."""
    manifest = load_manifest(spec.manifest_path)
    _require_all_splits(manifest)
    cache = _cache if _cache is not None else SplitCache(manifest)

    def pooled_latents(split: str) -> tuple[np.ndarray, list[str], list[str]]:
        blocks = cache.vowel_segment_blocks(split)
        phones, tones = cache.vowel_labels(split)
        vectors = np.stack([mean_pool_segment(b) for b in blocks])
        return vectors, phones, tones

    cache.phase = "probe"
    latent_splits = {s: pooled_latents(s) for s in ("train", "validation")}
    cache.phase = "eval"
    latent_splits["test"] = pooled_latents("test")
    latent_f1 = _probe_vectors(
        latent_splits, spec, derive_seed(spec.seed, "residual-latent"), "latent_pooled"
    )

    rows: list[ResidualRow] = []
    for k_phone in spec.residual_grid:
        seed = derive_seed(spec.seed, "residual", k_phone)
        cache.phase = "fit"
        cbs = quantisers.fit_residual(
            cache.vowel_segment_blocks("train"),
            k_phone,
            spec.residual_codes,
            variant="segmental",
            seed=derive_seed(seed, "fit"),
            max_iters=spec.kmeans_max_iters,
            rel_tol=spec.kmeans_rel_tol,
            workers=spec.workers,
        )

        def quantise(u: Utterance, vowels: list[PhoneSegment]) -> QuantisedSequence:
            return quantisers.quantise_residual(
                cbs,
                "segmental",
                utterance_id=u.utterance_id,
                segment_frames=[u.frames[s.start_frame : s.end_frame] for s in vowels],
                workers=spec.workers,
            )

        def level_view(split: str, level: int) -> tuple[np.ndarray, list[str], list[str]]:
            vectors, phones, tones = [], [], []
            for u in cache.utterances(split):
                vowels = u.vowel_segments()
                if not vowels:
                    continue
                q = quantise(u, vowels)
                vectors.append(quantisers.level_probe_vectors(q, level))
                phones.extend(s.phone_label for s in vowels)
                tones.extend(s.tone_label for s in vowels)
            return np.concatenate(vectors), phones, tones

        for level in (1, 2):
            cache.phase = "probe"
            splits = {s: level_view(s, level) for s in ("train", "validation")}
            cache.phase = "eval"
            splits["test"] = level_view("test", level)
            f1 = _probe_vectors(
                splits, spec, derive_seed(seed, "probe", level), f"residual_L{level}_{k_phone}"
            )
            for task in TASKS:
                rows.append(
                    ResidualRow(
                        k_phone=k_phone,
                        level=level,
                        task=task,
                        f1=f1[task],
                        latent_f1=latent_f1[task],
                        eval_segments=len(splits["test"][1]),
                    )
                )
    table = ResidualTable(rows=rows, seed=spec.seed, spec_hash=spec.spec_hash())
    if spec.output_dir is not None:
        spec.output_dir.mkdir(parents=True, exist_ok=True)
        write_residual_csv(table, spec.output_dir / "residual.csv")
    return table


def write_residual_csv(table: ResidualTable, path: Path) -> None:
    lines = _provenance_lines(table.seed, table.spec_hash)
    lines.append("k_phone,level,task,f1,latent_f1,eval_segments")
    for r in table.rows:
        lines.append(
            f"{r.k_phone},{r.level},{r.task},{r.f1:.6f},{r.latent_f1:.6f},{r.eval_segments}"
        )
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
