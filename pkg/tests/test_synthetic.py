"""Generator determinism, separability regime, and degenerate-scale behaviour."""

import numpy as np
import pytest

from dsu_quant.data import extract_vowel_segments, load_manifest, split_dataset
from dsu_quant.errors import InvalidConfigError
from dsu_quant.probes import ProbeConfig, evaluate, task_vector_dataset, train_logistic
from dsu_quant.synthetic import SyntheticSpec, generate_synthetic_corpus


def small_spec(**overrides):
    base = dict(
        num_phones=8,
        num_tones=3,
        dim=12,
        tone_subspace_dim=4,
        frames_per_segment=(2, 5),
        segments_per_utterance=(4, 6),
        num_utterances={"train": 30, "validation": 8, "test": 8},
        seed=11,
    )
    base.update(overrides)
    return SyntheticSpec(**base)


def corpus_bytes(root):
    out = {}
    for path in sorted(root.rglob("*")):
        if path.is_file():
            out[str(path.relative_to(root))] = path.read_bytes()
    return out


class TestSpecValidation:
    def test_tone_scale_must_be_below_phone_spread(self):
        with pytest.raises(InvalidConfigError):
            small_spec(tone_scale=1.5, phone_spread=1.0)

    def test_subspace_dim_bounds(self):
        with pytest.raises(InvalidConfigError):
            small_spec(tone_subspace_dim=13)

    def test_bad_range(self):
        with pytest.raises(InvalidConfigError):
            small_spec(frames_per_segment=(5, 2))


class TestDeterminism:
    def test_same_seed_identical_bytes(self, tmp_path):
        spec = small_spec()
        generate_synthetic_corpus(spec, tmp_path / "a")
        generate_synthetic_corpus(spec, tmp_path / "b")
        assert corpus_bytes(tmp_path / "a") == corpus_bytes(tmp_path / "b")

    def test_different_seed_differs(self, tmp_path):
        generate_synthetic_corpus(small_spec(seed=1), tmp_path / "a")
        generate_synthetic_corpus(small_spec(seed=2), tmp_path / "b")
        assert corpus_bytes(tmp_path / "a") != corpus_bytes(tmp_path / "b")


class TestStructure:
    def test_vowel_count_matches_generator_stats(self, tmp_path):
        corpus = generate_synthetic_corpus(small_spec(), tmp_path)
        manifest = load_manifest(corpus.manifest_path)
        expected = sum(corpus.stats[s]["vowel_segments"] for s in corpus.stats)
        assert len(extract_vowel_segments(manifest)) == expected

    def test_consonants_carry_null_tone(self, tmp_path):
        corpus = generate_synthetic_corpus(small_spec(), tmp_path)
        manifest = load_manifest(corpus.manifest_path)
        from dsu_quant.data import load_utterance

        for entry in manifest.entries[:10]:
            _, segments = load_utterance(entry)
            for seg in segments:
                if seg.is_vowel:
                    assert seg.tone_label != "T0"
                    assert seg.phone_label.startswith("v")
                else:
                    assert seg.tone_label == "T0"
                    assert seg.phone_label.startswith("c")

    def test_segments_tile_utterances(self, tmp_path):
        corpus = generate_synthetic_corpus(small_spec(), tmp_path)
        manifest = load_manifest(corpus.manifest_path)
        from dsu_quant.data import load_utterance

        for entry in manifest.entries[:10]:
            seq, segments = load_utterance(entry)
            cursor = 0
            for seg in segments:
                assert seg.start_frame == cursor
                cursor = seg.end_frame
            assert cursor == seq.num_frames


class TestSignalRegimes:
    def test_noiseless_fixed_length_frames_identical_per_phone_tone(self, tmp_path):
        spec = small_spec(noise_scale=0.0, frames_per_segment=(1, 1))
        corpus = generate_synthetic_corpus(spec, tmp_path)
        manifest = load_manifest(corpus.manifest_path)
        seen: dict[tuple[str, str], bytes] = {}
        for seg, frames in extract_vowel_segments(manifest):
            key = (seg.phone_label, seg.tone_label)
            blob = frames.tobytes()
            assert seen.setdefault(key, blob) == blob

    def test_nearest_true_mean_classifies_frames(self, tmp_path):
        # sigma_p / sigma_n regime: >= 0.99 frame accuracy against true means.
        spec = small_spec(
            num_phones=50,
            dim=64,
            tone_subspace_dim=8,
            num_utterances={"train": 60, "validation": 8, "test": 8},
            seed=5,
        )
        corpus = generate_synthetic_corpus(spec, tmp_path)
        manifest = load_manifest(corpus.manifest_path)
        from dsu_quant.data import load_utterance

        label_order = corpus.phone_labels
        means = corpus.phone_means  # (P, D)
        correct = total = 0
        for entry in split_dataset(manifest, "train").entries:
            seq, segments = load_utterance(entry)
            for seg in segments:
                frames = seq.frames[seg.start_frame : seg.end_frame].astype(np.float64)
                d2 = ((frames[:, None, :] - means[None, :, :]) ** 2).sum(axis=2)
                preds = np.argmin(d2, axis=1)
                truth = label_order.index(seg.phone_label)
                correct += int((preds == truth).sum())
                total += len(preds)
        assert total > 1000
        assert correct / total >= 0.99

    def test_zero_tone_scale_gives_chance_level_tone_probe(self, tmp_path):
        # With sigma_t = 0 the tone factor is absent; any probe must land at
        # chance. Chance bound for T tones: 1/T + 0.05 on >= 10k segments.
        spec = SyntheticSpec(
            num_phones=10,
            num_tones=4,
            dim=16,
            tone_subspace_dim=4,
            tone_scale=0.0,
            noise_scale=0.05,
            frames_per_segment=(2, 4),
            segments_per_utterance=(6, 10),
            num_utterances={"train": 2300, "validation": 150, "test": 300},
            seed=13,
        )
        corpus = generate_synthetic_corpus(spec, tmp_path)
        total_vowels = sum(corpus.stats[s]["vowel_segments"] for s in corpus.stats)
        assert total_vowels >= 10000
        manifest = load_manifest(corpus.manifest_path)
        from dsu_quant.data import load_utterance, mean_pool_segment

        def pooled(split):
            vectors, phones, tones = [], [], []
            for entry in split_dataset(manifest, split).entries:
                seq, segments = load_utterance(entry)
                for seg in segments:
                    if seg.is_vowel:
                        vectors.append(mean_pool_segment(seq.frames[seg.start_frame : seg.end_frame]))
                        phones.append(seg.phone_label)
                        tones.append(seg.tone_label)
            return np.stack(vectors), phones, tones

        splits = {s: pooled(s) for s in ("train", "validation", "test")}
        cfg = ProbeConfig(task="tone", probe_kind="logistic", seed=3, max_epochs=60, patience=8)
        sets = {
            name: task_vector_dataset(v, p, t, "tone") for name, (v, p, t) in splits.items()
        }
        probe = train_logistic(sets["train"], sets["validation"], cfg)
        report = evaluate(probe, sets["test"], cfg, representation="latent_pooled")
        assert report.weighted_f1 <= 1 / spec.num_tones + 0.05
