"""Experiment orchestration: determinism, leakage guard, CSV contracts."""

import pytest

from dsu_quant import experiment as exp
from dsu_quant.data import load_manifest
from dsu_quant.errors import InvalidConfigError, ManifestError, RepresentationError
from dsu_quant.synthetic import SyntheticSpec, generate_synthetic_corpus


@pytest.fixture(scope="module")
def tiny_corpus(tmp_path_factory):
    spec = SyntheticSpec(
        num_phones=8,
        num_tones=3,
        dim=16,
        tone_subspace_dim=4,
        frames_per_segment=(3, 6),
        segments_per_utterance=(4, 8),
        num_utterances={"train": 60, "validation": 16, "test": 16},
        seed=77,
    )
    out = tmp_path_factory.mktemp("tinycorpus")
    return generate_synthetic_corpus(spec, out)


def fast_spec(corpus, out_dir=None, **kwargs):
    defaults = dict(
        manifest_path=corpus.manifest_path,
        recurrent_overrides={"max_epochs": 3, "patience": 2, "hidden_size": 16},
        logistic_overrides={"max_epochs": 15, "patience": 4},
        codec_overrides={"max_epochs": 2, "patience": 2},
        output_dir=out_dir,
        seed=5,
    )
    defaults.update(kwargs)
    return exp.ExperimentSpec(**defaults)


class TestRepresentationSpecs:
    def test_default_budget_layout(self):
        reps = exp.default_representations(500)
        names = [r.name for r in reps]
        assert names[0] == "latent"
        assert "classic_kmeans_500" in names
        assert "rvq_125x4" in names
        assert "residual_segmental_50+450" in names
        assert len(reps) == 9

    def test_budget_divisibility_enforced(self):
        with pytest.raises(InvalidConfigError):
            exp.default_representations(501)

    def test_unknown_quantiser_name(self):
        with pytest.raises(InvalidConfigError):
            exp.representations_by_names(["classic", "nope"])

    def test_grid_must_be_sorted(self, tiny_corpus):
        with pytest.raises(InvalidConfigError):
            fast_spec(tiny_corpus, sweep_grid=(100, 50))


@pytest.fixture(scope="module")
def small_reps():
    return tuple(
        exp.representations_by_names(["classic", "mean_pooled", "residual_segmental"], budget=20)
    )


class TestRunComparison:
    def test_rows_cover_spec_and_baseline_required(self, tiny_corpus, small_reps, tmp_path):
        spec = fast_spec(tiny_corpus, out_dir=tmp_path, representations=small_reps)
        table = exp.run_comparison(spec)
        assert [r.representation for r in table.rows] == [r.name for r in small_reps]
        assert all(0.0 <= r.phone_f1 <= 1.0 and 0.0 <= r.tone_f1 <= 1.0 for r in table.rows)
        assert (tmp_path / "comparison.csv").exists()
        assert (tmp_path / "comparison_timings.csv").exists()
        header = [
            l
            for l in (tmp_path / "comparison.csv").read_text().splitlines()
            if not l.startswith("#")
        ][0]
        assert "train_time" not in header  # timings only in the sidecar

    def test_missing_baseline_rejected(self, tiny_corpus):
        reps = (exp.RepresentationSpec("classic_kmeans_20", "classic", {"k": 20}),)
        with pytest.raises(InvalidConfigError):
            exp.run_comparison(fast_spec(tiny_corpus, representations=reps))

    def test_rerun_is_byte_identical(self, tiny_corpus, small_reps, tmp_path):
        out_a, out_b = tmp_path / "a", tmp_path / "b"
        spec_a = fast_spec(tiny_corpus, out_dir=out_a, representations=small_reps)
        spec_b = fast_spec(tiny_corpus, out_dir=out_b, representations=small_reps)
        exp.run_comparison(spec_a)
        exp.run_comparison(spec_b)
        assert (out_a / "comparison.csv").read_bytes() == (out_b / "comparison.csv").read_bytes()

    def test_worker_count_does_not_change_results(self, tiny_corpus, small_reps, tmp_path):
        out_a, out_b = tmp_path / "w1", tmp_path / "w3"
        exp.run_comparison(
            fast_spec(tiny_corpus, out_dir=out_a, representations=small_reps, workers=1)
        )
        exp.run_comparison(
            fast_spec(tiny_corpus, out_dir=out_b, representations=small_reps, workers=3)
        )
        assert (out_a / "comparison.csv").read_bytes() == (out_b / "comparison.csv").read_bytes()

    def test_no_test_split_leakage(self, tiny_corpus, small_reps):
        spec = fast_spec(tiny_corpus, representations=small_reps)
        cache = exp.SplitCache(load_manifest(spec.manifest_path))
        exp.run_comparison(spec, _cache=cache)
        test_loads = [phase for split, phase in cache.load_events if split == "test"]
        assert test_loads == ["eval"]
        fit_loads = {split for split, phase in cache.load_events if phase == "fit"}
        assert "test" not in fit_loads

    def test_representation_errors_are_annotated(self, tiny_corpus):
        reps = (
            exp.RepresentationSpec("latent", "continuous"),
            exp.RepresentationSpec("classic_overbudget", "classic", {"k": 10_000_000}),
        )
        with pytest.raises(RepresentationError, match="classic_overbudget"):
            exp.run_comparison(fast_spec(tiny_corpus, representations=reps))

    def test_missing_split_rejected(self, tmp_path):
        spec = SyntheticSpec(
            num_phones=4,
            num_tones=2,
            dim=8,
            tone_subspace_dim=2,
            num_utterances={"train": 4, "validation": 1, "test": 1},
            segments_per_utterance=(2, 3),
            frames_per_segment=(2, 3),
            seed=1,
        )
        corpus = generate_synthetic_corpus(spec, tmp_path)
        manifest = tmp_path / "manifest.json"
        # Drop the test split from the manifest.
        import json

        rows = json.loads(manifest.read_text())
        manifest.write_text(json.dumps([r for r in rows if r["split"] != "test"]))
        with pytest.raises(ManifestError, match="rejected"):
            exp.run_comparison(fast_spec(corpus, manifest_path=manifest))


class TestSweep:
    def test_rows_and_skip_semantics(self, tiny_corpus, tmp_path):
        frames_available = sum(tiny_corpus.stats["train"]["frames"] for _ in [0])
        spec = fast_spec(tiny_corpus, out_dir=tmp_path, sweep_grid=(4, 8, 10_000_000))
        table = exp.run_codebook_sweep(spec)
        assert len(table.rows) == 3 * 2  # grid x {frame, pooled}
        by_key = {(r.k, r.variant): r for r in table.rows}
        assert by_key[(4, "frame")].status == "ok"
        assert by_key[(10_000_000, "frame")].status.startswith("skipped")
        assert by_key[(10_000_000, "pooled")].status.startswith("skipped")
        text = (tmp_path / "sweep.csv").read_text()
        assert "skipped:insufficient-data" in text
        long_lines = [
            l
            for l in (tmp_path / "sweep_long.csv").read_text().splitlines()
            if l and not l.startswith("#")
        ]
        # header + 2 ok grid points x 2 variants x 2 tasks
        assert len(long_lines) == 1 + 2 * 2 * 2


class TestResidualAnalysis:
    def test_shape_and_level_columns(self, tiny_corpus, tmp_path):
        spec = fast_spec(
            tiny_corpus, out_dir=tmp_path, residual_grid=(2, 4), residual_codes=8
        )
        table = exp.run_residual_analysis(spec)
        assert len(table.rows) == 2 * 2 * 2  # grid x levels x tasks
        data_lines = [
            l
            for l in (tmp_path / "residual.csv").read_text().splitlines()
            if l and not l.startswith("#")
        ]
        assert data_lines[0] == "k_phone,level,task,f1,latent_f1,eval_segments"
        assert len(data_lines) == 1 + 8
        for row in table.rows:
            assert 0.0 <= row.f1 <= 1.0
            assert 0.0 <= row.latent_f1 <= 1.0

    def test_provenance_comments_present(self, tiny_corpus, tmp_path):
        spec = fast_spec(tiny_corpus, out_dir=tmp_path, residual_grid=(2,), residual_codes=4)
        exp.run_residual_analysis(spec)
        lines = (tmp_path / "residual.csv").read_text().splitlines()
        assert lines[0].startswith("# tool: dsu-quant")
        assert lines[1] == "# seed: 5"
        assert lines[2].startswith("# spec_hash: ")
