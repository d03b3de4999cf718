"""CLI surface: exit codes, help, provenance, report formatting."""

import json

import pytest

from dsu_quant.cli import main, top2_tone_rows

TINY_SYNTH_FLAGS = [
    "--num-phones", "8", "--num-tones", "3", "--dim", "12",
    "--tone-subspace-dim", "4", "--frames-per-segment", "3,5",
    "--segments-per-utterance", "4,6", "--utterances", "40,10,10",
]

FAST_PROBE_FLAGS = ["--probe-max-epochs", "3", "--probe-patience", "2"]


@pytest.fixture(scope="module")
def cli_corpus(tmp_path_factory):
    out = tmp_path_factory.mktemp("clicorpus")
    rc = main(["synth", "--out", str(out), *TINY_SYNTH_FLAGS, "--seed", "3"])
    assert rc == 0
    return out / "manifest.json"


class TestHelpAndUsage:
    @pytest.mark.parametrize(
        "cmd", ["synth", "fit", "quantise", "probe", "compare", "sweep", "residual", "report"]
    )
    def test_help_exits_zero(self, cmd, capsys):
        with pytest.raises(SystemExit) as e:
            main([cmd, "--help"])
        assert e.value.code == 0
        assert cmd in capsys.readouterr().out

    def test_unknown_flag_exits_two(self, capsys):
        with pytest.raises(SystemExit) as e:
            main(["synth", "--out", "x", "--bogus-flag"])
        assert e.value.code == 2

    def test_unknown_subcommand_exits_two(self):
        with pytest.raises(SystemExit) as e:
            main(["frobnicate"])
        assert e.value.code == 2

    def test_malformed_grid_exits_two(self, cli_corpus, tmp_path):
        with pytest.raises(SystemExit) as e:
            main(
                ["sweep", "--manifest", str(cli_corpus), "--out", str(tmp_path),
                 "--grid", "50,abc"]
            )
        assert e.value.code == 2


class TestSynth:
    def test_writes_manifest_and_summary(self, tmp_path, capsys):
        rc = main(["synth", "--out", str(tmp_path), *TINY_SYNTH_FLAGS, "--seed", "9"])
        out = capsys.readouterr().out
        assert rc == 0
        assert (tmp_path / "manifest.json").exists()
        assert (tmp_path / "meta.json").exists()
        assert "seed: 9" in out
        assert "train:" in out and "vowels" in out

    def test_seed_repeat_identical_manifest(self, tmp_path):
        a, b = tmp_path / "a", tmp_path / "b"
        main(["synth", "--out", str(a), *TINY_SYNTH_FLAGS, "--seed", "4"])
        main(["synth", "--out", str(b), *TINY_SYNTH_FLAGS, "--seed", "4"])
        assert (a / "manifest.json").read_bytes() == (b / "manifest.json").read_bytes()
        assert (a / "meta.json").read_bytes() == (b / "meta.json").read_bytes()

    def test_single_tone_warns(self, tmp_path, capsys):
        rc = main(
            ["synth", "--out", str(tmp_path), "--num-phones", "4", "--num-tones", "1",
             "--dim", "8", "--tone-subspace-dim", "2", "--utterances", "4,2,2"]
        )
        assert rc == 0
        assert "degenerate" in capsys.readouterr().err

    def test_bad_spec_exits_two(self, tmp_path):
        rc = main(
            ["synth", "--out", str(tmp_path), "--tone-scale", "5.0", "--phone-spread", "1.0"]
        )
        assert rc == 2


class TestFitQuantise:
    def test_fit_then_quantise_classic(self, cli_corpus, tmp_path, capsys):
        art = tmp_path / "artifacts"
        rc = main(
            ["fit", "--manifest", str(cli_corpus), "--quantiser", "classic",
             "--budget", "20", "--out-dir", str(art)]
        )
        assert rc == 0
        assert (art / "classic.dsuc").exists()
        units = tmp_path / "units.tsv"
        rc = main(
            ["quantise", "--manifest", str(cli_corpus), "--split", "test",
             "--quantiser", "classic", "--codebook", str(art / "classic.dsuc"),
             "--out", str(units)]
        )
        assert rc == 0
        lines = units.read_text().splitlines()
        assert lines[0] == "utterance_id\tposition\tgranularity\tlevel\tcode"
        assert len(lines) > 1

    def test_fit_residual_writes_two_codebooks(self, cli_corpus, tmp_path):
        art = tmp_path / "artifacts"
        rc = main(
            ["fit", "--manifest", str(cli_corpus), "--quantiser", "residual_segmental",
             "--budget", "20", "--out-dir", str(art)]
        )
        assert rc == 0
        assert (art / "residual_phone.dsuc").exists()
        assert (art / "residual_level2.dsuc").exists()

    def test_quantise_missing_codebook_flag_exits_two(self, cli_corpus, tmp_path):
        rc = main(
            ["quantise", "--manifest", str(cli_corpus), "--split", "test",
             "--quantiser", "svc", "--out", str(tmp_path / "u.tsv")]
        )
        assert rc == 2

    def test_missing_manifest_exits_three(self, tmp_path):
        rc = main(
            ["fit", "--manifest", str(tmp_path / "none.json"), "--quantiser", "classic",
             "--out-dir", str(tmp_path)]
        )
        assert rc == 3


class TestCompare:
    def test_single_quantiser_gives_two_rows(self, cli_corpus, tmp_path, capsys):
        out = tmp_path / "cmp"
        rc = main(
            ["compare", "--manifest", str(cli_corpus), "--out", str(out),
             "--budget", "20", "--quantisers", "classic", *FAST_PROBE_FLAGS]
        )
        assert rc == 0
        lines = [
            l for l in (out / "comparison.csv").read_text().splitlines()
            if l and not l.startswith("#")
        ]
        assert len(lines) == 1 + 2  # header + baseline + classic
        assert lines[1].startswith("latent,")
        assert lines[2].startswith("classic_kmeans_20,")
        assert (out / "report.md").exists()

    def test_invalid_quantiser_name_exits_two(self, cli_corpus, tmp_path):
        rc = main(
            ["compare", "--manifest", str(cli_corpus), "--out", str(tmp_path),
             "--quantisers", "classic,bogus"]
        )
        assert rc == 2

    def test_rerun_determinism(self, cli_corpus, tmp_path):
        a, b = tmp_path / "a", tmp_path / "b"
        args = ["compare", "--manifest", str(cli_corpus), "--budget", "20",
                "--quantisers", "mean_pooled", "--seed", "11", *FAST_PROBE_FLAGS]
        assert main([*args, "--out", str(a)]) == 0
        assert main([*args, "--out", str(b)]) == 0
        assert (a / "comparison.csv").read_bytes() == (b / "comparison.csv").read_bytes()
        assert (a / "report.md").read_bytes() == (b / "report.md").read_bytes()

    def test_seed_echoed_in_outputs(self, cli_corpus, tmp_path):
        out = tmp_path / "cmp"
        main(
            ["compare", "--manifest", str(cli_corpus), "--out", str(out),
             "--budget", "20", "--quantisers", "mean_pooled", "--seed", "123",
             *FAST_PROBE_FLAGS]
        )
        assert "# seed: 123" in (out / "comparison.csv").read_text()
        assert "seed: 123" in (out / "report.md").read_text()


class TestSweepResidualCli:
    def test_two_point_sweep(self, cli_corpus, tmp_path):
        out = tmp_path / "sweep"
        rc = main(
            ["sweep", "--manifest", str(cli_corpus), "--out", str(out),
             "--grid", "4,8", *FAST_PROBE_FLAGS]
        )
        assert rc == 0
        lines = [
            l for l in (out / "sweep.csv").read_text().splitlines()
            if l and not l.startswith("#")
        ]
        assert len(lines) == 1 + 2 * 2

    def test_residual_csv_shape(self, cli_corpus, tmp_path):
        out = tmp_path / "res"
        rc = main(
            ["residual", "--manifest", str(cli_corpus), "--out", str(out),
             "--grid", "2,4", "--residual-codes", "6", *FAST_PROBE_FLAGS]
        )
        assert rc == 0
        lines = [
            l for l in (out / "residual.csv").read_text().splitlines()
            if l and not l.startswith("#")
        ]
        assert len(lines) == 1 + 2 * 2 * 2


class TestProbeCommand:
    def test_latent_probe_writes_report(self, cli_corpus, tmp_path, capsys):
        out = tmp_path / "probe"
        rc = main(
            ["probe", "--manifest", str(cli_corpus), "--representation", "latent",
             "--out-dir", str(out), *FAST_PROBE_FLAGS]
        )
        assert rc == 0
        payload = json.loads((out / "probe_latent.json").read_text())
        assert set(payload["f1"]) == {"phone", "tone"}
        assert payload["seed"] == 42
        assert payload["tool_version"]


class TestReport:
    def test_top2_rule(self):
        assert top2_tone_rows([0.5, 0.9, 0.7, 0.9]) == {1, 3}
        assert top2_tone_rows([0.2]) == {0}

    def test_markdown_bolds_top2(self, cli_corpus, tmp_path, capsys):
        out = tmp_path / "cmp"
        main(
            ["compare", "--manifest", str(cli_corpus), "--out", str(out),
             "--budget", "20", "--quantisers", "classic,mean_pooled", *FAST_PROBE_FLAGS]
        )
        capsys.readouterr()
        rc = main(["report", "--inputs", str(out / "comparison.csv"), "--format", "md"])
        assert rc == 0
        text = capsys.readouterr().out
        # Recompute the top-2 rule from the CSV values.
        rows = [
            l.split(",") for l in (out / "comparison.csv").read_text().splitlines()
            if l and not l.startswith("#")
        ]
        header, data = rows[0], rows[1:]
        tone_idx = header.index("tone_f1")
        expected_bold = top2_tone_rows([float(r[tone_idx]) for r in data])
        rendered = [
            line for line in text.splitlines()
            if line.startswith("|") and not set(line) <= {"|", "-", " "}
        ]
        for i, r in enumerate(data):
            row_line = rendered[1 + i]  # skip the header row
            assert (f"**{r[tone_idx]}**" in row_line) == (i in expected_bold)

    def test_merge_and_csv_passthrough(self, cli_corpus, tmp_path, capsys):
        out = tmp_path / "res"
        main(
            ["residual", "--manifest", str(cli_corpus), "--out", str(out),
             "--grid", "2", "--residual-codes", "4", *FAST_PROBE_FLAGS]
        )
        capsys.readouterr()
        rc = main(
            ["report", "--inputs", str(out / "residual.csv"), "--format", "csv",
             "--out", str(tmp_path / "merged.csv")]
        )
        assert rc == 0
        merged = (tmp_path / "merged.csv").read_text()
        assert "# section: residual" in merged
        assert "k_phone,level,task,f1,latent_f1,eval_segments" in merged

    def test_malformed_csv_exits_two(self, tmp_path):
        bad = tmp_path / "bad.csv"
        bad.write_text("a,b\n1,2,3\n")
        rc = main(["report", "--inputs", str(bad)])
        assert rc == 2
