"""Command-line frontend.

Exit codes: 0 success, 2 usage/spec error, 3 I/O failure, 4 numerical
divergence. Every output embeds the seed, a content hash of the resolved
spec, and the tool version.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import __version__
from . import codec as codec_mod
from . import experiment as exp
from . import kmeans as kmeans_mod
from . import quantisers
from ._util import content_hash, derive_seed
from .data import SPLITS, load_manifest, load_utterance, split_dataset
from .errors import (
    AlignmentError,
    DivergenceError,
    DsuQuantError,
    FileFormatError,
    InvalidConfigError,
    InvalidDataError,
    ManifestError,
    RepresentationError,
    UnknownSplitError,
)
from .synthetic import SyntheticSpec, generate_synthetic_corpus

log = logging.getLogger("dsu_quant")

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_IO = 3
EXIT_DIVERGENCE = 4

QUANTISER_NAMES = (
    "classic",
    "vq",
    "rvq2",
    "rvq4",
    "mean_pooled",
    "svc",
    "residual_frame",
    "residual_segmental",
)


def _int_pair(text: str) -> tuple[int, int]:
    parts = text.split(",")
    if len(parts) != 2:
        raise argparse.ArgumentTypeError(f"expected LO,HI, got {text!r}")
    return int(parts[0]), int(parts[1])


def _int_list(text: str) -> tuple[int, ...]:
    try:
        values = tuple(int(p) for p in text.split(",") if p.strip() != "")
    except ValueError:
        raise argparse.ArgumentTypeError(f"malformed integer list {text!r}")
    if not values:
        raise argparse.ArgumentTypeError("empty grid")
    return values


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="dsu-quant",
        description="Quantise continuous speech representations into discrete units "
        "and probe how much phone and tone information each scheme preserves.",
    )
    parser.add_argument("--version", action="version", version=f"dsu-quant {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(p: argparse.ArgumentParser) -> None:
        p.add_argument("--seed", type=int, default=42, help="base RNG seed (default 42)")
        p.add_argument("--verbose", action="store_true", help="log progress to stderr")
        p.add_argument(
            "--workers",
            type=int,
            default=None,
            help="worker cap (default: DSU_QUANT_THREADS or machine parallelism)",
        )

    p = sub.add_parser("synth", help="generate a synthetic corpus")
    add_common(p)
    p.add_argument("--out", required=True, type=Path, help="output directory")
    p.add_argument("--spec", type=Path, help="JSON file with generator parameters")
    p.add_argument("--num-phones", type=int)
    p.add_argument("--num-tones", type=int)
    p.add_argument("--dim", type=int)
    p.add_argument("--phone-spread", type=float)
    p.add_argument("--tone-scale", type=float)
    p.add_argument("--noise-scale", type=float)
    p.add_argument("--tone-subspace-dim", type=int)
    p.add_argument("--frames-per-segment", type=_int_pair, metavar="LO,HI")
    p.add_argument("--segments-per-utterance", type=_int_pair, metavar="LO,HI")
    p.add_argument(
        "--utterances", type=_int_list, metavar="TRAIN,VAL,TEST", help="utterances per split"
    )

    p = sub.add_parser("fit", help="fit a quantiser on the train split")
    add_common(p)
    p.add_argument("--manifest", required=True, type=Path)
    p.add_argument("--quantiser", required=True, choices=QUANTISER_NAMES)
    p.add_argument("--out-dir", required=True, type=Path)
    p.add_argument("--budget", type=int, default=500, help="total code budget (default 500)")

    p = sub.add_parser("quantise", help="emit discrete units for one split as TSV")
    add_common(p)
    p.add_argument("--manifest", required=True, type=Path)
    p.add_argument("--split", required=True, choices=SPLITS)
    p.add_argument("--quantiser", required=True, choices=QUANTISER_NAMES)
    p.add_argument("--codebook", type=Path, help="DSUC file (first level)")
    p.add_argument("--codebook2", type=Path, help="DSUC file (second level)")
    p.add_argument("--checkpoint", type=Path, help="DSUN codec checkpoint")
    p.add_argument("--out", required=True, type=Path)

    p = sub.add_parser("probe", help="fit, quantise and probe one representation")
    add_common(p)
    p.add_argument("--manifest", required=True, type=Path)
    p.add_argument(
        "--representation", required=True, choices=("latent",) + QUANTISER_NAMES
    )
    p.add_argument("--budget", type=int, default=500)
    p.add_argument("--task", choices=("phone", "tone", "both"), default="both")
    p.add_argument("--out-dir", required=True, type=Path)
    p.add_argument("--probe-max-epochs", type=int, default=None)
    p.add_argument("--probe-patience", type=int, default=None)

    p = sub.add_parser("compare", help="matched-budget comparison of quantisers")
    add_common(p)
    p.add_argument("--manifest", required=True, type=Path)
    p.add_argument("--out", required=True, type=Path, help="output directory")
    p.add_argument("--budget", type=int, default=500)
    p.add_argument(
        "--quantisers",
        default="all",
        help="comma-separated subset of "
        f"{','.join(QUANTISER_NAMES)} (default all)",
    )
    p.add_argument("--probe-max-epochs", type=int, default=None)
    p.add_argument("--probe-patience", type=int, default=None)
    p.add_argument("--codec-max-epochs", type=int, default=None)

    p = sub.add_parser("sweep", help="codebook-size sweep (frame and pooled)")
    add_common(p)
    p.add_argument("--manifest", required=True, type=Path)
    p.add_argument("--out", required=True, type=Path)
    p.add_argument("--grid", type=_int_list, default=(50, 100, 200, 500, 1000))
    p.add_argument("--probe-max-epochs", type=int, default=None)
    p.add_argument("--probe-patience", type=int, default=None)

    p = sub.add_parser("residual", help="per-level residual analysis over K_phone")
    add_common(p)
    p.add_argument("--manifest", required=True, type=Path)
    p.add_argument("--out", required=True, type=Path)
    p.add_argument("--grid", type=_int_list, default=(10, 25, 50, 100))
    p.add_argument("--residual-codes", type=int, default=450)
    p.add_argument("--probe-max-epochs", type=int, default=None)
    p.add_argument("--probe-patience", type=int, default=None)

    p = sub.add_parser("report", help="render result CSVs as markdown or merged CSV")
    add_common(p)
    p.add_argument("--inputs", required=True, nargs="+", type=Path)
    p.add_argument("--format", choices=("md", "csv"), default="md")
    p.add_argument("--out", type=Path, help="output file (default: stdout)")

    return parser


# -- helpers -------------------------------------------------------------------


def _probe_overrides(args) -> dict:
    out = {}
    if getattr(args, "probe_max_epochs", None) is not None:
        out["max_epochs"] = args.probe_max_epochs
    if getattr(args, "probe_patience", None) is not None:
        out["patience"] = args.probe_patience
    return out


def _experiment_spec(args, representations=(), **kwargs) -> exp.ExperimentSpec:
    overrides = _probe_overrides(args)
    codec_overrides = {}
    if getattr(args, "codec_max_epochs", None) is not None:
        codec_overrides["max_epochs"] = args.codec_max_epochs
    return exp.ExperimentSpec(
        manifest_path=args.manifest,
        representations=tuple(representations),
        seed=args.seed,
        workers=args.workers,
        recurrent_overrides=dict(overrides),
        logistic_overrides=dict(overrides),
        codec_overrides=codec_overrides,
        **kwargs,
    )


def _provenance(seed: int, spec_hash: str) -> dict:
    return {"tool_version": __version__, "seed": seed, "spec_hash": spec_hash}


# -- synth ----------------------------------------------------------------------


def cmd_synth(args) -> int:
    overrides = {
        "num_phones": args.num_phones,
        "num_tones": args.num_tones,
        "dim": args.dim,
        "phone_spread": args.phone_spread,
        "tone_scale": args.tone_scale,
        "noise_scale": args.noise_scale,
        "tone_subspace_dim": args.tone_subspace_dim,
        "frames_per_segment": args.frames_per_segment,
        "segments_per_utterance": args.segments_per_utterance,
    }
    overrides = {k: v for k, v in overrides.items() if v is not None}
    if args.utterances is not None:
        if len(args.utterances) != 3:
            raise InvalidConfigError("--utterances needs TRAIN,VAL,TEST")
        overrides["num_utterances"] = dict(zip(SPLITS, args.utterances))
    base = {}
    if args.spec is not None:
        base = json.loads(args.spec.read_text(encoding="utf-8"))
    base.update(overrides)
    base["seed"] = args.seed
    spec = SyntheticSpec.from_dict(base)
    if spec.num_tones == 1:
        print("warning: num_tones=1 makes tone probing degenerate", file=sys.stderr)
    corpus = generate_synthetic_corpus(spec, args.out)
    print(f"seed: {spec.seed}")
    print(f"spec_hash: {content_hash(spec.to_dict())}")
    print(f"manifest: {corpus.manifest_path}")
    print(
        f"phone inventory: {len(corpus.vowel_labels)} vowels"
        f" + {len(corpus.consonant_labels)} consonants"
    )
    for split in SPLITS:
        s = corpus.stats[split]
        print(
            f"{split}: {s['utterances']} utterances, {s['segments']} segments "
            f"({s['vowel_segments']} vowels), {s['frames']} frames"
        )
        tones = ", ".join(f"{t}={n}" for t, n in sorted(s["tone_counts"].items()))
        print(f"  tone counts: {tones}")
    return EXIT_OK


# -- fit / quantise ----------------------------------------------------------------


def _budget_params(quantiser: str, budget: int) -> dict:
    if budget % 4 != 0 or budget % 10 != 0:
        raise InvalidConfigError("--budget must be divisible by 4 and 10")
    if quantiser == "classic" or quantiser == "mean_pooled":
        return {"k": budget}
    if quantiser == "vq":
        return {"num_levels": 1, "codes_per_level": budget}
    if quantiser == "rvq2":
        return {"num_levels": 2, "codes_per_level": budget // 2}
    if quantiser == "rvq4":
        return {"num_levels": 4, "codes_per_level": budget // 4}
    if quantiser == "svc":
        return {"k_frame": budget // 2, "k_segment": budget // 2}
    return {"k_phone": budget // 10, "k_residual": budget - budget // 10}


def _load_train_material(manifest_path: Path):
    manifest = load_manifest(manifest_path)
    train = split_dataset(manifest, "train")
    if not train.entries:
        raise ManifestError("manifest has no train split")
    frames, blocks = [], []
    for entry in train.entries:
        seq, segments = load_utterance(entry)
        frames.append(seq.frames)
        blocks.extend(
            seq.frames[s.start_frame : s.end_frame] for s in segments if s.is_vowel
        )
    return manifest, np.concatenate(frames), blocks


def cmd_fit(args) -> int:
    params = _budget_params(args.quantiser, args.budget)
    manifest, train_frames, vowel_blocks = _load_train_material(args.manifest)
    args.out_dir.mkdir(parents=True, exist_ok=True)
    seed = derive_seed(args.seed, "fit", args.quantiser)
    written: list[Path] = []
    if args.quantiser == "classic":
        cb = quantisers.fit_classic(train_frames, params["k"], seed=seed, workers=args.workers)
        written.append(args.out_dir / "classic.dsuc")
        kmeans_mod.save_codebook(cb, written[-1])
    elif args.quantiser == "mean_pooled":
        cb = quantisers.fit_mean_pooled(
            vowel_blocks, params["k"], seed=seed, workers=args.workers
        )
        written.append(args.out_dir / "mean_pooled.dsuc")
        kmeans_mod.save_codebook(cb, written[-1])
    elif args.quantiser == "svc":
        frame_cb, segment_cb = quantisers.fit_svc(
            train_frames,
            vowel_blocks,
            params["k_frame"],
            params["k_segment"],
            seed=seed,
            workers=args.workers,
        )
        for name, cb in (("svc_frame.dsuc", frame_cb), ("svc_segment.dsuc", segment_cb)):
            written.append(args.out_dir / name)
            kmeans_mod.save_codebook(cb, written[-1])
    elif args.quantiser in ("residual_frame", "residual_segmental"):
        variant = "frame" if args.quantiser == "residual_frame" else "segmental"
        phone_cb, residual_cb = quantisers.fit_residual(
            vowel_blocks,
            params["k_phone"],
            params["k_residual"],
            variant=variant,
            seed=seed,
            workers=args.workers,
        )
        for name, cb in (
            ("residual_phone.dsuc", phone_cb),
            ("residual_level2.dsuc", residual_cb),
        ):
            written.append(args.out_dir / name)
            kmeans_mod.save_codebook(cb, written[-1])
    else:  # vq / rvq2 / rvq4
        cfg = codec_mod.CodecConfig(
            input_dim=manifest.feature_dim,
            num_levels=params["num_levels"],
            codes_per_level=params["codes_per_level"],
            seed=seed,
        )
        val = split_dataset(manifest, "validation")
        if not val.entries:
            raise ManifestError("codec training needs a validation split")
        val_frames = np.concatenate([load_utterance(e)[0].frames for e in val.entries])
        warm = train_frames[: max(cfg.batch_size, 4 * cfg.codes_per_level)]
        codec_params = codec_mod.init_params(cfg, warm)
        codec_params, _ = codec_mod.train(codec_params, train_frames, val_frames, cfg)
        written.append(args.out_dir / f"{args.quantiser}.dsun")
        codec_mod.save_codec(codec_params, cfg, written[-1])
    print(f"seed: {args.seed}")
    for path in written:
        print(f"wrote: {path}")
    return EXIT_OK


def cmd_quantise(args) -> int:
    manifest = load_manifest(args.manifest)
    part = split_dataset(manifest, args.split)
    out: list[quantisers.QuantisedSequence] = []

    def need(path: Path | None, flag: str) -> Path:
        if path is None:
            raise InvalidConfigError(f"--{flag} is required for {args.quantiser}")
        return path

    if args.quantiser in ("vq", "rvq2", "rvq4"):
        params, cfg = codec_mod.load_codec(need(args.checkpoint, "checkpoint"))
        for entry in part.entries:
            seq, _ = load_utterance(entry)
            out.append(codec_mod.encode_to_units(params, seq, cfg))
    else:
        cb1 = kmeans_mod.load_codebook(need(args.codebook, "codebook"))
        if args.quantiser == "classic":
            for entry in part.entries:
                seq, _ = load_utterance(entry)
                out.append(quantisers.quantise_classic(cb1, seq, workers=args.workers))
        elif args.quantiser == "mean_pooled":
            for entry in part.entries:
                seq, segments = load_utterance(entry)
                blocks = [
                    seq.frames[s.start_frame : s.end_frame] for s in segments if s.is_vowel
                ]
                if blocks:
                    out.append(
                        quantisers.quantise_mean_pooled(
                            cb1, entry.utterance_id, blocks, workers=args.workers
                        )
                    )
        elif args.quantiser == "svc":
            cb2 = kmeans_mod.load_codebook(need(args.codebook2, "codebook2"))
            for entry in part.entries:
                seq, segments = load_utterance(entry)
                out.append(
                    quantisers.quantise_svc((cb1, cb2), seq, segments, workers=args.workers)
                )
        else:
            cb2 = kmeans_mod.load_codebook(need(args.codebook2, "codebook2"))
            variant = "frame" if args.quantiser == "residual_frame" else "segmental"
            for entry in part.entries:
                seq, segments = load_utterance(entry)
                if variant == "frame":
                    out.append(
                        quantisers.quantise_residual(
                            (cb1, cb2),
                            "frame",
                            seq=seq,
                            segments=segments,
                            workers=args.workers,
                        )
                    )
                else:
                    blocks = [
                        seq.frames[s.start_frame : s.end_frame]
                        for s in segments
                        if s.is_vowel
                    ]
                    if blocks:
                        out.append(
                            quantisers.quantise_residual(
                                (cb1, cb2),
                                "segmental",
                                utterance_id=entry.utterance_id,
                                segment_frames=blocks,
                                workers=args.workers,
                            )
                        )
    quantisers.write_units_tsv(out, args.out)
    print(f"seed: {args.seed}")
    print(f"wrote: {args.out} ({len(out)} utterances)")
    return EXIT_OK


# -- probe / compare / sweep / residual ----------------------------------------------


def cmd_probe(args) -> int:
    if args.representation == "latent":
        rep = exp.default_representations(args.budget)[0]
    else:
        rep = exp.representations_by_names([args.representation], args.budget)[1]
    spec = _experiment_spec(args, representations=[rep, exp.default_representations()[0]])
    row = exp.run_representation(spec, rep)
    args.out_dir.mkdir(parents=True, exist_ok=True)
    tasks = ("phone", "tone") if args.task == "both" else (args.task,)
    payload = {
        **_provenance(args.seed, spec.spec_hash()),
        "representation": row.representation,
        "levels": row.levels,
        "eval_segments": row.eval_segments,
        "f1": {t: getattr(row, f"{t}_f1") for t in tasks},
    }
    out_path = args.out_dir / f"probe_{row.representation}.json"
    out_path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    print(f"wrote: {out_path}")
    for t in tasks:
        print(f"{row.representation} {t} weighted_f1 = {getattr(row, f'{t}_f1'):.4f}")
    return EXIT_OK


def cmd_compare(args) -> int:
    if args.quantisers.strip() == "all":
        reps = exp.default_representations(args.budget)
    else:
        names = [n.strip() for n in args.quantisers.split(",") if n.strip()]
        reps = exp.representations_by_names(names, args.budget)
    spec = _experiment_spec(args, representations=reps, output_dir=args.out)
    table = exp.run_comparison(spec)
    report_md = render_comparison_markdown(table)
    (args.out / "report.md").write_text(report_md, encoding="utf-8")
    print(report_md)
    print(f"wrote: {args.out / 'comparison.csv'}")
    print(f"wrote: {args.out / 'report.md'}")
    return EXIT_OK


def cmd_sweep(args) -> int:
    spec = _experiment_spec(args, sweep_grid=args.grid, output_dir=args.out)
    exp.run_codebook_sweep(spec)
    print(f"wrote: {args.out / 'sweep.csv'}")
    print(f"wrote: {args.out / 'sweep_long.csv'}")
    return EXIT_OK


def cmd_residual(args) -> int:
    spec = _experiment_spec(
        args, residual_grid=args.grid, residual_codes=args.residual_codes, output_dir=args.out
    )
    exp.run_residual_analysis(spec)
    print(f"wrote: {args.out / 'residual.csv'}")
    return EXIT_OK


# -- report -----------------------------------------------------------------------


def _read_csv(path: Path) -> tuple[list[str], list[str], list[list[str]]]:
    """Returns (provenance comment lines, header fields, data rows)."""
    comments, header, rows = [], None, []
    for line in path.read_text(encoding="utf-8").splitlines():
        if not line.strip():
            continue
        if line.startswith("#"):
            comments.append(line)
            continue
        fields = line.split(",")
        if header is None:
            header = fields
        else:
            if len(fields) != len(header):
                raise InvalidConfigError(
                    f"{path}: row has {len(fields)} fields, expected {len(header)}"
                )
            rows.append(fields)
    if header is None:
        raise InvalidConfigError(f"{path}: no CSV header found")
    return comments, header, rows


def top2_tone_rows(tone_values: list[float]) -> set[int]:
    """Indices of the rows holding the two largest tone scores (stable on ties)."""
    order = sorted(range(len(tone_values)), key=lambda i: (-tone_values[i], i))
    return set(order[:2])


def render_comparison_markdown(table: exp.ResultTable) -> str:
    lines = [
        "# Quantiser comparison",
        "",
        f"- tool: dsu-quant {__version__}",
        f"- seed: {table.seed}",
        f"- spec_hash: {table.spec_hash}",
        "",
        "| Representation | Levels | Phone F1 | Tone F1 | Eval segments |",
        "|---|---|---|---|---|",
    ]
    bold = top2_tone_rows([r.tone_f1 for r in table.rows])
    for i, r in enumerate(table.rows):
        tone = f"**{r.tone_f1:.3f}**" if i in bold else f"{r.tone_f1:.3f}"
        levels = str(r.levels) if r.levels else "-"
        lines.append(
            f"| {r.representation} | {levels} | {r.phone_f1:.3f} | {tone} | {r.eval_segments} |"
        )
    lines.append("")
    lines.append("Bold marks the top-2 tone scores.")
    return "\n".join(lines) + "\n"


def _render_csv_table_markdown(title: str, header: list[str], rows: list[list[str]]) -> str:
    lines = [f"## {title}", "", "| " + " | ".join(header) + " |", "|" + "---|" * len(header)]
    if title == "comparison":
        try:
            tone_idx = header.index("tone_f1")
            bold = top2_tone_rows([float(r[tone_idx]) for r in rows])
        except (ValueError, IndexError):
            bold = set()
        for i, row in enumerate(rows):
            cells = list(row)
            if i in bold:
                cells[tone_idx] = f"**{cells[tone_idx]}**"
            lines.append("| " + " | ".join(cells) + " |")
    else:
        for row in rows:
            lines.append("| " + " | ".join(row) + " |")
    lines.append("")
    return "\n".join(lines)


def cmd_report(args) -> int:
    sections = []
    for path in args.inputs:
        comments, header, rows = _read_csv(path)
        sections.append((path.stem, comments, header, rows))
    if args.format == "csv":
        out_lines = []
        for name, comments, header, rows in sections:
            out_lines.append(f"# section: {name}")
            out_lines.extend(comments)
            out_lines.append(",".join(header))
            out_lines.extend(",".join(row) for row in rows)
        text = "\n".join(out_lines) + "\n"
    else:
        parts = [f"# Results report\n\n- tool: dsu-quant {__version__}\n"]
        for name, comments, header, rows in sections:
            for c in comments:
                parts.append(f"- `{c.lstrip('# ')}`" if c.strip("# ") else "")
            parts.append("")
            parts.append(_render_csv_table_markdown(name, header, rows))
        text = "\n".join(parts) + "\n"
    if args.out is not None:
        args.out.write_text(text, encoding="utf-8")
        print(f"wrote: {args.out}")
    else:
        print(text, end="")
    return EXIT_OK


# -- entry point --------------------------------------------------------------------


_HANDLERS = {
    "synth": cmd_synth,
    "fit": cmd_fit,
    "quantise": cmd_quantise,
    "probe": cmd_probe,
    "compare": cmd_compare,
    "sweep": cmd_sweep,
    "residual": cmd_residual,
    "report": cmd_report,
}


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )
    try:
        return _HANDLERS[args.command](args)
    except (InvalidConfigError, UnknownSplitError, json.JSONDecodeError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except DivergenceError as e:
        print(f"error: numerical divergence: {e}", file=sys.stderr)
        return EXIT_DIVERGENCE
    except RepresentationError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    except (
        FileFormatError,
        InvalidDataError,
        ManifestError,
        AlignmentError,
        FileNotFoundError,
        OSError,
    ) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_IO
    except DsuQuantError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
