"""Acceptance criteria A1-A8 on the default desk-scale corpus.

Each criterion prints one PASS/FAIL line (run with ``-s`` to see them live)
and appends it to acceptance_report.txt in the session tmp directory. The
heavyweight fixtures (corpus, double comparison run, sweep, residual grid)
are session-scoped and shared across criteria.
"""

import os
import time

import numpy as np
import pytest

from dsu_quant import codec as codec_mod
from dsu_quant import experiment as exp
from dsu_quant import probes as probes_mod
from dsu_quant import quantisers
from dsu_quant.data import (
    FeatureSequence,
    mean_pool_segment,
    save_feature_file,
    load_feature_file,
)
from dsu_quant.kmeans import (
    Codebook,
    KMeansConfig,
    assign_batch,
    fit,
    load_codebook,
    save_codebook,
)
from dsu_quant.synthetic import SyntheticSpec, generate_synthetic_corpus

SEED = 42


# -- reporting helper ----------------------------------------------------------


@pytest.fixture(scope="session")
def report_path(tmp_path_factory):
    path = tmp_path_factory.mktemp("acceptance") / "acceptance_report.txt"
    print(f"\nacceptance report: {path}")
    return path


def criterion(report_path, name, ok, detail):
    line = f"{name} {'PASS' if ok else 'FAIL'} - {detail}"
    print(line)
    with open(report_path, "a", encoding="utf-8") as fh:
        fh.write(line + "\n")
    assert ok, line


# -- shared fixtures -----------------------------------------------------------


@pytest.fixture(scope="session")
def corpus(tmp_path_factory):
    out = tmp_path_factory.mktemp("default_corpus")
    spec = SyntheticSpec(seed=SEED)
    generated = generate_synthetic_corpus(spec, out)
    vowels = {s: generated.stats[s]["vowel_segments"] for s in generated.stats}
    assert vowels["train"] >= 8000 and vowels["validation"] >= 1000 and vowels["test"] >= 1000
    return generated


def _experiment_spec(corpus, out_dir, workers):
    return exp.ExperimentSpec(
        manifest_path=corpus.manifest_path,
        representations=tuple(exp.default_representations(500)),
        output_dir=out_dir,
        seed=SEED,
        workers=workers,
    )


@pytest.fixture(scope="session")
def compare_runs(corpus, tmp_path_factory):
    """The full Table-1-style comparison, run once single-worker (timed) and
    once with two workers (rerun + worker-independence check)."""
    out1 = tmp_path_factory.mktemp("compare_w1")
    out2 = tmp_path_factory.mktemp("compare_w2")
    t0 = time.perf_counter()
    table1 = exp.run_comparison(_experiment_spec(corpus, out1, workers=1))
    elapsed1 = time.perf_counter() - t0
    t0 = time.perf_counter()
    table2 = exp.run_comparison(_experiment_spec(corpus, out2, workers=2))
    elapsed2 = time.perf_counter() - t0
    return {
        "table1": table1,
        "table2": table2,
        "elapsed1": elapsed1,
        "elapsed2": elapsed2,
        "csv1": (out1 / "comparison.csv").read_bytes(),
        "csv2": (out2 / "comparison.csv").read_bytes(),
    }


@pytest.fixture(scope="session")
def sweep_table(corpus, tmp_path_factory):
    spec = _experiment_spec(corpus, tmp_path_factory.mktemp("sweep"), workers=None)
    return exp.run_codebook_sweep(spec)


@pytest.fixture(scope="session")
def residual_table(corpus, tmp_path_factory):
    spec = _experiment_spec(corpus, tmp_path_factory.mktemp("residual"), workers=None)
    return exp.run_residual_analysis(spec)


# =============================================================================
# A7: invariant suite (fast, corpus-independent)
# =============================================================================


def _finite_difference_rel_error(loss_fn, tensors_and_grads, eps=1e-6):
    worst = 0.0
    for tensor, grad in tensors_and_grads:
        fd = np.zeros_like(tensor)
        it = np.nditer(tensor, flags=["multi_index"])
        while not it.finished:
            ix = it.multi_index
            orig = tensor[ix]
            tensor[ix] = orig + eps
            up = loss_fn()
            tensor[ix] = orig - eps
            down = loss_fn()
            tensor[ix] = orig
            fd[ix] = (up - down) / (2 * eps)
            it.iternext()
        rel = np.linalg.norm(grad - fd) / (np.linalg.norm(grad) + np.linalg.norm(fd) + 1e-12)
        worst = max(worst, rel)
    return worst


def test_a7_invariant_suite(report_path):
    t0 = time.perf_counter()
    rng = np.random.default_rng(1234)
    details = []

    # Lloyd monotonicity on 100 random instances.
    for trial in range(100):
        n = int(rng.integers(8, 50))
        d = int(rng.integers(1, 6))
        k = int(rng.integers(1, min(n, 8) + 1))
        data = rng.normal(size=(n, d)).astype(np.float32)
        cb = fit(data, KMeansConfig(k=k, seed=trial, max_iters=25))
        trace = np.array(cb.training_stats.inertia_trace)
        assert np.all(np.diff(trace) <= 1e-9), f"non-monotone trace in trial {trial}"
    details.append("lloyd x100")

    # assign vs brute force on 1000 random vectors: exact match.
    cb = Codebook(centroids=rng.normal(size=(41, 7)).astype(np.float32))
    data = rng.normal(size=(1000, 7)).astype(np.float32)
    codes, _ = assign_batch(cb, data)
    cents = cb.centroids.astype(np.float64)
    brute = np.array(
        [int(np.argmin([np.sum((x - c) ** 2) for c in cents])) for x in data.astype(np.float64)]
    )
    assert np.array_equal(codes, brute)
    details.append("assign oracle x1000")

    # weighted F1 vs exhaustive oracle on 500 random label sets: exact match.
    from test_probes import oracle_weighted_f1

    for _ in range(500):
        n_classes = int(rng.integers(1, 7))
        n = int(rng.integers(1, 51))
        y_true = [f"c{i}" for i in rng.integers(0, n_classes, n)]
        y_pred = [f"c{i}" for i in rng.integers(0, n_classes, n)]
        assert probes_mod.weighted_f1(y_true, y_pred) == pytest.approx(
            oracle_weighted_f1(y_true, y_pred), abs=1e-12
        )
    details.append("weighted-F1 oracle x500")

    # Logistic gradient vs central finite differences, <= 1e-4 relative.
    x = rng.normal(size=(5, 4))
    y = np.array([0, 1, 2, 1, 0])
    w = rng.normal(size=(3, 4))
    b = rng.normal(size=3)
    sw = rng.uniform(0.5, 2.0, size=5)
    _, dw, db = probes_mod.logistic_loss_and_grads(w, b, x, y, sw)
    rel = _finite_difference_rel_error(
        lambda: probes_mod.logistic_loss_and_grads(w, b, x, y, sw)[0], [(w, dw), (b, db)]
    )
    assert rel <= 1e-4, f"logistic gradient rel error {rel}"
    details.append(f"logistic grad {rel:.2e}")

    # Recurrent-probe gradient vs central finite differences, <= 1e-3 relative.
    params = probes_mod.init_recurrent_params(
        4, 3, {"phone": 2, "tone": 2}, seed=3, dtype=np.float64
    )
    sequences = [rng.normal(size=(2, 4)), rng.normal(size=(3, 4)), rng.normal(size=(1, 4))]
    y_idx = {"phone": np.array([0, 1, 0]), "tone": np.array([1, 0, 1])}
    sample_w = {"phone": np.ones(3), "tone": np.array([1.0, 1.2, 0.8])}
    active = {"phone": np.ones(3, bool), "tone": np.array([True, False, True])}

    def rec_loss():
        loss, _ = probes_mod.recurrent_loss_and_grads(
            params, sequences, y_idx, sample_w, active, None, np.float64
        )
        return loss

    _, grads = probes_mod.recurrent_loss_and_grads(
        params, sequences, y_idx, sample_w, active, None, np.float64
    )
    pairs = [
        (params.wx, grads["wx"]),
        (params.wh, grads["wh"]),
        (params.b, grads["b"]),
        (params.heads["phone"][0], grads["heads"]["phone"][0]),
        (params.heads["phone"][1], grads["heads"]["phone"][1]),
        (params.heads["tone"][0], grads["heads"]["tone"][0]),
        (params.heads["tone"][1], grads["heads"]["tone"][1]),
    ]
    rel = _finite_difference_rel_error(rec_loss, pairs)
    assert rel <= 1e-3, f"recurrent gradient rel error {rel}"
    details.append(f"recurrent grad {rel:.2e}")

    # Straight-through Jacobian identity via JVP, <= 1e-4.
    z = rng.normal(size=(4, 6))
    offset = rng.normal(size=(4, 6))
    v = rng.normal(size=(4, 6))
    eps = 1e-6
    jvp = (
        codec_mod.st_decoder_input(z + eps * v, offset)
        - codec_mod.st_decoder_input(z - eps * v, offset)
    ) / (2 * eps)
    assert np.abs(jvp - v).max() <= 1e-4
    details.append("straight-through JVP")

    # SVC fusion is exactly the midpoint.
    frame_cb = Codebook(centroids=rng.normal(size=(6, 5)).astype(np.float32))
    seg_cb = Codebook(centroids=rng.normal(size=(4, 5)).astype(np.float32), level_id=1)
    from dsu_quant.data import PhoneSegment

    frames = rng.normal(size=(9, 5)).astype(np.float32)
    segs = [
        PhoneSegment("u", 0, 4, "a", "T1", True),
        PhoneSegment("u", 4, 9, "o", "T2", True),
    ]
    q = quantisers.quantise_svc((frame_cb, seg_cb), FeatureSequence("u", frames), segs)
    fused = (
        frame_cb.centroids[q.codes[:, 0]] + seg_cb.centroids[q.codes[:, 1] - 1]
    ) / 2.0
    assert np.linalg.norm(q.probe_vectors - fused) == 0.0
    details.append("SVC midpoint")

    # Residual reconstruction error <= mean-pooled reconstruction error.
    blocks = [rng.normal(size=(int(rng.integers(2, 8)), 6)).astype(np.float32) for _ in range(300)]
    pooled = np.stack([mean_pool_segment(b) for b in blocks]).astype(np.float64)
    cbs = quantisers.fit_residual(blocks, 8, 24, variant="segmental", seed=5)
    qres = quantisers.quantise_residual(
        cbs, "segmental", utterance_id="u", segment_frames=blocks
    )
    residual_err = float(np.sum((pooled - qres.probe_vectors.astype(np.float64)) ** 2))
    l1_codes, _ = assign_batch(cbs[0], pooled.astype(np.float32))
    pooled_err = float(np.sum((pooled - cbs[0].centroids[l1_codes].astype(np.float64)) ** 2))
    assert residual_err <= pooled_err
    details.append("residual recon <= pooled recon")

    elapsed = time.perf_counter() - t0
    criterion(
        report_path,
        "A7",
        elapsed <= 300,
        f"invariant suite passed in {elapsed:.1f}s (<= 300s): {', '.join(details)}",
    )


# =============================================================================
# A8: format round-trips
# =============================================================================


def test_a8_format_round_trips(report_path, tmp_path):
    rng = np.random.default_rng(4321)
    count = 0

    # DSUF: 40 randomized shapes including T=1 / D=1.
    shapes = [(1, 1), (1, 5), (7, 1)] + [
        (int(rng.integers(1, 40)), int(rng.integers(1, 40))) for _ in range(37)
    ]
    for i, (t, d) in enumerate(shapes):
        frames = rng.normal(size=(t, d)).astype(np.float32)
        path = tmp_path / f"f{i}.dsuf"
        save_feature_file(FeatureSequence(f"f{i}", frames), path)
        blob = path.read_bytes()
        loaded = load_feature_file(path)
        assert loaded.frames.tobytes() == frames.tobytes()
        save_feature_file(loaded, path)
        assert path.read_bytes() == blob
        count += 1

    # DSUC: 40 randomized shapes including K=1 / D=1.
    shapes = [(1, 1), (1, 9), (6, 1)] + [
        (int(rng.integers(1, 50)), int(rng.integers(1, 20))) for _ in range(37)
    ]
    for i, (k, d) in enumerate(shapes):
        cb = Codebook(
            centroids=rng.normal(size=(k, d)).astype(np.float32), level_id=int(rng.integers(0, 4))
        )
        path = tmp_path / f"c{i}.dsuc"
        save_codebook(cb, path)
        blob = path.read_bytes()
        loaded = load_codebook(path)
        assert loaded.centroids.tobytes() == cb.centroids.tobytes()
        assert loaded.level_id == cb.level_id
        save_codebook(loaded, path)
        assert path.read_bytes() == blob
        count += 1

    # DSUN: 20 randomized configs including the smallest shapes.
    combos = [(1, 1, 1), (1, 2, 1)] + [
        (int(rng.integers(1, 10)), int(rng.choice([1, 2, 4])), int(rng.integers(1, 12)))
        for _ in range(18)
    ]
    for i, (d, levels, k) in enumerate(combos):
        cfg = codec_mod.CodecConfig(
            input_dim=d,
            hidden_dim=int(rng.integers(1, 20)),
            num_levels=levels,
            codes_per_level=k,
            seed=i,
        )
        frames = rng.normal(size=(max(k * 4, 16), d)).astype(np.float32)
        params = codec_mod.init_params(cfg, frames)
        path = tmp_path / f"n{i}.dsun"
        codec_mod.save_codec(params, cfg, path)
        blob = path.read_bytes()
        loaded_params, loaded_cfg = codec_mod.load_codec(path)
        assert loaded_cfg == cfg
        codec_mod.save_codec(loaded_params, loaded_cfg, path)
        assert path.read_bytes() == blob
        count += 1

    criterion(report_path, "A8", count == 100, f"{count} randomized save/load round-trips bit-exact")


# =============================================================================
# A1-A6: synthetic-experiment criteria
# =============================================================================


def test_a1_continuous_baseline_ceiling(report_path, compare_runs):
    row = compare_runs["table1"].row("latent")
    ok = row.phone_f1 >= 0.95 and row.tone_f1 >= 0.95 and row.train_time_s <= 600
    criterion(
        report_path,
        "A1",
        ok,
        f"latent phone={row.phone_f1:.4f} tone={row.tone_f1:.4f} (>= 0.95 each), "
        f"runtime {row.train_time_s:.0f}s (<= 600s)",
    )


def test_a2_tone_degradation_gap(report_path, compare_runs):
    latent = compare_runs["table1"].row("latent")
    classic = compare_runs["table1"].row("classic_kmeans_500")
    phone_ok = classic.phone_f1 >= latent.phone_f1 - 0.05
    tone_ok = classic.tone_f1 <= latent.tone_f1 - 0.10
    criterion(
        report_path,
        "A2",
        phone_ok and tone_ok,
        f"classic@500 phone={classic.phone_f1:.4f} (within 0.05 of {latent.phone_f1:.4f}), "
        f"tone={classic.tone_f1:.4f} (>= 0.10 below {latent.tone_f1:.4f})",
    )


def test_a3_residual_recovery(report_path, compare_runs, residual_table):
    classic = compare_runs["table1"].row("classic_kmeans_500")
    residual = compare_runs["table1"].row("residual_segmental_50+450")
    gap_ok = residual.tone_f1 >= classic.tone_f1 + 0.05
    by_point = {}
    for row in residual_table.rows:
        if row.task == "tone":
            by_point.setdefault(row.k_phone, {})[row.level] = row.f1
    levels_ok = all(levels[2] > levels[1] for levels in by_point.values())
    grid_ok = sorted(by_point) == [10, 25, 50, 100]
    detail_levels = ", ".join(
        f"K={k}: L1={v[1]:.3f} L2={v[2]:.3f}" for k, v in sorted(by_point.items())
    )
    criterion(
        report_path,
        "A3",
        gap_ok and levels_ok and grid_ok,
        f"residual tone={residual.tone_f1:.4f} vs classic {classic.tone_f1:.4f} (+0.05 needed); "
        f"L2>L1 tone at every K_phone: {detail_levels}",
    )


def test_a4_rvq_beats_flat_vq(report_path, compare_runs):
    vq = compare_runs["table1"].row("vq_500x1")
    rvq = compare_runs["table1"].row("rvq_125x4")
    mse_ok = rvq.extra["val_mse"] <= vq.extra["val_mse"]
    tone_ok = rvq.tone_f1 >= vq.tone_f1 - 0.02
    criterion(
        report_path,
        "A4",
        mse_ok and tone_ok,
        f"RVQ125x4 val MSE {rvq.extra['val_mse']:.6f} <= VQ500 {vq.extra['val_mse']:.6f}; "
        f"RVQ tone {rvq.tone_f1:.4f} >= VQ tone {vq.tone_f1:.4f} - 0.02",
    )


def test_a5_sweep_monotonicity(report_path, compare_runs, sweep_table):
    latent = compare_runs["table1"].row("latent")
    frame_rows = sorted(
        (r for r in sweep_table.rows if r.variant == "frame" and r.status == "ok"),
        key=lambda r: r.k,
    )
    ks = [r.k for r in frame_rows]
    tones = [r.tone_f1 for r in frame_rows]
    grid_ok = ks == [50, 100, 200, 500, 1000]
    mono_ok = all(b >= a - 0.02 for a, b in zip(tones, tones[1:]))
    below_ok = tones[-1] < latent.tone_f1
    criterion(
        report_path,
        "A5",
        grid_ok and mono_ok and below_ok,
        "classic tone by K " + ", ".join(f"{k}:{t:.3f}" for k, t in zip(ks, tones))
        + f"; non-decreasing within 0.02 and K=1000 below latent {latent.tone_f1:.4f}",
    )


def test_a6_full_compare_runtime_and_determinism(report_path, compare_runs):
    elapsed1 = compare_runs["elapsed1"]
    identical = compare_runs["csv1"] == compare_runs["csv2"]
    runtime_ok = elapsed1 <= 3600
    names1 = [r.representation for r in compare_runs["table1"].rows]
    complete = len(names1) == 9
    parts = [
        f"single-worker run {elapsed1:.0f}s (<= 3600s)",
        f"{len(names1)} rows",
        "CSV bit-identical across workers=1 vs workers=2 rerun" if identical else "CSV MISMATCH",
    ]
    ok = runtime_ok and identical and complete
    cpus = os.cpu_count() or 1
    if cpus >= 8:
        ok = ok and compare_runs["elapsed2"] <= 1200
        parts.append(f"8-worker-class run {compare_runs['elapsed2']:.0f}s (<= 1200s)")
    else:
        parts.append(f"multi-worker time bound not asserted ({cpus} CPU(s) available)")
    criterion(report_path, "A6", ok, "; ".join(parts))
