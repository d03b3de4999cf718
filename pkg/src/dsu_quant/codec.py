"""Minimal encoder-quantiser-decoder trained to reconstruct latent frames.

Single-codebook VQ or residual VQ (greedy per-level nearest centroid on the
running residual). The affine maps train by plain SGD through a
straight-through estimator; codebooks train by EMA over assigned encoder
outputs, never by gradient. ReLU is the pointwise nonlinearity, so an
identity-composition initialisation reconstructs exactly at init (up to
quantisation error) when hidden_dim >= 2 * code_dim.
"""

from __future__ import annotations

import json
import struct
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from . import kmeans
from ._util import canonical_json, derive_seed, new_rng
from .data import FeatureSequence
from .errors import (
    BadMagicError,
    DimensionMismatchError,
    DivergenceError,
    InsufficientDataError,
    InvalidConfigError,
    TruncatedFileError,
)
from .kmeans import KMeansConfig
from .quantisers import QuantisedSequence

DSUN_MAGIC = b"DSUN"
DSUN_VERSION = 1

PROBE_VECTOR_MODES = ("decoded", "centroid_sum")


@dataclass(frozen=True)
class CodecConfig:
    input_dim: int
    hidden_dim: int = 256
    num_levels: int = 1
    codes_per_level: int = 500
    commitment_weight: float = 0.25
    ema_decay: float = 0.99
    learning_rate: float = 1e-3
    batch_size: int = 256
    max_epochs: int = 25
    patience: int = 4
    seed: int = 42
    dead_code_threshold: float = 0.1
    probe_vector_mode: str = "decoded"

    def __post_init__(self):
        if self.input_dim < 1 or self.hidden_dim < 1:
            raise InvalidConfigError("input_dim and hidden_dim must be >= 1")
        if self.num_levels not in (1, 2, 4):
            raise InvalidConfigError("num_levels must be 1, 2 or 4")
        if self.codes_per_level < 1:
            raise InvalidConfigError("codes_per_level must be >= 1")
        if not 0 < self.learning_rate <= 1:
            raise InvalidConfigError("learning_rate must be in (0, 1]")
        if not 0 < self.ema_decay < 1:
            raise InvalidConfigError("ema_decay must be in (0, 1)")
        if self.commitment_weight < 0:
            raise InvalidConfigError("commitment_weight must be >= 0")
        if self.batch_size < 1 or self.max_epochs < 1 or self.patience < 0:
            raise InvalidConfigError("batch_size, max_epochs >= 1 and patience >= 0 required")
        if self.probe_vector_mode not in PROBE_VECTOR_MODES:
            raise InvalidConfigError(f"probe_vector_mode must be one of {PROBE_VECTOR_MODES}")

    @property
    def code_dim(self) -> int:
        return self.input_dim

    @property
    def total_codes(self) -> int:
        return self.num_levels * self.codes_per_level

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "CodecConfig":
        return cls(**d)


@dataclass
class CodecParams:
    """Affine maps, codebooks and the EMA accumulators backing them."""

    enc_w1: np.ndarray  # (H, D)
    enc_b1: np.ndarray  # (H,)
    enc_w2: np.ndarray  # (Dc, H)
    enc_b2: np.ndarray  # (Dc,)
    dec_w1: np.ndarray  # (H, Dc)
    dec_b1: np.ndarray  # (H,)
    dec_w2: np.ndarray  # (D, H)
    dec_b2: np.ndarray  # (D,)
    codebooks: list[np.ndarray]  # L x (K, Dc)
    ema_counts: list[np.ndarray]  # L x (K,)
    ema_sums: list[np.ndarray]  # L x (K, Dc)

    AFFINE_FIELDS = (
        "enc_w1",
        "enc_b1",
        "enc_w2",
        "enc_b2",
        "dec_w1",
        "dec_b1",
        "dec_w2",
        "dec_b2",
    )

    def copy(self) -> "CodecParams":
        return CodecParams(
            **{f: getattr(self, f).copy() for f in self.AFFINE_FIELDS},
            codebooks=[c.copy() for c in self.codebooks],
            ema_counts=[c.copy() for c in self.ema_counts],
            ema_sums=[s.copy() for s in self.ema_sums],
        )

    @property
    def dtype(self) -> np.dtype:
        return self.enc_w1.dtype


def _identity_affine(rows: int, cols: int, hidden: int, dtype) -> tuple[np.ndarray, np.ndarray]:
    """W_out (cols x hidden), W_in (hidden x rows) with relu(W_in x) recombined
    by W_out equal to x on the leading min(rows, cols) coordinates."""
    d = min(rows, cols)
    w_in = np.zeros((hidden, rows), dtype=dtype)
    w_out = np.zeros((cols, hidden), dtype=dtype)
    w_in[:d, :d] = np.eye(d, dtype=dtype)
    w_in[d : 2 * d, :d] = -np.eye(d, dtype=dtype)
    w_out[:d, :d] = np.eye(d, dtype=dtype)
    w_out[:d, d : 2 * d] = -np.eye(d, dtype=dtype)
    return w_in, w_out


def _glorot(rng: np.random.Generator, shape: tuple[int, int], dtype) -> np.ndarray:
    limit = np.sqrt(6.0 / (shape[0] + shape[1]))
    return rng.uniform(-limit, limit, size=shape).astype(dtype)


def init_params(
    config: CodecConfig,
    warmstart_frames: np.ndarray,
    seed: int | None = None,
    codebook_init: str = "kmeans",
    dtype=np.float32,
) -> CodecParams:
    """Deterministic initialisation.

    Affine maps compose to the identity when hidden_dim >= 2 * code_dim
    (seeded Glorot otherwise). Codebooks warm-start from K-means over the
    encoder outputs of ``warmstart_frames`` (greedily per level on the
    residuals); ``codebook_init="random"`` instead picks random rows of the
    same sample, for comparison.
    """
    if codebook_init not in ("kmeans", "random"):
        raise InvalidConfigError("codebook_init must be 'kmeans' or 'random'")
    seed = config.seed if seed is None else seed
    rng = new_rng(derive_seed(seed, "codec-init"))
    d, dc, h = config.input_dim, config.code_dim, config.hidden_dim
    if h >= 2 * dc and d == dc:
        enc_w1, enc_w2 = _identity_affine(d, dc, h, dtype)
        dec_w1, dec_w2 = _identity_affine(dc, d, h, dtype)
    else:
        enc_w1, enc_w2 = _glorot(rng, (h, d), dtype), _glorot(rng, (dc, h), dtype)
        dec_w1, dec_w2 = _glorot(rng, (h, dc), dtype), _glorot(rng, (d, h), dtype)
    params = CodecParams(
        enc_w1=enc_w1,
        enc_b1=np.zeros(h, dtype=dtype),
        enc_w2=enc_w2,
        enc_b2=np.zeros(dc, dtype=dtype),
        dec_w1=dec_w1,
        dec_b1=np.zeros(h, dtype=dtype),
        dec_w2=dec_w2,
        dec_b2=np.zeros(d, dtype=dtype),
        codebooks=[],
        ema_counts=[],
        ema_sums=[],
    )
    sample = np.asarray(warmstart_frames, dtype=dtype)
    if sample.ndim != 2 or sample.shape[1] != d:
        raise DimensionMismatchError(f"warmstart frames must be N x {d}")
    if sample.shape[0] < config.codes_per_level:
        raise InsufficientDataError(
            f"warm start needs >= {config.codes_per_level} frames, got {sample.shape[0]}"
        )
    residual = _encode(params, sample).astype(np.float64)
    for level in range(config.num_levels):
        if codebook_init == "kmeans":
            cb = kmeans.fit(
                residual.astype(np.float32),
                KMeansConfig(
                    k=config.codes_per_level,
                    max_iters=50,
                    rel_tol=1e-4,
                    seed=derive_seed(seed, "codec-codebook", level),
                ),
            )
            centroids = cb.centroids.astype(dtype)
        else:
            picks = rng.choice(sample.shape[0], size=config.codes_per_level, replace=False)
            centroids = residual[np.sort(picks)].astype(dtype)
        codes = _nearest(residual, centroids)
        counts = np.bincount(codes, minlength=config.codes_per_level).astype(dtype)
        counts = np.maximum(counts, 1.0)
        params.codebooks.append(centroids.copy())
        params.ema_counts.append(counts)
        params.ema_sums.append(centroids * counts[:, None])
        residual = residual - centroids[codes].astype(np.float64)
    return params


# -- quantisation ---------------------------------------------------------


def _nearest(z: np.ndarray, centroids: np.ndarray) -> np.ndarray:
    x = z.astype(np.float64, copy=False)
    c = centroids.astype(np.float64, copy=False)
    d2 = (
        np.einsum("ij,ij->i", x, x)[:, None]
        - 2.0 * (x @ c.T)
        + np.einsum("ij,ij->i", c, c)[None, :]
    )
    return np.argmin(d2, axis=1)


def _rvq_with_inputs(
    z: np.ndarray, codebooks: Sequence[np.ndarray]
) -> tuple[np.ndarray, np.ndarray, np.ndarray, list[np.ndarray]]:
    """Greedy per-level assignment; also returns each level's input residual
    (what its codebook rows should EMA towards)."""
    z = np.asarray(z)
    if z.ndim != 2 or z.shape[1] != codebooks[0].shape[1]:
        raise DimensionMismatchError(
            f"z must be N x {codebooks[0].shape[1]}, got {z.shape}"
        )
    n, levels = z.shape[0], len(codebooks)
    codes = np.empty((n, levels), dtype=np.int64)
    trace = np.empty((n, levels + 1))
    level_inputs: list[np.ndarray] = []
    residual = z.astype(np.float64)
    trace[:, 0] = np.linalg.norm(residual, axis=1)
    z_q = np.zeros_like(residual)
    for level, cb in enumerate(codebooks):
        level_inputs.append(residual.copy())
        idx = _nearest(residual, cb)
        chosen = cb[idx].astype(np.float64)
        codes[:, level] = idx
        z_q += chosen
        residual = residual - chosen
        trace[:, level + 1] = np.linalg.norm(residual, axis=1)
    return codes, z_q.astype(z.dtype), trace, level_inputs


def rvq_quantise_batch(
    z: np.ndarray, codebooks: Sequence[np.ndarray]
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Greedy per-level assignment on the running residual.

    Returns codes (N x L), the summed centroids z_q (N x Dc) and the trace of
    residual norms (N x (L+1)), starting at ||z||.
    """
    codes, z_q, trace, _ = _rvq_with_inputs(z, codebooks)
    return codes, z_q, trace


def rvq_quantise(
    z: np.ndarray, codebooks: Sequence[np.ndarray]
) -> tuple[list[int], np.ndarray, list[float]]:
    """Single-vector convenience wrapper around ``rvq_quantise_batch``."""
    z = np.asarray(z)
    if z.ndim != 1:
        raise DimensionMismatchError(f"expected a vector, got shape {z.shape}")
    codes, z_q, trace = rvq_quantise_batch(z[None, :], codebooks)
    return [int(c) for c in codes[0]], z_q[0], [float(t) for t in trace[0]]


# -- forward / backward ----------------------------------------------------


def _encode(params: CodecParams, x: np.ndarray) -> np.ndarray:
    h1 = np.maximum(x @ params.enc_w1.T + params.enc_b1, 0.0)
    return h1 @ params.enc_w2.T + params.enc_b2


def _decode(params: CodecParams, z_q: np.ndarray) -> np.ndarray:
    g1 = np.maximum(z_q @ params.dec_w1.T + params.dec_b1, 0.0)
    return g1 @ params.dec_w2.T + params.dec_b2


def st_decoder_input(z: np.ndarray, frozen_offset: np.ndarray) -> np.ndarray:
    """The straight-through decoder input: z plus a constant offset.

    At the point where ``frozen_offset = z_q - z`` was captured this equals
    z_q, while its Jacobian with respect to z is exactly the identity; the
    backward pass therefore copies the decoder-input gradient onto z.
    """
    return z + frozen_offset


def surrogate_loss(
    params: CodecParams,
    batch: np.ndarray,
    config: CodecConfig,
    frozen_offset: np.ndarray,
    frozen_zq: np.ndarray,
) -> float:
    """The loss actually differentiated by the backward pass: quantisation
    held frozen, so the straight-through path is an ordinary smooth function.

    Finite differences of this function reproduce the analytic gradients.
    """
    x = np.asarray(batch, dtype=params.dtype)
    z = _encode(params, x)
    recon = _decode(params, st_decoder_input(z, frozen_offset))
    rec_mse = float(np.mean((recon.astype(np.float64) - x) ** 2))
    com_mse = float(np.mean((z.astype(np.float64) - frozen_zq) ** 2))
    return rec_mse + config.commitment_weight * com_mse


def forward(
    params: CodecParams, batch: np.ndarray, config: CodecConfig
) -> tuple[np.ndarray, np.ndarray, dict]:
    """Pure forward pass: reconstruction, codes and the loss terms.

    loss = MSE(reconstruction, batch) + commitment_weight * MSE(z, z_q).
    """
    recon, codes, _, losses = _forward_cache(params, batch, config)
    return recon, codes, losses


def _forward_cache(params: CodecParams, batch: np.ndarray, config: CodecConfig):
    x = np.asarray(batch, dtype=params.dtype)
    if x.ndim != 2 or x.shape[1] != config.input_dim:
        raise DimensionMismatchError(f"batch must be B x {config.input_dim}, got {x.shape}")
    h1_pre = x @ params.enc_w1.T + params.enc_b1
    h1 = np.maximum(h1_pre, 0.0)
    z = h1 @ params.enc_w2.T + params.enc_b2
    codes, z_q, _, level_inputs = _rvq_with_inputs(z, params.codebooks)
    z_q = z_q.astype(params.dtype)
    st_offset = z_q - z
    z_dec = st_decoder_input(z, st_offset)
    g1_pre = z_dec @ params.dec_w1.T + params.dec_b1
    g1 = np.maximum(g1_pre, 0.0)
    recon = g1 @ params.dec_w2.T + params.dec_b2
    rec_mse = float(np.mean((recon.astype(np.float64) - x) ** 2))
    com_mse = float(np.mean((z.astype(np.float64) - z_q) ** 2))
    total = rec_mse + config.commitment_weight * com_mse
    if not np.isfinite(total):
        raise DivergenceError(
            f"non-finite loss (reconstruction={rec_mse}, commitment={com_mse})"
        )
    losses = {"total": total, "reconstruction": rec_mse, "commitment": com_mse}
    cache = {
        "x": x,
        "h1_pre": h1_pre,
        "h1": h1,
        "z": z,
        "codes": codes,
        "z_q": z_q,
        "st_offset": st_offset,
        "z_dec": z_dec,
        "level_inputs": level_inputs,
        "g1_pre": g1_pre,
        "g1": g1,
        "recon": recon,
    }
    return recon, codes, cache, losses


def _backward(params: CodecParams, cache: dict, config: CodecConfig) -> dict[str, np.ndarray]:
    """Gradients of the total loss for the affine parameters.

    The straight-through estimator copies the decoder-input gradient onto the
    encoder output; codebooks receive no gradient.
    """
    x, z, z_q = cache["x"], cache["z"], cache["z_q"]
    n_rec = cache["recon"].size
    n_com = z.size
    drecon = (2.0 / n_rec) * (cache["recon"] - x)
    grads: dict[str, np.ndarray] = {}
    grads["dec_w2"] = drecon.T @ cache["g1"]
    grads["dec_b2"] = drecon.sum(axis=0)
    dg1 = drecon @ params.dec_w2
    dg1_pre = dg1 * (cache["g1_pre"] > 0)
    grads["dec_w1"] = dg1_pre.T @ cache["z_dec"]
    grads["dec_b1"] = dg1_pre.sum(axis=0)
    dz = dg1_pre @ params.dec_w1  # straight-through: identity to z
    dz = dz + (2.0 * config.commitment_weight / n_com) * (z - z_q)
    grads["enc_w2"] = dz.T @ cache["h1"]
    grads["enc_b2"] = dz.sum(axis=0)
    dh1 = dz @ params.enc_w2
    dh1_pre = dh1 * (cache["h1_pre"] > 0)
    grads["enc_w1"] = dh1_pre.T @ x
    grads["enc_b1"] = dh1_pre.sum(axis=0)
    return grads


def ema_update(params: CodecParams, cache: dict, config: CodecConfig) -> None:
    """EMA step towards the level-input residuals assigned to each code.

    Rows with EMA count above ``dead_code_threshold`` are set to
    ema_sum / ema_count exactly.
    """
    gamma = config.ema_decay
    for level, cb in enumerate(params.codebooks):
        codes = cache["codes"][:, level]
        inputs = cache["level_inputs"][level]
        k = cb.shape[0]
        n = np.bincount(codes, minlength=k).astype(np.float64)
        s = np.zeros((k, cb.shape[1]))
        for dim in range(cb.shape[1]):
            s[:, dim] = np.bincount(codes, weights=inputs[:, dim], minlength=k)
        counts = gamma * params.ema_counts[level].astype(np.float64) + (1 - gamma) * n
        sums = gamma * params.ema_sums[level].astype(np.float64) + (1 - gamma) * s
        params.ema_counts[level] = counts.astype(params.dtype)
        params.ema_sums[level] = sums.astype(params.dtype)
        alive = params.ema_counts[level] > config.dead_code_threshold
        cb[alive] = (
            params.ema_sums[level][alive] / params.ema_counts[level][alive, None]
        ).astype(params.dtype)


def train_step(params: CodecParams, batch: np.ndarray, config: CodecConfig) -> dict:
    _, _, cache, losses = _forward_cache(params, batch, config)
    grads = _backward(params, cache, config)
    lr = config.learning_rate
    for name in CodecParams.AFFINE_FIELDS:
        tensor = getattr(params, name)
        tensor -= (lr * grads[name]).astype(params.dtype)
    ema_update(params, cache, config)
    return losses


def validation_mse(params: CodecParams, frames: np.ndarray, config: CodecConfig) -> float:
    total, count = 0.0, 0
    for lo in range(0, len(frames), 4096):
        x = frames[lo : lo + 4096]
        recon, _, _ = forward(params, x, config)
        total += float(np.sum((recon.astype(np.float64) - x) ** 2))
        count += x.size
    return total / count


def _reseed_dead_codes(
    params: CodecParams, sample: np.ndarray, config: CodecConfig, rng: np.random.Generator
) -> list[int]:
    """Re-seed codebook rows whose EMA count fell below the threshold to
    random encoder-output residuals from ``sample``."""
    z = _encode(params, sample).astype(np.float64)
    reseeded = []
    for level, cb in enumerate(params.codebooks):
        codes = _nearest(z, cb)
        chosen = cb[codes].astype(np.float64)
        dead = np.flatnonzero(params.ema_counts[level] < config.dead_code_threshold)
        for row in dead:
            pick = int(rng.integers(len(z)))
            cb[row] = z[pick].astype(params.dtype)
            params.ema_counts[level][row] = 1.0
            params.ema_sums[level][row] = cb[row]
        reseeded.append(len(dead))
        z = z - chosen
    return reseeded


def train(
    params: CodecParams,
    train_frames: np.ndarray,
    val_frames: np.ndarray,
    config: CodecConfig,
) -> tuple[CodecParams, list[dict]]:
    """Mini-batch SGD with early stopping on validation reconstruction MSE.

    Deterministic given the seed: batches follow a seeded permutation per
    epoch, evaluated single-threaded. Returns the best-validation snapshot
    and a per-epoch log; the first log entry echoes the configuration.
    """
    train_frames = np.asarray(train_frames, dtype=params.dtype)
    val_frames = np.asarray(val_frames, dtype=params.dtype)
    if train_frames.size == 0 or val_frames.size == 0:
        raise InsufficientDataError("training and validation splits must be non-empty")
    rng = new_rng(derive_seed(config.seed, "codec-train"))
    log: list[dict] = [{"event": "config", "config": config.to_dict()}]
    best = params.copy()
    best_mse = validation_mse(params, val_frames, config)
    log.append({"event": "initial", "val_mse": best_mse})
    stale = 0
    n = len(train_frames)
    for epoch in range(config.max_epochs):
        perm = rng.permutation(n)
        epoch_losses = np.zeros(3)
        batches = 0
        for lo in range(0, n, config.batch_size):
            batch = train_frames[perm[lo : lo + config.batch_size]]
            try:
                losses = train_step(params, batch, config)
            except DivergenceError as e:
                raise DivergenceError(f"epoch {epoch}, batch {batches}: {e}") from e
            epoch_losses += (losses["total"], losses["reconstruction"], losses["commitment"])
            batches += 1
        sample_idx = rng.choice(n, size=min(n, 2048), replace=False)
        reseeded = _reseed_dead_codes(params, train_frames[np.sort(sample_idx)], config, rng)
        val_mse = validation_mse(params, val_frames, config)
        log.append(
            {
                "event": "epoch",
                "epoch": epoch,
                "train_total": epoch_losses[0] / batches,
                "train_reconstruction": epoch_losses[1] / batches,
                "train_commitment": epoch_losses[2] / batches,
                "val_mse": val_mse,
                "dead_codes_reseeded": reseeded,
            }
        )
        if val_mse < best_mse:
            best_mse = val_mse
            best = params.copy()
            stale = 0
        else:
            stale += 1
            if stale > config.patience:
                log.append({"event": "early_stop", "epoch": epoch, "best_val_mse": best_mse})
                break
    log.append({"event": "done", "best_val_mse": best_mse})
    return best, log


# -- inference -------------------------------------------------------------


def encode_to_units(
    params: CodecParams, seq: FeatureSequence, config: CodecConfig
) -> QuantisedSequence:
    """Frame-level codes over all levels; the probe vector is the decoded
    reconstruction (or the raw centroid sum with probe_vector_mode
    "centroid_sum")."""
    if seq.dim != config.input_dim:
        raise DimensionMismatchError(f"sequence dim {seq.dim} != codec dim {config.input_dim}")
    x = seq.frames.astype(params.dtype)
    z = _encode(params, x)
    codes, z_q, _ = rvq_quantise_batch(z, params.codebooks)
    if config.probe_vector_mode == "decoded":
        probe = _decode(params, z_q.astype(params.dtype))
    else:
        probe = z_q
    level_vectors = tuple(
        params.codebooks[level][codes[:, level]].astype(np.float32)
        for level in range(len(params.codebooks))
    )
    return QuantisedSequence(
        utterance_id=seq.utterance_id,
        granularity="frame",
        codes=codes,
        probe_vectors=probe.astype(np.float32),
        level_vectors=level_vectors,
    )


# -- DSUN checkpoints --------------------------------------------------------

_DSUN_HEADER = struct.Struct("<4sII")


def _tensor_order(params: CodecParams) -> list[np.ndarray]:
    tensors = [getattr(params, f) for f in CodecParams.AFFINE_FIELDS]
    tensors.extend(params.codebooks)
    tensors.extend(params.ema_counts)
    tensors.extend(params.ema_sums)
    return tensors


def save_codec(params: CodecParams, config: CodecConfig, path: str | Path) -> None:
    blob = canonical_json(config.to_dict()).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(_DSUN_HEADER.pack(DSUN_MAGIC, DSUN_VERSION, len(blob)))
        fh.write(blob)
        for tensor in _tensor_order(params):
            fh.write(np.ascontiguousarray(tensor, dtype="<f4").tobytes())


def load_codec(path: str | Path) -> tuple[CodecParams, CodecConfig]:
    path = Path(path)
    raw = path.read_bytes()
    if len(raw) < _DSUN_HEADER.size:
        raise TruncatedFileError(f"{path}: file shorter than the DSUN header")
    magic, version, blob_len = _DSUN_HEADER.unpack_from(raw)
    if magic != DSUN_MAGIC:
        raise BadMagicError(f"{path}: bad magic {magic!r}")
    if version != DSUN_VERSION:
        raise BadMagicError(f"{path}: unsupported DSUN version {version}")
    offset = _DSUN_HEADER.size
    try:
        config = CodecConfig.from_dict(json.loads(raw[offset : offset + blob_len]))
    except (json.JSONDecodeError, TypeError) as e:
        raise BadMagicError(f"{path}: invalid config block ({e})")
    offset += blob_len
    d, dc, h = config.input_dim, config.code_dim, config.hidden_dim
    k, levels = config.codes_per_level, config.num_levels
    shapes = [(h, d), (h,), (dc, h), (dc,), (h, dc), (h,), (d, h), (d,)]
    shapes += [(k, dc)] * levels + [(k,)] * levels + [(k, dc)] * levels
    expected = offset + 4 * sum(int(np.prod(s)) for s in shapes)
    if len(raw) != expected:
        raise TruncatedFileError(f"{path}: expected {expected} bytes, found {len(raw)}")
    tensors = []
    for shape in shapes:
        size = int(np.prod(shape))
        tensors.append(
            np.frombuffer(raw, dtype="<f4", count=size, offset=offset).reshape(shape).copy()
        )
        offset += 4 * size
    params = CodecParams(
        *tensors[:8],
        codebooks=tensors[8 : 8 + levels],
        ema_counts=tensors[8 + levels : 8 + 2 * levels],
        ema_sums=tensors[8 + 2 * levels :],
    )
    return params, config
