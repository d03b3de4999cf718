"""Deterministic K-means: k-means++ seeding, Lloyd iterations, empty-cluster
repair.

Centroids are stored float32 (matching feature storage) while all distance
and mean arithmetic accumulates in float64. Assignment ties break towards
the lowest centroid index. Reductions run over a fixed chunk structure so
codes and inertia are bit-identical for any worker count.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path
import numpy as np

from ._util import chunked_map, new_rng
from .errors import (
    BadMagicError,
    DimensionMismatchError,
    InsufficientDataError,
    InvalidConfigError,
    NonFiniteDataError,
    TruncatedFileError,
)

DSUC_MAGIC = b"DSUC"
DSUC_VERSION = 1


@dataclass(frozen=True)
class KMeansConfig:
    k: int
    max_iters: int = 100
    rel_tol: float = 1e-6
    seed: int = 42
    num_init_candidates: int = 1

    def __post_init__(self):
        if self.k < 1:
            raise InvalidConfigError("k must be >= 1")
        if self.max_iters < 1:
            raise InvalidConfigError("max_iters must be >= 1")
        if self.rel_tol < 0:
            raise InvalidConfigError("rel_tol must be >= 0")
        if self.num_init_candidates < 1:
            raise InvalidConfigError("num_init_candidates must be >= 1")


@dataclass(frozen=True)
class FitStats:
    final_inertia: float
    iterations_run: int
    inertia_trace: tuple[float, ...]


@dataclass(frozen=True)
class Codebook:
    centroids: np.ndarray  # (K, D) float32, read-only
    level_id: int = 0
    training_stats: FitStats | None = None

    def __post_init__(self):
        c = np.ascontiguousarray(np.asarray(self.centroids, dtype=np.float32))
        if c.ndim != 2 or c.shape[0] < 1:
            raise InvalidConfigError(f"centroids must be K x D with K >= 1, got {c.shape}")
        if not np.isfinite(c).all():
            raise NonFiniteDataError("non-finite centroid values")
        c.flags.writeable = False
        object.__setattr__(self, "centroids", c)

    @property
    def k(self) -> int:
        return self.centroids.shape[0]

    @property
    def dim(self) -> int:
        return self.centroids.shape[1]


def _as_2d_finite(data: np.ndarray, what: str = "data") -> np.ndarray:
    data = np.asarray(data)
    if data.ndim != 2:
        raise DimensionMismatchError(f"{what} must be 2-D, got shape {data.shape}")
    if not np.isfinite(data).all():
        raise NonFiniteDataError(f"non-finite values in {what}")
    return data


def _chunk_assign(
    chunk: np.ndarray, cents64: np.ndarray, cent_sq: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    """Nearest centroid per row of one chunk, float64 arithmetic."""
    x = chunk.astype(np.float64, copy=False)
    x_sq = np.einsum("ij,ij->i", x, x)
    d2 = x_sq[:, None] - 2.0 * (x @ cents64.T) + cent_sq[None, :]
    codes = np.argmin(d2, axis=1)
    best = d2[np.arange(len(codes)), codes]
    np.maximum(best, 0.0, out=best)
    return codes, best


def assign_batch(
    codebook: Codebook, data: np.ndarray, workers: int | None = None
) -> tuple[np.ndarray, float]:
    """Nearest-centroid codes for every row plus the summed squared distance.

    Element-wise equal to ``assign``; independent of worker count.
    """
    data = _as_2d_finite(data)
    if data.shape[1] != codebook.dim:
        raise DimensionMismatchError(
            f"data has dim {data.shape[1]}, codebook has dim {codebook.dim}"
        )
    cents64 = codebook.centroids.astype(np.float64)
    cent_sq = np.einsum("ij,ij->i", cents64, cents64)
    parts = chunked_map(
        lambda lo, hi: _chunk_assign(data[lo:hi], cents64, cent_sq), len(data), workers
    )
    codes = np.concatenate([p[0] for p in parts]) if parts else np.empty(0, dtype=np.int64)
    inertia = 0.0
    for _, best in parts:
        inertia += float(best.sum())
    return codes.astype(np.int64), inertia


def assign(codebook: Codebook, x: np.ndarray) -> tuple[int, np.ndarray]:
    """Code and centroid row for one vector; ties pick the lowest index."""
    x = np.asarray(x)
    if x.ndim != 1:
        raise DimensionMismatchError(f"expected a vector, got shape {x.shape}")
    codes, _ = assign_batch(codebook, x[None, :])
    code = int(codes[0])
    return code, codebook.centroids[code].copy()


def _min_sqdist_update(data: np.ndarray, centre: np.ndarray, min_d2: np.ndarray) -> None:
    x = data.astype(np.float64, copy=False)
    c = centre.astype(np.float64, copy=False)
    d2 = np.einsum("ij,ij->i", x, x) - 2.0 * (x @ c) + float(c @ c)
    np.maximum(d2, 0.0, out=d2)
    np.minimum(min_d2, d2, out=min_d2)


def kmeanspp_init(data: np.ndarray, config: KMeansConfig) -> np.ndarray:
    """k-means++ seeding: first centre uniform, the rest sampled proportional
    to the squared distance to the nearest chosen centre.

    With ``num_init_candidates > 1`` each step samples that many candidates
    and keeps the one minimising the resulting potential (greedy k-means++).
    """
    data = _as_2d_finite(data)
    n = data.shape[0]
    if n < config.k:
        raise InsufficientDataError(f"need at least k={config.k} points, got {n}")
    rng = new_rng(config.seed)
    chosen = [int(rng.integers(n))]
    min_d2 = np.full(n, np.inf)
    _min_sqdist_update(data, data[chosen[0]], min_d2)
    for _ in range(1, config.k):
        total = float(min_d2.sum())
        if total <= 0.0:
            # All remaining points duplicate a chosen centre; take the lowest
            # unchosen index to keep the selection deterministic.
            taken = np.zeros(n, dtype=bool)
            taken[chosen] = True
            idx = int(np.flatnonzero(~taken)[0])
            chosen.append(idx)
            continue
        cumulative = np.cumsum(min_d2)
        candidates = np.searchsorted(
            cumulative, rng.random(config.num_init_candidates) * total, side="right"
        )
        candidates = np.minimum(candidates, n - 1)
        if config.num_init_candidates == 1:
            best_idx = int(candidates[0])
        else:
            best_idx, best_pot = -1, np.inf
            for cand in sorted(set(int(c) for c in candidates)):
                trial = min_d2.copy()
                _min_sqdist_update(data, data[cand], trial)
                pot = float(trial.sum())
                if pot < best_pot:
                    best_idx, best_pot = cand, pot
        chosen.append(best_idx)
        _min_sqdist_update(data, data[best_idx], min_d2)
    return data[np.array(chosen)].astype(np.float32)


def _chunk_accumulate(
    chunk: np.ndarray, codes: np.ndarray, k: int
) -> tuple[np.ndarray, np.ndarray]:
    x = chunk.astype(np.float64, copy=False)
    counts = np.bincount(codes, minlength=k).astype(np.float64)
    sums = np.zeros((k, x.shape[1]))
    for d in range(x.shape[1]):
        sums[:, d] = np.bincount(codes, weights=x[:, d], minlength=k)
    return counts, sums


def fit(data: np.ndarray, config: KMeansConfig, workers: int | None = None) -> Codebook:
    """Lloyd iterations from a k-means++ start until ``max_iters`` or the
    relative inertia improvement drops below ``rel_tol``.

    Empty clusters are re-seeded each iteration to the point farthest from
    its assigned centroid (ascending cluster index). Deterministic given the
    seed, for any worker count.
    """
    data = _as_2d_finite(data)
    n, dim = data.shape
    if n < config.k:
        raise InsufficientDataError(f"need at least k={config.k} points, got {n}")
    centroids = kmeanspp_init(data, config)
    trace: list[float] = []
    iterations = 0
    for _ in range(config.max_iters):
        codes, inertia, min_d2 = _assign_with_distances(data, centroids, workers)
        trace.append(inertia)
        counts = np.bincount(codes, minlength=config.k)
        converged = (
            len(trace) >= 2
            and trace[-2] > 0.0
            and (trace[-2] - trace[-1]) <= config.rel_tol * trace[-2]
        ) or trace[-1] == 0.0
        if converged and not (counts == 0).any():
            break
        _repair_empty_clusters(data, centroids, codes, counts, min_d2)
        centroids = _update_means(data, codes, centroids, config.k, workers)
        iterations += 1
    else:
        # Ran out of iterations after an update: one final assignment so the
        # recorded inertia matches the returned centroids.
        codes, inertia, _ = _assign_with_distances(data, centroids, workers)
        trace.append(inertia)
    stats = FitStats(
        final_inertia=trace[-1], iterations_run=iterations, inertia_trace=tuple(trace)
    )
    return Codebook(centroids=centroids, level_id=0, training_stats=stats)


def _assign_with_distances(
    data: np.ndarray, centroids: np.ndarray, workers: int | None
) -> tuple[np.ndarray, float, np.ndarray]:
    cents64 = centroids.astype(np.float64)
    cent_sq = np.einsum("ij,ij->i", cents64, cents64)
    parts = chunked_map(
        lambda lo, hi: _chunk_assign(data[lo:hi], cents64, cent_sq), len(data), workers
    )
    codes = np.concatenate([p[0] for p in parts])
    dists = np.concatenate([p[1] for p in parts])
    inertia = 0.0
    for _, best in parts:
        inertia += float(best.sum())
    return codes.astype(np.int64), inertia, dists


def _repair_empty_clusters(
    data: np.ndarray,
    centroids: np.ndarray,
    codes: np.ndarray,
    counts: np.ndarray,
    min_d2: np.ndarray,
) -> None:
    """Re-seed empty clusters to the worst-represented point, in ascending
    cluster index; clusters emptied by a repair join the back of the queue."""
    queue = list(np.flatnonzero(counts == 0))
    if not queue:
        return
    counts = counts.copy()
    d2 = min_d2.copy()
    while queue:
        empty = int(queue.pop(0))
        point = int(np.argmax(d2))
        if d2[point] < 0:
            break  # fewer distinct points than clusters; leave as-is
        old = int(codes[point])
        codes[point] = empty
        centroids[empty] = data[point].astype(np.float32)
        counts[empty] += 1
        d2[point] = -1.0
        if old != empty:
            counts[old] -= 1
            if counts[old] == 0:
                queue.append(old)


def _update_means(
    data: np.ndarray,
    codes: np.ndarray,
    centroids: np.ndarray,
    k: int,
    workers: int | None,
) -> np.ndarray:
    parts = chunked_map(
        lambda lo, hi: _chunk_accumulate(data[lo:hi], codes[lo:hi], k), len(data), workers
    )
    counts = np.zeros(k)
    sums = np.zeros((k, data.shape[1]))
    for c, s in parts:  # fixed chunk order
        counts += c
        sums += s
    out = centroids.copy()
    nonzero = counts > 0
    out[nonzero] = (sums[nonzero] / counts[nonzero, None]).astype(np.float32)
    return out


# -- DSUC serialization -------------------------------------------------

_DSUC_HEADER = struct.Struct("<4sIIII")


def save_codebook(codebook: Codebook, path: str | Path) -> None:
    with open(path, "wb") as fh:
        fh.write(
            _DSUC_HEADER.pack(
                DSUC_MAGIC, DSUC_VERSION, codebook.k, codebook.dim, codebook.level_id
            )
        )
        fh.write(np.ascontiguousarray(codebook.centroids, dtype="<f4").tobytes())


def load_codebook(path: str | Path) -> Codebook:
    path = Path(path)
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < _DSUC_HEADER.size:
        raise TruncatedFileError(f"{path}: file shorter than the DSUC header")
    magic, version, k, dim, level_id = _DSUC_HEADER.unpack_from(raw)
    if magic != DSUC_MAGIC:
        raise BadMagicError(f"{path}: bad magic {magic!r}")
    if version != DSUC_VERSION:
        raise BadMagicError(f"{path}: unsupported DSUC version {version}")
    expected = _DSUC_HEADER.size + 4 * k * dim
    if len(raw) != expected:
        raise TruncatedFileError(f"{path}: expected {expected} bytes, found {len(raw)}")
    centroids = np.frombuffer(raw, dtype="<f4", offset=_DSUC_HEADER.size).reshape(k, dim)
    return Codebook(centroids=centroids.copy(), level_id=level_id, training_stats=None)
