"""Shared plumbing: deterministic seeding, hashing, chunked parallel maps."""

from __future__ import annotations

import hashlib
import json
import os
from concurrent.futures import ThreadPoolExecutor
from typing import Any, Callable, TypeVar

import numpy as np

THREADS_ENV_VAR = "DSU_QUANT_THREADS"

# Fixed chunk size for row-partitioned reductions. Results must not depend
# on the worker count, so the chunk boundaries never change with it.
CHUNK_ROWS = 8192

_T = TypeVar("_T")


def worker_count(requested: int | None = None) -> int:
    """Resolve the worker count: explicit arg, else env cap, else cpu_count."""
    if requested is not None:
        return max(1, int(requested))
    env = os.environ.get(THREADS_ENV_VAR)
    if env is not None:
        try:
            return max(1, int(env))
        except ValueError:
            raise ValueError(f"{THREADS_ENV_VAR} must be an integer, got {env!r}")
    return os.cpu_count() or 1


def chunk_bounds(n: int, chunk: int = CHUNK_ROWS) -> list[tuple[int, int]]:
    return [(lo, min(lo + chunk, n)) for lo in range(0, n, chunk)]


def chunked_map(
    fn: Callable[[int, int], _T],
    n: int,
    workers: int | None = None,
    chunk: int = CHUNK_ROWS,
) -> list[_T]:
    """Apply ``fn(lo, hi)`` over fixed-size row chunks, results in chunk order.

    The chunk structure is independent of ``workers``, so any reduction over
    the returned list is bit-identical for 1 or many workers.
    """
    bounds = chunk_bounds(n, chunk)
    w = worker_count(workers)
    if w <= 1 or len(bounds) <= 1:
        return [fn(lo, hi) for lo, hi in bounds]
    with ThreadPoolExecutor(max_workers=w) as pool:
        return list(pool.map(lambda b: fn(*b), bounds))


def canonical_json(obj: Any) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), ensure_ascii=False)


def content_hash(obj: Any) -> str:
    """sha256 hex digest of the canonical JSON form of ``obj``."""
    return hashlib.sha256(canonical_json(obj).encode("utf-8")).hexdigest()


def new_rng(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(seed))


def derive_seed(base: int, *path: int | str) -> int:
    """Deterministic child seed from a base seed and a counter path."""
    key = ":".join([str(base), *map(str, path)])
    digest = hashlib.sha256(key.encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "little") & (2**63 - 1)
