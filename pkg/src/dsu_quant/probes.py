"""Probing classifiers over frozen representations.

A frame-based recurrent probe (single-layer LSTM, final hidden state into
task-specific linear heads) for sequence representations, and a multinomial
logistic probe for single-vector representations. Both train with
class-weighted cross-entropy, plain SGD and early stopping on validation
weighted F1, and are deterministic given the seed.

Probes accept continuous vectors only; integer code ids are rejected.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from ._util import derive_seed, new_rng
from .data import NULL_TONE
from .errors import (
    DivergenceError,
    InsufficientDataError,
    InvalidConfigError,
)

TASKS = ("phone", "tone")
PROBE_KINDS = ("recurrent", "logistic")
OPTIMISERS = ("adam", "sgd")

# Plain SGD needs impractically many epochs to null out the dominant
# phone-identity scatter when reading the small tone factor, so Adam is the
# default; SGD remains available.
_DEFAULT_LR = {
    ("recurrent", "adam"): 2e-3,
    ("logistic", "adam"): 1e-2,
    ("recurrent", "sgd"): 0.01,
    ("logistic", "sgd"): 0.05,
}


@dataclass(frozen=True)
class ProbeConfig:
    task: str
    probe_kind: str
    hidden_size: int = 128
    dropout: float = 0.3
    learning_rate: float | None = None
    optimiser: str = "adam"
    batch_size: int = 64
    max_epochs: int = 40
    patience: int = 5
    seed: int = 42
    dtype: str = "float32"

    def __post_init__(self):
        if self.task not in TASKS:
            raise InvalidConfigError(f"task must be one of {TASKS}")
        if self.probe_kind not in PROBE_KINDS:
            raise InvalidConfigError(f"probe_kind must be one of {PROBE_KINDS}")
        if self.optimiser not in OPTIMISERS:
            raise InvalidConfigError(f"optimiser must be one of {OPTIMISERS}")
        if not 0 <= self.dropout < 1:
            raise InvalidConfigError("dropout must be in [0, 1)")
        if self.hidden_size < 1 or self.batch_size < 1 or self.max_epochs < 1:
            raise InvalidConfigError("hidden_size, batch_size, max_epochs must be >= 1")
        if self.patience < 0:
            raise InvalidConfigError("patience must be >= 0")

    @property
    def lr(self) -> float:
        if self.learning_rate is not None:
            return self.learning_rate
        return _DEFAULT_LR[(self.probe_kind, self.optimiser)]

    @property
    def np_dtype(self):
        return np.dtype(self.dtype)


class _Optimiser:
    """Per-tensor SGD or Adam updates; state keyed by tensor name."""

    def __init__(self, kind: str, lr: float):
        self.kind = kind
        self.lr = lr
        self.state: dict[str, tuple[np.ndarray, np.ndarray]] = {}
        self.t = 0

    def begin_step(self) -> None:
        self.t += 1

    def update(self, name: str, tensor: np.ndarray, grad: np.ndarray) -> np.ndarray:
        if self.kind == "sgd":
            return tensor - (self.lr * grad).astype(tensor.dtype)
        beta1, beta2, eps = 0.9, 0.999, 1e-8
        if name not in self.state:
            self.state[name] = (np.zeros_like(tensor), np.zeros_like(tensor))
        m, v = self.state[name]
        m = beta1 * m + (1 - beta1) * grad
        v = beta2 * v + (1 - beta2) * grad * grad
        self.state[name] = (m, v)
        m_hat = m / (1 - beta1**self.t)
        v_hat = v / (1 - beta2**self.t)
        return tensor - (self.lr * m_hat / (np.sqrt(v_hat) + eps)).astype(tensor.dtype)


def _check_probe_input(arr: np.ndarray, what: str) -> np.ndarray:
    arr = np.asarray(arr)
    if not np.issubdtype(arr.dtype, np.floating):
        raise TypeError(
            f"{what} must be continuous (float) probe vectors, not {arr.dtype} code ids"
        )
    return arr


# -- datasets ---------------------------------------------------------------


@dataclass(frozen=True)
class VectorDataset:
    """Single vector per segment, one label per task column."""

    vectors: np.ndarray  # (N, D) float
    labels: tuple[str, ...]

    def __post_init__(self):
        vectors = _check_probe_input(self.vectors, "vectors")
        if vectors.ndim != 2 or vectors.shape[0] != len(self.labels):
            raise InvalidConfigError("vectors must be N x D aligned with labels")
        object.__setattr__(self, "vectors", vectors)
        object.__setattr__(self, "labels", tuple(self.labels))

    def __len__(self) -> int:
        return len(self.labels)


@dataclass(frozen=True)
class SequenceDataset:
    """Variable-length frame sequences with a phone and a tone label each."""

    sequences: tuple[np.ndarray, ...]
    phone_labels: tuple[str, ...]
    tone_labels: tuple[str, ...]

    def __post_init__(self):
        seqs = tuple(_check_probe_input(s, "sequence") for s in self.sequences)
        if not (len(seqs) == len(self.phone_labels) == len(self.tone_labels)):
            raise InvalidConfigError("sequences and labels must align")
        for s in seqs:
            if s.ndim != 2 or s.shape[0] < 1:
                raise InvalidConfigError("each sequence must be a non-empty L x D block")
        object.__setattr__(self, "sequences", seqs)
        object.__setattr__(self, "phone_labels", tuple(self.phone_labels))
        object.__setattr__(self, "tone_labels", tuple(self.tone_labels))

    def __len__(self) -> int:
        return len(self.sequences)

    def labels_for(self, task: str) -> tuple[str, ...]:
        return self.phone_labels if task == "phone" else self.tone_labels


def task_vector_dataset(
    vectors: np.ndarray, phone_labels: Sequence[str], tone_labels: Sequence[str], task: str
) -> VectorDataset:
    """Per-task view of segment vectors; the tone task drops null-tone rows."""
    if task == "phone":
        return VectorDataset(vectors=vectors, labels=tuple(phone_labels))
    keep = [i for i, t in enumerate(tone_labels) if t != NULL_TONE]
    return VectorDataset(
        vectors=np.asarray(vectors)[keep], labels=tuple(tone_labels[i] for i in keep)
    )


# -- metrics ----------------------------------------------------------------


@dataclass(frozen=True)
class ClassStats:
    label: str
    precision: float
    recall: float
    f1: float
    support: int


def class_weights(labels: Sequence[str]) -> dict[str, float]:
    """Inverse-frequency weights w_c = N / (C * count_c)."""
    if len(labels) == 0:
        raise InsufficientDataError("cannot compute class weights for an empty label list")
    counts: dict[str, int] = {}
    for lbl in labels:
        counts[lbl] = counts.get(lbl, 0) + 1
    if len(counts) == 1:
        warnings.warn("only one class present; class weights degenerate to 1.0")
        return {next(iter(counts)): 1.0}
    n, c = len(labels), len(counts)
    return {lbl: n / (c * cnt) for lbl, cnt in sorted(counts.items())}


def per_class_stats(y_true: Sequence[str], y_pred: Sequence[str]) -> list[ClassStats]:
    if len(y_true) != len(y_pred):
        raise ValueError(f"length mismatch: {len(y_true)} vs {len(y_pred)}")
    if len(y_true) == 0:
        raise ValueError("need at least one example")
    classes = sorted(set(y_true) | set(y_pred))
    stats = []
    for cls in classes:
        tp = sum(1 for t, p in zip(y_true, y_pred) if t == cls and p == cls)
        fp = sum(1 for t, p in zip(y_true, y_pred) if t != cls and p == cls)
        fn = sum(1 for t, p in zip(y_true, y_pred) if t == cls and p != cls)
        precision = tp / (tp + fp) if tp + fp > 0 else 0.0
        recall = tp / (tp + fn) if tp + fn > 0 else 0.0
        f1 = 2 * precision * recall / (precision + recall) if precision + recall > 0 else 0.0
        stats.append(
            ClassStats(label=cls, precision=precision, recall=recall, f1=f1, support=tp + fn)
        )
    return stats


def weighted_f1(y_true: Sequence[str], y_pred: Sequence[str]) -> float:
    """Per-class F1 averaged with weights proportional to true-label support."""
    stats = per_class_stats(y_true, y_pred)
    total = sum(s.support for s in stats)
    return sum(s.f1 * s.support for s in stats) / total


@dataclass(frozen=True)
class ProbeReport:
    task: str
    representation: str
    weighted_f1: float
    per_class: tuple[ClassStats, ...]
    num_eval_segments: int

    def __post_init__(self):
        total = sum(s.support for s in self.per_class)
        recomputed = sum(s.f1 * s.support for s in self.per_class) / total
        if abs(recomputed - self.weighted_f1) > 1e-9:
            raise InvalidConfigError("weighted_f1 inconsistent with per-class stats")

    def to_json(self) -> str:
        return json.dumps(
            {
                "task": self.task,
                "representation": self.representation,
                "weighted_f1": self.weighted_f1,
                "num_eval_segments": self.num_eval_segments,
                "per_class": [
                    {
                        "label": s.label,
                        "precision": s.precision,
                        "recall": s.recall,
                        "f1": s.f1,
                        "support": s.support,
                    }
                    for s in self.per_class
                ],
            },
            indent=2,
            sort_keys=True,
        )

    def per_class_csv(self) -> str:
        lines = ["label,precision,recall,f1,support"]
        for s in self.per_class:
            lines.append(f"{s.label},{s.precision:.6f},{s.recall:.6f},{s.f1:.6f},{s.support}")
        return "\n".join(lines) + "\n"


def report_from_predictions(
    task: str, representation: str, y_true: Sequence[str], y_pred: Sequence[str]
) -> ProbeReport:
    stats = per_class_stats(y_true, y_pred)
    return ProbeReport(
        task=task,
        representation=representation,
        weighted_f1=weighted_f1(y_true, y_pred),
        per_class=tuple(stats),
        num_eval_segments=len(y_true),
    )


# -- logistic probe -----------------------------------------------------------


@dataclass
class LogisticProbe:
    classes: tuple[str, ...]
    weights: np.ndarray  # (C, D)
    bias: np.ndarray  # (C,)

    def predict(self, vectors: np.ndarray) -> list[str]:
        x = _check_probe_input(vectors, "vectors").astype(self.weights.dtype)
        logits = x @ self.weights.T + self.bias
        return [self.classes[i] for i in np.argmax(logits, axis=1)]


def _softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


def logistic_loss_and_grads(
    weights: np.ndarray,
    bias: np.ndarray,
    x: np.ndarray,
    y_idx: np.ndarray,
    sample_weights: np.ndarray,
) -> tuple[float, np.ndarray, np.ndarray]:
    """Class-weighted softmax cross-entropy, normalised by the weight sum."""
    probs = _softmax(x @ weights.T + bias)
    denom = float(sample_weights.sum())
    picked = np.clip(probs[np.arange(len(y_idx)), y_idx], 1e-30, None)
    loss = float((sample_weights * -np.log(picked)).sum() / denom)
    dlogits = probs.copy()
    dlogits[np.arange(len(y_idx)), y_idx] -= 1.0
    dlogits *= (sample_weights / denom)[:, None]
    return loss, dlogits.T @ x, dlogits.sum(axis=0)


def train_logistic(
    train: VectorDataset, val: VectorDataset, config: ProbeConfig
) -> LogisticProbe:
    """Mini-batch SGD on class-weighted cross-entropy; early stopping on
    validation weighted F1. Weights start at zero (the problem is convex)."""
    classes = tuple(sorted(set(train.labels)))
    if len(classes) < 2:
        raise InsufficientDataError("logistic probe needs at least 2 classes in train")
    dtype = config.np_dtype
    cls_index = {c: i for i, c in enumerate(classes)}
    y = np.array([cls_index[lbl] for lbl in train.labels])
    w_map = class_weights(train.labels)
    sample_w = np.array([w_map[lbl] for lbl in train.labels], dtype=np.float64)
    x = train.vectors.astype(dtype)
    weights = np.zeros((len(classes), x.shape[1]), dtype=dtype)
    bias = np.zeros(len(classes), dtype=dtype)
    rng = new_rng(derive_seed(config.seed, "logistic"))
    opt = _Optimiser(config.optimiser, config.lr)
    best = (weights.copy(), bias.copy())
    best_f1 = -1.0
    stale = 0
    for epoch in range(config.max_epochs):
        perm = rng.permutation(len(x))
        for lo in range(0, len(x), config.batch_size):
            idx = perm[lo : lo + config.batch_size]
            loss, dw, db = logistic_loss_and_grads(weights, bias, x[idx], y[idx], sample_w[idx])
            if not np.isfinite(loss):
                raise DivergenceError(f"logistic probe diverged at epoch {epoch}")
            opt.begin_step()
            weights = opt.update("w", weights, dw.astype(dtype))
            bias = opt.update("b", bias, db.astype(dtype))
        probe = LogisticProbe(classes=classes, weights=weights, bias=bias)
        val_f1 = weighted_f1(list(val.labels), probe.predict(val.vectors))
        if val_f1 > best_f1:
            best_f1 = val_f1
            best = (weights.copy(), bias.copy())
            stale = 0
        else:
            stale += 1
            if stale > config.patience:
                break
    return LogisticProbe(classes=classes, weights=best[0], bias=best[1])


# -- recurrent probe ----------------------------------------------------------

# Gate slice order within the stacked 4H dimension.
_GATES = ("input", "forget", "cell", "output")


@dataclass
class RecurrentParams:
    wx: np.ndarray  # (4H, D)
    wh: np.ndarray  # (4H, H)
    b: np.ndarray  # (4H,)
    heads: dict[str, tuple[np.ndarray, np.ndarray]]  # task -> (W (C, H), b (C,))

    def copy(self) -> "RecurrentParams":
        return RecurrentParams(
            wx=self.wx.copy(),
            wh=self.wh.copy(),
            b=self.b.copy(),
            heads={t: (w.copy(), b.copy()) for t, (w, b) in self.heads.items()},
        )

    @property
    def hidden_size(self) -> int:
        return self.wh.shape[1]


@dataclass
class RecurrentProbe:
    """Jointly trained LSTM with per-task best-epoch snapshots."""

    classes: dict[str, tuple[str, ...]]
    snapshots: dict[str, RecurrentParams]
    history: list[dict] = field(default_factory=list)


def _sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def init_recurrent_params(
    input_dim: int, hidden: int, class_counts: dict[str, int], seed: int, dtype
) -> RecurrentParams:
    """Uniform(-1/sqrt(H), 1/sqrt(H)) recurrent weights, forget-gate bias 1,
    Glorot head weights."""
    rng = new_rng(derive_seed(seed, "recurrent-init"))
    k = 1.0 / np.sqrt(hidden)
    wx = rng.uniform(-k, k, size=(4 * hidden, input_dim)).astype(dtype)
    wh = rng.uniform(-k, k, size=(4 * hidden, hidden)).astype(dtype)
    b = np.zeros(4 * hidden, dtype=dtype)
    b[hidden : 2 * hidden] = 1.0  # forget gate
    heads = {}
    for task in sorted(class_counts):
        c = class_counts[task]
        limit = np.sqrt(6.0 / (c + hidden))
        heads[task] = (
            rng.uniform(-limit, limit, size=(c, hidden)).astype(dtype),
            np.zeros(c, dtype=dtype),
        )
    return RecurrentParams(wx=wx, wh=wh, b=b, heads=heads)


def _pad_batch(sequences: Sequence[np.ndarray], dtype) -> tuple[np.ndarray, np.ndarray]:
    lengths = [len(s) for s in sequences]
    t_max, dim = max(lengths), sequences[0].shape[1]
    x = np.zeros((len(sequences), t_max, dim), dtype=dtype)
    mask = np.zeros((len(sequences), t_max), dtype=dtype)
    for i, s in enumerate(sequences):
        x[i, : lengths[i]] = s
        mask[i, : lengths[i]] = 1.0
    return x, mask


def lstm_forward(
    params: RecurrentParams, x: np.ndarray, mask: np.ndarray
) -> tuple[np.ndarray, dict]:
    """Masked single-layer LSTM; returns the final hidden state per sequence
    (the state at each sequence's last real frame) and a cache for BPTT."""
    b_sz, t_max, _ = x.shape
    h_dim = params.hidden_size
    h = np.zeros((b_sz, h_dim), dtype=x.dtype)
    c = np.zeros((b_sz, h_dim), dtype=x.dtype)
    steps = []
    for t in range(t_max):
        xt = x[:, t]
        gates = xt @ params.wx.T + h @ params.wh.T + params.b
        i = _sigmoid(gates[:, :h_dim])
        f = _sigmoid(gates[:, h_dim : 2 * h_dim])
        g = np.tanh(gates[:, 2 * h_dim : 3 * h_dim])
        o = _sigmoid(gates[:, 3 * h_dim :])
        c_new = f * c + i * g
        tanh_c = np.tanh(c_new)
        h_new = o * tanh_c
        m = mask[:, t][:, None]
        steps.append(
            {"x": xt, "h_prev": h, "c_prev": c, "i": i, "f": f, "g": g, "o": o,
             "c_new": c_new, "tanh_c": tanh_c, "m": m}
        )
        h = m * h_new + (1.0 - m) * h
        c = m * c_new + (1.0 - m) * c
    return h, {"steps": steps, "h_final": h}


def lstm_backward(
    params: RecurrentParams, cache: dict, dh_final: np.ndarray
) -> dict[str, np.ndarray]:
    """Backpropagation through time for the masked LSTM."""
    h_dim = params.hidden_size
    dwx = np.zeros_like(params.wx)
    dwh = np.zeros_like(params.wh)
    db = np.zeros_like(params.b)
    dh = dh_final.copy()
    dc = np.zeros_like(dh_final)
    for step in reversed(cache["steps"]):
        m = step["m"]
        dh_new = dh * m
        dc_new = dc * m
        dh_pass = dh * (1.0 - m)
        dc_pass = dc * (1.0 - m)
        o, tanh_c = step["o"], step["tanh_c"]
        do = dh_new * tanh_c
        dc_new = dc_new + dh_new * o * (1.0 - tanh_c**2)
        i, f, g = step["i"], step["f"], step["g"]
        di = dc_new * g
        df = dc_new * step["c_prev"]
        dg = dc_new * i
        dc_prev = dc_new * f
        dgates = np.concatenate(
            [di * i * (1 - i), df * f * (1 - f), dg * (1 - g**2), do * o * (1 - o)], axis=1
        )
        dwx += dgates.T @ step["x"]
        dwh += dgates.T @ step["h_prev"]
        db += dgates.sum(axis=0)
        dh = dgates @ params.wh + dh_pass
        dc = dc_prev + dc_pass
    return {"wx": dwx, "wh": dwh, "b": db}


def _head_loss_and_grads(
    head: tuple[np.ndarray, np.ndarray],
    h: np.ndarray,
    y_idx: np.ndarray,
    sample_w: np.ndarray,
    active: np.ndarray,
) -> tuple[float, np.ndarray, np.ndarray, np.ndarray]:
    """Weighted-mean cross-entropy of one head over the active samples.

    Returns (loss, dW, db, dh). Inactive samples contribute nothing.
    """
    w_head, b_head = head
    denom = float(sample_w[active].sum())
    if denom <= 0:
        return 0.0, np.zeros_like(w_head), np.zeros_like(b_head), np.zeros_like(h)
    logits = h @ w_head.T + b_head
    probs = _softmax(logits)
    rows = np.flatnonzero(active)
    picked = np.clip(probs[rows, y_idx[rows]], 1e-30, None)
    loss = float((sample_w[rows] * -np.log(picked)).sum() / denom)
    dlogits = probs
    dlogits[rows, y_idx[rows]] -= 1.0
    scale = np.zeros(len(h))
    scale[rows] = sample_w[rows] / denom
    dlogits *= scale[:, None]
    return loss, dlogits.T @ h, dlogits.sum(axis=0), dlogits @ w_head


def recurrent_loss_and_grads(
    params: RecurrentParams,
    sequences: Sequence[np.ndarray],
    y_idx: dict[str, np.ndarray],
    sample_w: dict[str, np.ndarray],
    active: dict[str, np.ndarray],
    dropout_mask: np.ndarray | None,
    dtype,
) -> tuple[float, dict]:
    """Joint loss (sum over task heads) and gradients for every parameter.

    Pure: no updates. ``dropout_mask`` is the pre-scaled keep mask for the
    final hidden state, or None for evaluation-style forward.
    """
    x, mask = _pad_batch(list(sequences), dtype)
    h_final, cache = lstm_forward(params, x, mask)
    drop = dropout_mask if dropout_mask is not None else np.ones_like(h_final)
    h_drop = h_final * drop
    dh = np.zeros_like(h_final)
    loss = 0.0
    head_grads: dict[str, tuple[np.ndarray, np.ndarray]] = {}
    for task in sorted(params.heads):
        if task not in y_idx:
            continue
        l_t, dw, db, dh_t = _head_loss_and_grads(
            params.heads[task], h_drop, y_idx[task], sample_w[task], active[task]
        )
        loss += l_t
        head_grads[task] = (dw, db)
        dh += dh_t
    grads = lstm_backward(params, cache, (dh * drop).astype(dtype))
    grads["heads"] = head_grads
    return loss, grads


def train_recurrent(
    train: SequenceDataset, val: SequenceDataset, config: ProbeConfig
) -> RecurrentProbe:
    """Joint training of the shared LSTM and both task heads.

    Loss is the sum of the class-weighted cross-entropies of the phone and
    tone heads (null-tone segments are masked out of the tone term). Dropout
    applies to the final hidden state during training only. Early stopping
    tracks validation weighted F1 per task: each task keeps its own best
    snapshot, and training stops once every task has been stale for
    ``patience`` epochs.
    """
    if len(train) == 0 or len(val) == 0:
        raise InsufficientDataError("train and validation sets must be non-empty")
    dtype = config.np_dtype
    input_dim = train.sequences[0].shape[1]

    classes: dict[str, tuple[str, ...]] = {}
    y_idx: dict[str, np.ndarray] = {}
    sample_w: dict[str, np.ndarray] = {}
    active: dict[str, np.ndarray] = {}
    for task in TASKS:
        labels = train.labels_for(task)
        keep = np.array([lbl != NULL_TONE for lbl in labels]) if task == "tone" else np.ones(
            len(labels), dtype=bool
        )
        task_classes = tuple(sorted({lbl for lbl, k in zip(labels, keep) if k}))
        classes[task] = task_classes
        index = {c: i for i, c in enumerate(task_classes)}
        y_idx[task] = np.array([index.get(lbl, 0) for lbl in labels])
        if task_classes and keep.any():
            w_map = class_weights([lbl for lbl, k in zip(labels, keep) if k])
            sample_w[task] = np.array(
                [w_map.get(lbl, 0.0) if k else 0.0 for lbl, k in zip(labels, keep)]
            )
        else:
            sample_w[task] = np.zeros(len(labels))
        active[task] = keep & (sample_w[task] > 0)

    trainable = [t for t in TASKS if len(classes[t]) >= 2]
    if not trainable:
        raise InsufficientDataError("no task has at least 2 classes to train on")

    params = init_recurrent_params(
        input_dim,
        config.hidden_size,
        {t: max(len(classes[t]), 1) for t in TASKS if classes[t]},
        config.seed,
        dtype,
    )
    rng = new_rng(derive_seed(config.seed, "recurrent-train"))
    opt = _Optimiser(config.optimiser, config.lr)
    best: dict[str, RecurrentParams] = {t: params.copy() for t in params.heads}
    best_f1 = {t: -1.0 for t in trainable}
    stale = {t: 0 for t in trainable}
    history: list[dict] = []
    n = len(train)
    for epoch in range(config.max_epochs):
        perm = rng.permutation(n)
        epoch_loss = 0.0
        batches = 0
        for lo in range(0, n, config.batch_size):
            idx = perm[lo : lo + config.batch_size]
            if config.dropout > 0:
                keep_p = 1.0 - config.dropout
                drop = (
                    rng.random((len(idx), config.hidden_size)) < keep_p
                ).astype(dtype) / keep_p
            else:
                drop = None
            loss, grads = recurrent_loss_and_grads(
                params,
                [train.sequences[i] for i in idx],
                {t: y_idx[t][idx] for t in trainable},
                {t: sample_w[t][idx] for t in trainable},
                {t: active[t][idx] for t in trainable},
                drop,
                dtype,
            )
            if not np.isfinite(loss):
                raise DivergenceError(f"recurrent probe diverged at epoch {epoch}")
            opt.begin_step()
            params.wx = opt.update("wx", params.wx, grads["wx"].astype(dtype))
            params.wh = opt.update("wh", params.wh, grads["wh"].astype(dtype))
            params.b = opt.update("b", params.b, grads["b"].astype(dtype))
            for task, (dw, db_t) in grads["heads"].items():
                w_head, b_head = params.heads[task]
                params.heads[task] = (
                    opt.update(f"head_w_{task}", w_head, dw.astype(dtype)),
                    opt.update(f"head_b_{task}", b_head, db_t.astype(dtype)),
                )
            epoch_loss += loss
            batches += 1
        entry = {"epoch": epoch, "train_loss": epoch_loss / max(batches, 1)}
        for task in trainable:
            preds = _predict_recurrent(params, classes[task], task, val, config)
            truth = [
                lbl for lbl in val.labels_for(task) if task != "tone" or lbl != NULL_TONE
            ]
            f1 = weighted_f1(truth, preds) if truth else 0.0
            entry[f"val_f1_{task}"] = f1
            if f1 > best_f1[task]:
                best_f1[task] = f1
                best[task] = params.copy()
                stale[task] = 0
            else:
                stale[task] += 1
        history.append(entry)
        if all(stale[t] > config.patience for t in trainable):
            break
    return RecurrentProbe(classes=classes, snapshots=best, history=history)


def _predict_recurrent(
    params: RecurrentParams,
    task_classes: Sequence[str],
    task: str,
    data: SequenceDataset,
    config: ProbeConfig,
    batch_size: int = 256,
) -> list[str]:
    """Deterministic argmax predictions with dropout disabled; for the tone
    task, null-tone segments are skipped."""
    keep = [
        i
        for i, lbl in enumerate(data.labels_for(task))
        if task != "tone" or lbl != NULL_TONE
    ]
    w_head, b_head = params.heads[task]
    preds: list[str] = []
    for lo in range(0, len(keep), batch_size):
        chunk = keep[lo : lo + batch_size]
        x, mask = _pad_batch([data.sequences[i] for i in chunk], config.np_dtype)
        h_final, _ = lstm_forward(params, x, mask)
        logits = h_final @ w_head.T + b_head
        preds.extend(task_classes[i] for i in np.argmax(logits, axis=1))
    return preds


# -- evaluation ----------------------------------------------------------------


def evaluate(
    params: LogisticProbe | RecurrentProbe,
    test: VectorDataset | SequenceDataset,
    config: ProbeConfig,
    representation: str = "",
) -> ProbeReport:
    """Weighted-F1 report on the test set; dropout off, deterministic."""
    if len(test) == 0:
        raise InsufficientDataError("test set is empty")
    if isinstance(params, LogisticProbe):
        if not isinstance(test, VectorDataset):
            raise InvalidConfigError("logistic probes evaluate VectorDatasets")
        y_true = list(test.labels)
        y_pred = params.predict(test.vectors)
    else:
        if not isinstance(test, SequenceDataset):
            raise InvalidConfigError("recurrent probes evaluate SequenceDatasets")
        task = config.task
        snapshot = params.snapshots[task]
        y_true = [
            lbl for lbl in test.labels_for(task) if task != "tone" or lbl != NULL_TONE
        ]
        y_pred = _predict_recurrent(snapshot, params.classes[task], task, test, config)
    if not y_true:
        raise InsufficientDataError(f"no evaluable segments for task {config.task!r}")
    return report_from_predictions(config.task, representation, y_true, y_pred)


def save_report(report: ProbeReport, path: str | Path) -> None:
    Path(path).write_text(report.to_json() + "\n", encoding="utf-8")
