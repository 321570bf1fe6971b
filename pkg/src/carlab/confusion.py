"""Confusion-matrix constructions: hard, margin, differentiable, and EMA.

All constructs share the same convention: entry (i, j) is the rate at which
class-j samples are (softly or hardly) attributed to rival class i, the
diagonal is exactly zero, and columns are normalized by the per-class sample
count of the batch or dataset at hand. Classes absent from a batch keep
all-zero columns and are flagged to the caller.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff
from .autodiff import (
    Tensor,
    add,
    constant,
    masked_softmax,
    matmul,
    mul,
    scale,
    shift,
    sigmoid,
    sub,
    transpose,
)
from .errors import (
    DegenerateClassError,
    DimensionError,
    EmptyBatchError,
    ParameterError,
)
from .spectral import spectral_norm_node

__all__ = [
    "ConfusionMatrix",
    "ClassWeighting",
    "EmaState",
    "hard_confusion",
    "hard_margin_confusion",
    "soft_confusion",
    "class_weights",
    "ema_update",
    "regularizer",
    "confusion_to_csv",
    "confusion_from_csv",
]


# row-wise softmax over all K entries: the ablation alternative to the
# masked variant, registered here because only this module needs it
def _fw_softmax_rows(inputs, ctx):
    x = inputs[0]
    if x.shape[1] < 2:
        raise DegenerateClassError("softmax needs at least 2 classes")
    m = x.max(axis=1, keepdims=True)
    e = np.exp(x - m)
    return e / e.sum(axis=1, keepdims=True)


def _bw_softmax_rows(inputs, value, ctx, g):
    s = (g * value).sum(axis=1, keepdims=True)
    return (value * (g - s),)


autodiff.register_op("softmax_rows", _fw_softmax_rows, _bw_softmax_rows)


@dataclass(frozen=True)
class ConfusionMatrix:
    """K x K zero-diagonal matrix of class-conditional misprediction rates."""

    k: int
    entries: np.ndarray
    absent_classes: tuple[int, ...] = ()

    def column_sums(self) -> np.ndarray:
        """Per-class conditional error rates."""
        return self.entries.sum(axis=0)


def _check_k(k: int) -> None:
    if k < 2:
        raise DegenerateClassError(f"need at least 2 classes, got k={k}")


def _class_index(labels, k: int) -> np.ndarray:
    labels = np.asarray(labels, dtype=np.intp)
    if labels.ndim != 1:
        raise DimensionError("labels must be a flat index array")
    if labels.size and (labels.min() < 0 or labels.max() >= k):
        raise ParameterError(f"labels outside [0, {k})")
    return labels


def hard_confusion(predictions, labels, k: int) -> ConfusionMatrix:
    """Empirical confusion rates from argmax predictions."""
    _check_k(k)
    predictions = _class_index(predictions, k)
    labels = _class_index(labels, k)
    if predictions.shape != labels.shape:
        raise DimensionError("predictions and labels differ in length")
    counts = np.zeros((k, k))
    np.add.at(counts, (predictions, labels), 1.0)
    np.fill_diagonal(counts, 0.0)
    per_class = np.bincount(labels, minlength=k).astype(np.float64)
    present = per_class > 0
    entries = np.zeros((k, k))
    entries[:, present] = counts[:, present] / per_class[present]
    absent = tuple(int(j) for j in np.flatnonzero(~present))
    return ConfusionMatrix(k=k, entries=entries, absent_classes=absent)


def hard_margin_confusion(logits, labels, gamma: float, k: int) -> ConfusionMatrix:
    """Margin confusion: a sample counts against its strongest rival when the
    true-class logit fails to beat that rival by more than ``gamma``.

    Ties in the rival argmax break toward the smallest index, and the margin
    test is non-strict (an exact tie at ``gamma`` counts as confused).
    """
    _check_k(k)
    if gamma < 0:
        raise ParameterError("gamma must be >= 0")
    logits = np.asarray(logits, dtype=np.float64)
    labels = _class_index(labels, k)
    if logits.ndim != 2 or logits.shape != (labels.size, k):
        raise DimensionError(f"expected logits of shape ({labels.size}, {k})")
    counts = np.zeros((k, k))
    masked = logits.copy()
    masked[np.arange(labels.size), labels] = -np.inf
    rivals = masked.argmax(axis=1)
    confused = logits[np.arange(labels.size), labels] <= gamma + logits[
        np.arange(labels.size), rivals
    ]
    np.add.at(counts, (rivals[confused], labels[confused]), 1.0)
    per_class = np.bincount(labels, minlength=k).astype(np.float64)
    present = per_class > 0
    entries = np.zeros((k, k))
    entries[:, present] = counts[:, present] / per_class[present]
    absent = tuple(int(j) for j in np.flatnonzero(~present))
    return ConfusionMatrix(k=k, entries=entries, absent_classes=absent)


def soft_confusion(
    logits: Tensor,
    labels,
    gamma: float,
    k: int,
    softmax_mode: str = "masked",
) -> tuple[Tensor, tuple[int, ...]]:
    """Differentiable batch confusion estimate as a K x K graph tensor.

    Per sample of true class j, rival i receives
    ``sigmoid(gamma + f[i] - f[j]) * softargmax(f - f[j])[i]`` where the soft
    argmax excludes j from the normalization (``softmax_mode="masked"``,
    the default) or runs over all classes (``"full"``, for ablation). The
    diagonal is forced to exactly zero either way. Returns the tensor and the
    indices of classes absent from the batch (whose columns are zero).
    """
    _check_k(k)
    if gamma < 0:
        raise ParameterError("gamma must be >= 0")
    if softmax_mode not in ("masked", "full"):
        raise ParameterError(f"unknown softmax mode {softmax_mode!r}")
    labels = _class_index(labels, k)
    m = labels.size
    if m == 0:
        raise EmptyBatchError("soft confusion over an empty batch")
    if logits.shape != (m, k):
        raise DimensionError(f"expected logits of shape ({m}, {k}), got {logits.shape}")

    ones_row_k = constant(np.ones((1, k)))
    acc = None
    for j in range(k):
        rows = np.flatnonzero(labels == j)
        if rows.size == 0:
            continue
        mj = rows.size
        select = np.zeros((mj, m))
        select[np.arange(mj), rows] = 1.0
        block = matmul(constant(select), logits)               # mj x K
        true_col = matmul(block, constant(np.eye(k)[:, j : j + 1]))
        shifted = sub(block, matmul(true_col, ones_row_k))     # f - f[j]
        gate = sigmoid(shift(shifted, gamma))
        if softmax_mode == "masked":
            soft = masked_softmax(shifted, j)
        else:
            soft = autodiff._apply("softmax_rows", (shifted,))
        col = scale(matmul(constant(np.ones((1, mj))), mul(gate, soft)), 1.0 / mj)
        contrib = matmul(transpose(col), constant(np.eye(k)[j : j + 1, :]))
        acc = contrib if acc is None else add(acc, contrib)
    off_diagonal = constant(np.ones((k, k)) - np.eye(k))
    result = mul(acc, off_diagonal)
    absent = tuple(int(j) for j in range(k) if not np.any(labels == j))
    return result, absent


@dataclass(frozen=True)
class ClassWeighting:
    """Per-class weights (m_j + r0)^(-1/2) amplifying rare classes."""

    r0: float
    frequencies: np.ndarray
    lambdas: np.ndarray
    mode: str = "frequency"

    @property
    def k(self) -> int:
        return self.lambdas.size

    def lambda_matrix(self) -> np.ndarray:
        return np.diag(self.lambdas)


def class_weights(frequencies, r0: float, mode: str = "frequency") -> ClassWeighting:
    """Weights from per-class relative frequencies (default) or raw counts."""
    if r0 <= 0:
        raise ParameterError("r0 must be positive")
    if mode not in ("frequency", "count"):
        raise ParameterError(f"unknown weight mode {mode!r}")
    freqs = np.asarray(frequencies, dtype=np.float64)
    if freqs.ndim != 1 or freqs.size < 1:
        raise DimensionError("frequencies must be a flat non-empty array")
    if np.any(freqs < 0):
        raise ParameterError("frequencies must be non-negative")
    if mode == "frequency" and abs(freqs.sum() - 1.0) > 1e-9:
        raise ParameterError(f"frequencies must sum to 1, got {freqs.sum()!r}")
    lam = 1.0 / np.sqrt(freqs + r0)
    return ClassWeighting(r0=float(r0), frequencies=freqs, lambdas=lam, mode=mode)


@dataclass(frozen=True)
class EmaState:
    """Exponentially smoothed confusion estimate with its momentum and step."""

    c_hat: np.ndarray
    beta: float
    step: int = 0

    @staticmethod
    def initial(k: int, beta: float) -> "EmaState":
        if not 0.0 <= beta < 1.0:
            raise ParameterError("beta must lie in [0, 1)")
        return EmaState(c_hat=np.zeros((k, k)), beta=float(beta), step=0)


def ema_update(
    state: EmaState,
    batch_soft: Tensor,
    absent: tuple[int, ...] = (),
    mode: str = "literal",
) -> tuple[EmaState, Tensor]:
    """Advance the EMA with one batch estimate.

    Returns the new state and a graph node equal to
    ``beta * const(C_prev) + (1 - beta) * batch_soft``: gradients flow only
    through the current batch term, and the stored state is the detached
    numeric value of that node. In ``"hold"`` mode the columns of classes
    absent from the batch keep their previous value instead of decaying.
    """
    if mode not in ("literal", "hold"):
        raise ParameterError(f"unknown absent-column mode {mode!r}")
    k = state.c_hat.shape[0]
    if batch_soft.shape != (k, k):
        raise DimensionError(
            f"batch confusion shape {batch_soft.shape} does not match state ({k}, {k})"
        )
    history = state.beta * state.c_hat
    if mode == "hold" and absent:
        history = history.copy()
        history[:, list(absent)] = state.c_hat[:, list(absent)]
    node = add(scale(batch_soft, 1.0 - state.beta), constant(history))
    new_state = EmaState(
        c_hat=np.array(node.values), beta=state.beta, step=state.step + 1
    )
    return new_state, node


def regularizer(ema_node: Tensor, weights: ClassWeighting) -> Tensor:
    """Spectral norm of the weighted EMA confusion, ``||C_t Lambda||_2``.

    The weighting matrix enters as a constant: no gradient reaches it.
    """
    k = ema_node.shape[0]
    if weights.k != k:
        raise DimensionError(f"weighting has {weights.k} classes, confusion has {k}")
    if np.any(weights.lambdas <= 0):
        raise ParameterError("class weights must be positive")
    return spectral_norm_node(matmul(ema_node, constant(weights.lambda_matrix())))


def confusion_to_csv(matrix: ConfusionMatrix, path, class_ids=None) -> None:
    """Write entries as CSV: one header row of class ids, then K data rows
    of 17-significant-digit floats (lossless for float64)."""
    ids = list(range(matrix.k)) if class_ids is None else list(class_ids)
    lines = [",".join(str(i) for i in ids)]
    for row in matrix.entries:
        lines.append(",".join(f"{x:.17g}" for x in row))
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")


def confusion_from_csv(path) -> tuple[ConfusionMatrix, list[int]]:
    """Read a confusion CSV back; returns the matrix and its class ids."""
    with open(path, "r", encoding="utf-8") as fh:
        lines = [ln for ln in fh.read().splitlines() if ln]
    ids = [int(tok) for tok in lines[0].split(",")]
    entries = np.array(
        [[float(tok) for tok in ln.split(",")] for ln in lines[1:]], dtype=np.float64
    )
    k = entries.shape[0]
    if entries.shape != (k, len(ids)):
        raise DimensionError(f"malformed confusion CSV: {entries.shape}")
    return ConfusionMatrix(k=k, entries=entries), ids
