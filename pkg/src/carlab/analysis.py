"""Evaluation metrics, worst-class reporting, and the generalization bound.

The weighted worst-class error is computed as the l1 operator norm of the
weighted confusion matrix so the definitional identity holds bit-for-bit.
The bound evaluator reports every quantity up to the universal constant of
the underlying concentration argument (set to 1 here); the probabilistic
population-vs-empirical relation is reported, never asserted.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np

from .confusion import (
    ClassWeighting,
    ConfusionMatrix,
    confusion_to_csv,
    hard_confusion,
    hard_margin_confusion,
)
from .data import LabeledDataset, split_head_medium_tail
from .errors import (
    InvalidRegimeError,
    NumericError,
    ParameterError,
    ReportError,
    UnsupportedModelError,
)
from .model import ModelParams, predict_logits, weight_norms
from .spectral import l1_operator_norm, power_iteration
from . import plots

__all__ = [
    "MetricsReport",
    "WorstClassReport",
    "BoundReport",
    "evaluate",
    "worst_class_report",
    "bound_eval",
    "heatmap_export",
]

log = logging.getLogger(__name__)

# converged power-iteration settings for report-side norms
_EVAL_ITERS = 20000
_EVAL_TOL = 1e-12


@dataclass(frozen=True)
class MetricsReport:
    per_class_accuracy: np.ndarray     # NaN for classes absent from the dataset
    overall_accuracy: float
    head_accuracy: Optional[float]
    medium_accuracy: Optional[float]
    tail_accuracy: Optional[float]
    worst_class_accuracy: float
    worst_class_index: int
    wce: float
    confusion: ConfusionMatrix

    @property
    def k(self) -> int:
        return self.per_class_accuracy.size

    def to_json_dict(self) -> dict:
        def clean(x):
            if x is None:
                return None
            x = float(x)
            return None if math.isnan(x) else x

        return {
            "overall_accuracy": clean(self.overall_accuracy),
            "per_class_accuracy": [clean(a) for a in self.per_class_accuracy],
            "head_accuracy": clean(self.head_accuracy),
            "medium_accuracy": clean(self.medium_accuracy),
            "tail_accuracy": clean(self.tail_accuracy),
            "worst_class_accuracy": clean(self.worst_class_accuracy),
            "worst_class_index": int(self.worst_class_index),
            "wce": clean(self.wce),
            "confusion": [[float(x) for x in row] for row in self.confusion.entries],
        }


def _group_mean(per_class: np.ndarray, members) -> Optional[float]:
    vals = [per_class[j] for j in members if not math.isnan(per_class[j])]
    return float(np.mean(vals)) if vals else None


def evaluate(
    model: ModelParams,
    ds: LabeledDataset,
    weights: ClassWeighting,
    head_min: int = 100,
    tail_max: int = 20,
    split_counts=None,
) -> MetricsReport:
    """Argmax metrics plus the weighted worst-class error on one dataset.

    ``split_counts`` lets the head/medium/tail partition follow the training
    counts when evaluating a balanced test set; it defaults to the counts of
    ``ds`` itself. Classes absent from ``ds`` get NaN accuracy and are
    excluded from the worst-class minimum with a warning.
    """
    if weights.k != ds.k:
        raise ParameterError(f"weighting has {weights.k} classes, dataset {ds.k}")
    logits = predict_logits(model, ds.features)
    preds = logits.argmax(axis=1)
    conf = hard_confusion(preds, ds.labels, ds.k)
    errors = conf.column_sums()
    per_class = 1.0 - errors
    for j in conf.absent_classes:
        per_class[j] = math.nan
        log.warning("class %d absent from evaluation set; accuracy undefined", j)
    present = [j for j in range(ds.k) if j not in conf.absent_classes]
    worst_idx = min(present, key=lambda j: (per_class[j], j))
    wce = l1_operator_norm(conf.entries @ weights.lambda_matrix())
    split = split_head_medium_tail(
        ds.class_counts if split_counts is None else split_counts,
        head_min=head_min,
        tail_max=tail_max,
    )
    return MetricsReport(
        per_class_accuracy=per_class,
        overall_accuracy=float((preds == ds.labels).mean()),
        head_accuracy=_group_mean(per_class, split.head),
        medium_accuracy=_group_mean(per_class, split.medium),
        tail_accuracy=_group_mean(per_class, split.tail),
        worst_class_accuracy=float(per_class[worst_idx]),
        worst_class_index=int(worst_idx),
        wce=wce,
        confusion=conf,
    )


@dataclass(frozen=True)
class WorstClassReport:
    worst_train: float
    worst_test: float
    wr: Optional[float]   # None marks 0/0-style undefined ratios

    def to_json_dict(self) -> dict:
        return {
            "worst_train": self.worst_train,
            "worst_test": self.worst_test,
            "wr": self.wr if self.wr is not None else "undefined",
        }


def worst_class_report(
    train_metrics: MetricsReport, test_metrics: MetricsReport
) -> WorstClassReport:
    """Worst-class ratio test/train; undefined (not 0) when train worst is 0."""
    if train_metrics.k != test_metrics.k:
        raise ReportError(
            f"reports cover {train_metrics.k} vs {test_metrics.k} classes"
        )
    wt = train_metrics.worst_class_accuracy
    we = test_metrics.worst_class_accuracy
    return WorstClassReport(
        worst_train=wt, worst_test=we, wr=None if wt == 0 else we / wt
    )


@dataclass(frozen=True)
class BoundReport:
    gamma: float
    delta: float
    m_min: int
    b_max: float
    nu: float
    spectral_term: float
    psi: float
    complexity_term: float
    per_class_bounds: np.ndarray
    valid: bool

    def to_json_dict(self) -> dict:
        return {
            "note": "all terms up to a universal constant (set to 1)",
            "gamma": self.gamma,
            "delta": self.delta,
            "m_min": self.m_min,
            "b_max": self.b_max,
            "nu": self.nu,
            "spectral_term": self.spectral_term,
            "psi": self.psi,
            "complexity_term": self.complexity_term,
            "per_class_bounds": [float(x) for x in self.per_class_bounds],
            "valid": self.valid,
        }


def bound_eval(
    model: ModelParams,
    ds: LabeledDataset,
    gamma: float,
    delta: float,
    weights: ClassWeighting,
) -> BoundReport:
    """Per-class error bounds from margin confusion plus a complexity term.

    The complexity term is
    sqrt( K / ((m_min - 8K) * gamma^2) * (psi + ln(n * m_min / delta)) ) with
    psi = B^2 n^2 h ln(nh) * prod_l ||W_l||_2^2 * sum_l ||W_l||_F^2/||W_l||_2^2,
    and each class-j bound is (sqrt(K)/lambda_j) * spectral_term + complexity.
    Requires m_min > 8K, else the regime is vacuous and an error is raised.
    """
    if model.biases is not None:
        raise UnsupportedModelError("bound evaluation requires a bias-free model")
    if gamma <= 0:
        raise ParameterError("gamma must be positive")
    if not 0.0 < delta < 1.0:
        raise ParameterError("delta must lie in (0, 1)")
    if weights.k != ds.k:
        raise ParameterError(f"weighting has {weights.k} classes, dataset {ds.k}")
    m_min = int(ds.class_counts.min())
    k = ds.k
    if m_min <= 8 * k:
        raise InvalidRegimeError(
            f"m_min={m_min} must exceed 8K={8 * k} for the bound to be non-vacuous"
        )
    norms = weight_norms(model)
    if any(s == 0.0 for s, _ in norms):
        raise NumericError("a layer has zero spectral norm; psi is undefined")
    prod_spec_sq = 1.0
    sum_ratio = 0.0
    for s, f in norms:
        prod_spec_sq *= s * s
        sum_ratio += (f * f) / (s * s)
    n, h, b = model.n, model.h, ds.b_max
    psi = b * b * n * n * h * math.log(n * h) * prod_spec_sq * sum_ratio
    complexity = math.sqrt(
        k / ((m_min - 8 * k) * gamma * gamma) * (psi + math.log(n * m_min / delta))
    )
    logits = predict_logits(model, ds.features)
    conf = hard_margin_confusion(logits, ds.labels, gamma, k)
    spectral_term = power_iteration(
        conf.entries @ weights.lambda_matrix(), _EVAL_ITERS, _EVAL_TOL
    ).sigma
    nu = math.sqrt(k)
    per_class = nu / weights.lambdas * spectral_term + complexity
    return BoundReport(
        gamma=float(gamma),
        delta=float(delta),
        m_min=m_min,
        b_max=ds.b_max,
        nu=nu,
        spectral_term=spectral_term,
        psi=psi,
        complexity_term=complexity,
        per_class_bounds=per_class,
        valid=True,
    )


def heatmap_export(c: ConfusionMatrix, class_subset, path) -> tuple[Path, Path]:
    """Render the selected confusion submatrix to SVG plus a companion CSV.

    Returns (svg_path, csv_path). The CSV carries the exact submatrix values
    and re-reads bit-identically.
    """
    subset = [int(j) for j in class_subset]
    if not subset:
        raise ParameterError("class subset is empty")
    if any(j < 0 or j >= c.k for j in subset):
        raise ParameterError(f"subset indices outside [0, {c.k})")
    if len(set(subset)) != len(subset):
        raise ParameterError("subset indices repeat")
    sub = c.entries[np.ix_(subset, subset)]
    svg_path = Path(path)
    csv_path = svg_path.with_suffix(".csv")
    try:
        plots.render_heatmap(sub, subset, svg_path)
        confusion_to_csv(
            ConfusionMatrix(k=len(subset), entries=sub), csv_path, class_ids=subset
        )
    except OSError as exc:
        raise OSError(f"failed writing heatmap to {svg_path}: {exc}") from exc
    return svg_path, csv_path
