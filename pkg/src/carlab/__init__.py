"""Desk-scale lab for confusion-aware spectral regularization.

Differentiable confusion-matrix surrogates, EMA smoothing, a spectral-norm
regularizer with its power-iteration backward, a bias-free MLP trainer on
long-tailed data, worst-class metrics, and a generalization-bound evaluator.
"""

from .analysis import (
    BoundReport,
    MetricsReport,
    WorstClassReport,
    bound_eval,
    evaluate,
    heatmap_export,
    worst_class_report,
)
from .autodiff import Graph, Tensor, backward, constant, grad_check
from .confusion import (
    ClassWeighting,
    ConfusionMatrix,
    EmaState,
    class_weights,
    ema_update,
    hard_confusion,
    hard_margin_confusion,
    regularizer,
    soft_confusion,
)
from .data import (
    LabeledDataset,
    LongTailProfile,
    batch_iterator,
    ingest_csv,
    export_csv,
    make_longtail_subset,
    split_head_medium_tail,
    synth_longtail_gaussians,
)
from .model import (
    ModelParams,
    forward,
    init_mlp,
    load_checkpoint,
    predict_logits,
    save_checkpoint,
    weight_norms,
)
from .spectral import (
    SingularTriplet,
    l1_operator_norm,
    power_iteration,
    spectral_norm_node,
    svd_oracle,
)
from .trainer import RunHistory, TrainConfig, adamw_step, total_loss, train

__version__ = "0.1.0"
