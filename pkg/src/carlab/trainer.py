"""Training loop: cross entropy plus the weighted spectral confusion penalty.

Each step rebuilds a fresh tape, assembles CE + alpha * ||C_t Lambda||_2, and
applies one AdamW update. The confusion pipeline runs (and the EMA advances)
even when the penalty is disabled, so its value can be logged, but in that
case the penalty node is simply not connected to the loss root and the run is
step-for-step identical to plain cross-entropy training.
"""

from __future__ import annotations

from dataclasses import dataclass, field, asdict
from typing import NamedTuple, Optional

import numpy as np

from .autodiff import Graph, Tensor, add, backward, cross_entropy_mean, scale
from .confusion import (
    ClassWeighting,
    EmaState,
    class_weights,
    ema_update,
    regularizer,
    soft_confusion,
)
from .data import LabeledDataset, batch_iterator
from .errors import NumericError, ParameterError
from .model import ModelParams, forward, predict_logits
from .spectral import NODE_MAX_ITERS, NODE_TOL, power_iteration

__all__ = [
    "TrainConfig",
    "RunHistory",
    "StepRecord",
    "EpochRecord",
    "AdamState",
    "total_loss",
    "adamw_step",
    "train",
]


@dataclass
class TrainConfig:
    alpha: float = 0.5
    gamma: float = 0.1
    beta: float = 0.5
    r0: float = 0.2
    learning_rate: float = 1e-4
    weight_decay: float = 5e-4
    epochs: int = 10
    batch_size: int = 128
    seed: int = 0
    regularizer_on: bool = True
    weight_mode: str = "frequency"        # or "count"
    softmax_mode: str = "masked"          # or "full"
    absent_column_mode: str = "literal"   # or "hold"
    lr_schedule: str = "constant"         # or "cosine"
    track_reg_grad: bool = False

    def __post_init__(self):
        if self.alpha < 0:
            raise ParameterError("alpha must be >= 0")
        if self.gamma < 0:
            raise ParameterError("gamma must be >= 0")
        if not 0.0 <= self.beta < 1.0:
            raise ParameterError("beta must lie in [0, 1)")
        if self.r0 <= 0:
            raise ParameterError("r0 must be positive")
        if self.batch_size < 1:
            raise ParameterError("batch_size must be >= 1")
        if self.epochs < 0:
            raise ParameterError("epochs must be >= 0")
        if self.seed < 0:
            raise ParameterError("seed must be >= 0")
        if self.weight_mode not in ("frequency", "count"):
            raise ParameterError(f"unknown weight_mode {self.weight_mode!r}")
        if self.softmax_mode not in ("masked", "full"):
            raise ParameterError(f"unknown softmax_mode {self.softmax_mode!r}")
        if self.absent_column_mode not in ("literal", "hold"):
            raise ParameterError(f"unknown absent_column_mode {self.absent_column_mode!r}")
        if self.lr_schedule not in ("constant", "cosine"):
            raise ParameterError(f"unknown lr_schedule {self.lr_schedule!r}")

    @property
    def effective_alpha(self) -> float:
        return self.alpha if self.regularizer_on else 0.0

    def to_dict(self) -> dict:
        return asdict(self)

    @staticmethod
    def from_dict(d: dict) -> "TrainConfig":
        known = {f for f in TrainConfig.__dataclass_fields__}
        unknown = set(d) - known
        if unknown:
            raise ParameterError(f"unknown train config keys: {sorted(unknown)}")
        return TrainConfig(**d)


class LossParts(NamedTuple):
    ce: float
    reg: float
    ce_node: Tensor
    reg_node: Tensor


def total_loss(
    logits: Tensor,
    labels,
    ema: EmaState,
    weights: ClassWeighting,
    cfg: TrainConfig,
) -> tuple[Tensor, EmaState, LossParts]:
    """CE plus the weighted spectral penalty; advances the EMA either way.

    The penalty contributes to the returned scalar (and hence to gradients)
    only when ``cfg.regularizer_on`` and ``cfg.alpha > 0``.
    """
    soft, absent = soft_confusion(
        logits, labels, cfg.gamma, weights.k, softmax_mode=cfg.softmax_mode
    )
    new_ema, ema_node = ema_update(
        ema, soft, absent=absent, mode=cfg.absent_column_mode
    )
    reg = regularizer(ema_node, weights)
    ce = cross_entropy_mean(logits, labels)
    if cfg.regularizer_on and cfg.alpha > 0:
        loss = add(ce, scale(reg, cfg.alpha))
    else:
        loss = ce
    return loss, new_ema, LossParts(ce=ce.item(), reg=reg.item(), ce_node=ce, reg_node=reg)


@dataclass
class AdamState:
    m: list[np.ndarray]
    v: list[np.ndarray]
    t: int = 0

    @staticmethod
    def init(arrays: list[np.ndarray]) -> "AdamState":
        return AdamState(
            m=[np.zeros_like(a) for a in arrays],
            v=[np.zeros_like(a) for a in arrays],
        )


def adamw_step(
    arrays: list[np.ndarray],
    grads: list[np.ndarray],
    opt_state: AdamState,
    lr: float,
    weight_decay: float,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
) -> AdamState:
    """One in-place AdamW update with decoupled weight decay.

    The decay ``theta -= lr * wd * theta`` is applied separately from the
    bias-corrected adaptive step, so with zero gradients the parameters are
    scaled by exactly ``1 - lr * wd``.
    """
    if len(arrays) != len(grads):
        raise ParameterError("parameter and gradient counts differ")
    opt_state.t += 1
    bc1 = 1.0 - beta1 ** opt_state.t
    bc2 = 1.0 - beta2 ** opt_state.t
    for i, (theta, g) in enumerate(zip(arrays, grads)):
        if theta.shape != g.shape:
            raise ParameterError(f"gradient {i} shape {g.shape} vs parameter {theta.shape}")
        if not np.all(np.isfinite(g)):
            raise NumericError(f"non-finite gradient in parameter {i}", step=opt_state.t)
        opt_state.m[i] = beta1 * opt_state.m[i] + (1.0 - beta1) * g
        opt_state.v[i] = beta2 * opt_state.v[i] + (1.0 - beta2) * g * g
        m_hat = opt_state.m[i] / bc1
        v_hat = opt_state.v[i] / bc2
        theta *= 1.0 - lr * weight_decay
        theta -= lr * m_hat / (np.sqrt(v_hat) + eps)
    return opt_state


@dataclass(frozen=True)
class StepRecord:
    step: int
    ce_loss: float
    reg_value: float
    total_loss: float
    grad_norm: float
    reg_grad_norm: Optional[float] = None


@dataclass(frozen=True)
class EpochRecord:
    epoch: int
    per_class_accuracy: tuple[float, ...]
    overall_accuracy: float
    reg_snapshot: float


@dataclass
class RunHistory:
    steps: list[StepRecord] = field(default_factory=list)
    epochs: list[EpochRecord] = field(default_factory=list)

    def write_csv(self, path) -> None:
        lines = ["step,ce_loss,reg_value,total_loss,grad_norm,reg_grad_norm"]
        for r in self.steps:
            tail = "" if r.reg_grad_norm is None else f"{r.reg_grad_norm:.17g}"
            lines.append(
                f"{r.step},{r.ce_loss:.17g},{r.reg_value:.17g},"
                f"{r.total_loss:.17g},{r.grad_norm:.17g},{tail}"
            )
        with open(path, "w", encoding="utf-8") as fh:
            fh.write("\n".join(lines) + "\n")


def _epoch_seed(seed: int, epoch: int) -> int:
    return seed * 1_000_003 + epoch


def _weights_for(ds: LabeledDataset, cfg: TrainConfig) -> ClassWeighting:
    if cfg.weight_mode == "frequency":
        return class_weights(ds.frequencies(), cfg.r0, mode="frequency")
    return class_weights(ds.class_counts.astype(np.float64), cfg.r0, mode="count")


def _lr_at(cfg: TrainConfig, step: int, total_steps: int) -> float:
    if cfg.lr_schedule == "constant" or total_steps <= 1:
        return cfg.learning_rate
    frac = (step - 1) / max(total_steps - 1, 1)
    return cfg.learning_rate * 0.5 * (1.0 + np.cos(np.pi * frac))


def _reg_snapshot(ema: EmaState, weights: ClassWeighting) -> float:
    trip = power_iteration(ema.c_hat @ weights.lambda_matrix(), NODE_MAX_ITERS, NODE_TOL)
    return trip.sigma


def train(
    cfg: TrainConfig, model: ModelParams, ds: LabeledDataset
) -> tuple[ModelParams, RunHistory, EmaState]:
    """Run the full objective for cfg.epochs over ds; deterministic in cfg.seed.

    The input model is not mutated; the returned copy holds the trained
    weights. The class weighting is computed once from the training set
    before the loop. Aborts with a NumericError (carrying the step index and
    the partial history) if the loss leaves the finite range.
    """
    if ds.k < 2:
        raise ParameterError("training needs at least 2 classes")
    if model.k != ds.k or model.d != ds.d:
        raise ParameterError(
            f"model ({model.d} -> {model.k}) does not fit dataset ({ds.d} -> {ds.k})"
        )
    model = model.copy()
    weights = _weights_for(ds, cfg)
    ema = EmaState.initial(ds.k, cfg.beta)
    history = RunHistory()
    arrays = list(model.layers) + (list(model.biases) if model.biases else [])
    opt = AdamState.init(arrays)
    batches_per_epoch = (ds.m + cfg.batch_size - 1) // cfg.batch_size
    total_steps = cfg.epochs * batches_per_epoch
    step = 0
    for epoch in range(cfg.epochs):
        for batch in batch_iterator(ds, cfg.batch_size, _epoch_seed(cfg.seed, epoch)):
            step += 1
            graph = Graph()
            w_leaves = [graph.leaf(w) for w in model.layers]
            b_leaves = (
                [graph.leaf(b) for b in model.biases] if model.biases else None
            )
            logits = forward(graph, w_leaves, ds.features[batch], biases=b_leaves)
            loss, ema, parts = total_loss(logits, ds.labels[batch], ema, weights, cfg)
            if not np.isfinite(loss.item()):
                err = NumericError(f"loss became non-finite at step {step}", step=step)
                err.history = history
                raise err
            grads_map = backward(loss)
            leaves = w_leaves + (b_leaves or [])
            grads = [grads_map.wrt(leaf) for leaf in leaves]
            grad_norm = float(np.sqrt(sum(float((g * g).sum()) for g in grads)))
            reg_grad_norm = None
            if cfg.track_reg_grad:
                reg_grads = backward(parts.reg_node)
                reg_grad_norm = float(
                    np.sqrt(sum(float((reg_grads.wrt(leaf) ** 2).sum()) for leaf in leaves))
                )
            opt = adamw_step(
                arrays,
                grads,
                opt,
                lr=_lr_at(cfg, step, total_steps),
                weight_decay=cfg.weight_decay,
            )
            history.steps.append(
                StepRecord(
                    step=step,
                    ce_loss=parts.ce,
                    reg_value=parts.reg,
                    total_loss=parts.ce + cfg.effective_alpha * parts.reg,
                    grad_norm=grad_norm,
                    reg_grad_norm=reg_grad_norm,
                )
            )
        preds = predict_logits(model, ds.features).argmax(axis=1)
        per_class = np.zeros(ds.k)
        for j in range(ds.k):
            mask = ds.labels == j
            per_class[j] = float((preds[mask] == j).mean()) if mask.any() else float("nan")
        history.epochs.append(
            EpochRecord(
                epoch=epoch,
                per_class_accuracy=tuple(per_class),
                overall_accuracy=float((preds == ds.labels).mean()),
                reg_snapshot=_reg_snapshot(ema, weights),
            )
        )
    return model, history, ema
