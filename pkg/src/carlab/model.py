"""Bias-free feedforward ReLU classifier with weight-norm accessors.

The network is a plain chain ``W_n relu(... relu(W_1 x))`` so that the
generalization-bound evaluator's hypothesis class matches exactly. Biases can
be enabled for experimentation but disable bound evaluation and checkpointing.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .autodiff import Graph, Tensor, add, constant, matmul, relu, transpose
from .errors import DimensionError, ParameterError, UnsupportedModelError
from .spectral import power_iteration

__all__ = [
    "ModelParams",
    "init_mlp",
    "forward",
    "predict_logits",
    "weight_norms",
    "save_checkpoint",
    "load_checkpoint",
]

CHECKPOINT_MAGIC = b"CARM"
CHECKPOINT_VERSION = 1


@dataclass
class ModelParams:
    """Ordered weight matrices W_1 (h x d), ..., W_n (K x h)."""

    layers: list[np.ndarray]
    n: int
    h: int
    d: int
    k: int
    seed: int = 0
    init_scheme: str = "uniform_fan"
    biases: Optional[list[np.ndarray]] = None

    def copy(self) -> "ModelParams":
        return ModelParams(
            layers=[w.copy() for w in self.layers],
            n=self.n,
            h=self.h,
            d=self.d,
            k=self.k,
            seed=self.seed,
            init_scheme=self.init_scheme,
            biases=None if self.biases is None else [b.copy() for b in self.biases],
        )


def _layer_shapes(n: int, h: int, d: int, k: int) -> list[tuple[int, int]]:
    if n == 1:
        return [(k, d)]
    shapes = [(h, d)]
    shapes += [(h, h)] * (n - 2)
    shapes.append((k, h))
    return shapes


def init_mlp(
    n: int, h: int, d: int, k: int, seed: int, with_biases: bool = False
) -> ModelParams:
    """Seeded uniform fan-based initialization, reproducible across runs."""
    if n < 1 or h < 1 or d < 1 or k < 2:
        raise ParameterError(f"invalid dimensions n={n} h={h} d={d} k={k}")
    rng = np.random.Generator(np.random.PCG64(seed))
    layers = []
    for rows, cols in _layer_shapes(n, h, d, k):
        bound = np.sqrt(6.0 / (cols + rows))
        layers.append(rng.uniform(-bound, bound, size=(rows, cols)))
    biases = [np.zeros((rows, 1)) for rows, _ in _layer_shapes(n, h, d, k)] if with_biases else None
    return ModelParams(layers=layers, n=n, h=h, d=d, k=k, seed=seed, biases=biases)


def forward(graph: Graph, params: list[Tensor], x, biases: Optional[list[Tensor]] = None) -> Tensor:
    """Graph-connected logits (m x K) for an input batch (m x d).

    ``params`` are the layer weights as leaf tensors on ``graph`` so the
    result is differentiable with respect to them.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2:
        raise DimensionError("input batch must be a 2-D array")
    if x.shape[1] != params[0].shape[1]:
        raise DimensionError(
            f"input dim {x.shape[1]} does not match first layer {params[0].shape}"
        )
    m = x.shape[0]
    z = matmul(params[0], transpose(constant(x)))
    if biases is not None:
        z = add(z, matmul(biases[0], constant(np.ones((1, m)))))
    for idx, w in enumerate(params[1:], start=1):
        z = matmul(w, relu(z))
        if biases is not None:
            z = add(z, matmul(biases[idx], constant(np.ones((1, m)))))
    return transpose(z)


def predict_logits(params: ModelParams, x) -> np.ndarray:
    """Plain-array logits, no graph; same arithmetic as :func:`forward`."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != params.d:
        raise DimensionError(f"expected input of shape (m, {params.d})")
    z = params.layers[0] @ x.T
    if params.biases is not None:
        z = z + params.biases[0]
    for idx, w in enumerate(params.layers[1:], start=1):
        z = w @ np.maximum(z, 0.0)
        if params.biases is not None:
            z = z + params.biases[idx]
    return z.T


def weight_norms(params: ModelParams) -> list[tuple[float, float]]:
    """(spectral, frobenius) per layer; spectral via converged power iteration."""
    out = []
    for w in params.layers:
        trip = power_iteration(w, max_iters=10000, tol=1e-12)
        out.append((trip.sigma, float(np.linalg.norm(w))))
    return out


def save_checkpoint(params: ModelParams, path) -> None:
    """Versioned binary layout; round-trips bit-exactly.

    Magic "CARM", then u32 version / n / h / d / K (little endian), then each
    layer's row-major float64 entries in order.
    """
    if params.biases is not None:
        raise UnsupportedModelError("checkpoint format does not cover biased models")
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(
            struct.pack(
                "<5I", CHECKPOINT_VERSION, params.n, params.h, params.d, params.k
            )
        )
        for w in params.layers:
            fh.write(np.ascontiguousarray(w, dtype="<f8").tobytes())


def load_checkpoint(path) -> ModelParams:
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:4] != CHECKPOINT_MAGIC:
        raise ParameterError(f"not a checkpoint file: {path}")
    version, n, h, d, k = struct.unpack_from("<5I", blob, 4)
    if version != CHECKPOINT_VERSION:
        raise ParameterError(f"unsupported checkpoint version {version}")
    offset = 4 + 20
    layers = []
    for rows, cols in _layer_shapes(n, h, d, k):
        count = rows * cols
        arr = np.frombuffer(blob, dtype="<f8", count=count, offset=offset).copy()
        layers.append(arr.reshape(rows, cols))
        offset += count * 8
    if offset != len(blob):
        raise ParameterError(f"checkpoint has {len(blob) - offset} trailing bytes")
    return ModelParams(layers=layers, n=n, h=h, d=d, k=k)
