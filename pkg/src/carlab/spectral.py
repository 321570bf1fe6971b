"""Matrix norms: differentiable spectral norm, l1 operator norm, SVD oracle.

The spectral norm is computed by deterministic power iteration and exposed as
a graph node whose backward is the rank-one outer product of the converged
singular vectors (treated as constants of the forward pass). A cyclic-Jacobi
eigendecomposition of the Gram matrix serves as an independent test oracle.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff
from .autodiff import Tensor
from .errors import DimensionError, NumericError, ParameterError

__all__ = [
    "SingularTriplet",
    "power_iteration",
    "spectral_norm_node",
    "l1_operator_norm",
    "svd_oracle",
]

# settings used whenever the spectral norm appears inside a loss graph
NODE_MAX_ITERS = 100
NODE_TOL = 1e-9


@dataclass(frozen=True)
class SingularTriplet:
    """Top singular value with unit left/right singular vectors."""

    sigma: float
    u: np.ndarray
    v: np.ndarray
    iterations: int
    degenerate: bool = False


def _start_vector(n: int) -> np.ndarray:
    # perturbed ones: deterministic, never orthogonal to a nonneg top vector
    v = 1.0 + 1e-3 * (np.arange(n) + 1.0)
    return v / np.linalg.norm(v)


def power_iteration(a, max_iters: int, tol: float) -> SingularTriplet:
    """Dominant singular triplet of a dense matrix.

    Alternates u <- normalize(A v), v <- normalize(A^T u) from a fixed
    perturbed-ones start. Stops once the Rayleigh estimate sigma = u^T A v
    moves by at most ``tol * max(sigma, 1)`` between iterations AND the
    residual ||A v - sigma u|| is below the same threshold; the latter makes
    the returned vectors (not just sigma) converged, which the rank-one
    backward of :func:`spectral_norm_node` relies on.
    """
    a = np.asarray(a, dtype=np.float64)
    if a.ndim != 2:
        raise DimensionError(f"power iteration needs a matrix, got rank {a.ndim}")
    if max_iters < 1:
        raise ParameterError("max_iters must be >= 1")
    if tol <= 0:
        raise ParameterError("tol must be positive")
    if not np.all(np.isfinite(a)):
        raise NumericError("matrix has non-finite entries")

    rows, cols = a.shape
    v = _start_vector(cols)
    u = _start_vector(rows)
    sigma = 0.0
    sigma_prev = None
    for it in range(1, max_iters + 1):
        av = a @ v
        nav = np.linalg.norm(av)
        if nav == 0.0:
            return SingularTriplet(sigma=0.0, u=u, v=v, iterations=it, degenerate=True)
        u = av / nav
        atu = a.T @ u
        natu = np.linalg.norm(atu)
        if natu == 0.0:
            return SingularTriplet(sigma=0.0, u=u, v=v, iterations=it, degenerate=True)
        v = atu / natu
        av = a @ v
        sigma = float(u @ av)
        if sigma_prev is not None and abs(sigma - sigma_prev) <= tol * max(sigma, 1.0):
            residual = float(np.linalg.norm(av - sigma * u))
            if residual <= tol * max(sigma, 1.0):
                return SingularTriplet(sigma=sigma, u=u, v=v, iterations=it)
        sigma_prev = sigma
    return SingularTriplet(sigma=sigma, u=u, v=v, iterations=max_iters)


def _fw_spectral_norm(inputs, ctx):
    a = inputs[0]
    if a.shape[0] != a.shape[1]:
        raise DimensionError(f"spectral norm node needs a square matrix, got {a.shape}")
    trip = power_iteration(a, NODE_MAX_ITERS, NODE_TOL)
    return np.array([[trip.sigma]])


def _bw_spectral_norm(inputs, value, ctx, g):
    # u, v are detached: whole-iteration recompute is deterministic, so this
    # reproduces the forward pass triplet exactly
    trip = power_iteration(inputs[0], NODE_MAX_ITERS, NODE_TOL)
    return (float(g[0, 0]) * np.outer(trip.u, trip.v),)


autodiff.register_op("spectral_norm", _fw_spectral_norm, _bw_spectral_norm)


def spectral_norm_node(a: Tensor) -> Tensor:
    """Spectral norm of a square tensor as a differentiable 1x1 node.

    The backward pass contributes ``g * u v^T``; for repeated top singular
    values the direction is whichever one power iteration converged to.
    """
    return autodiff._apply("spectral_norm", (a,))


def l1_operator_norm(a) -> float:
    """Maximum absolute column sum."""
    a = np.asarray(a, dtype=np.float64)
    if not np.all(np.isfinite(a)):
        raise NumericError("matrix has non-finite entries")
    if a.size == 0:
        return 0.0
    return float(np.abs(a).sum(axis=0).max())


def svd_oracle(a, max_sweeps: int = 60) -> np.ndarray:
    """All singular values, descending, via cyclic Jacobi on the Gram matrix.

    Test-scale only (dimensions capped at 128); independent of the power
    iteration path above.
    """
    a = np.asarray(a, dtype=np.float64)
    if a.ndim != 2:
        raise DimensionError(f"svd oracle needs a matrix, got rank {a.ndim}")
    if max(a.shape) > 128:
        raise ParameterError("svd oracle is restricted to dimensions <= 128")
    if not np.all(np.isfinite(a)):
        raise NumericError("matrix has non-finite entries")

    # work with the smaller Gram matrix
    b = a.T @ a if a.shape[0] >= a.shape[1] else a @ a.T
    n = b.shape[0]
    b = b.copy()
    if n == 0:
        return np.zeros(0)
    thresh = 1e-15 * max(np.linalg.norm(b), 1e-300)
    for _ in range(max_sweeps):
        off = 0.0
        for p in range(n - 1):
            for q in range(p + 1, n):
                off = max(off, abs(b[p, q]))
                if abs(b[p, q]) <= thresh:
                    continue
                # symmetric Jacobi rotation zeroing b[p, q]
                theta = (b[q, q] - b[p, p]) / (2.0 * b[p, q])
                t = np.sign(theta) / (abs(theta) + np.sqrt(theta * theta + 1.0))
                if theta == 0.0:
                    t = 1.0
                c = 1.0 / np.sqrt(t * t + 1.0)
                s = t * c
                rot_p = c * b[:, p] - s * b[:, q]
                rot_q = s * b[:, p] + c * b[:, q]
                b[:, p], b[:, q] = rot_p, rot_q
                rot_p = c * b[p, :] - s * b[q, :]
                rot_q = s * b[p, :] + c * b[q, :]
                b[p, :], b[q, :] = rot_p, rot_q
                b[p, q] = b[q, p] = 0.0
        if off <= thresh:
            break
    eig = np.sort(np.diag(b))[::-1]
    return np.sqrt(np.maximum(eig, 0.0))
