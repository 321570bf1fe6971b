import numpy as np
import pytest

from carlab.data import synth_longtail_gaussians


def gapped_matrix(seed, sigmas=(4.0, 2.0, 1.4, 1.0, 0.5, 0.2)):
    """Random orthogonal factors around a fixed well-separated spectrum."""
    n = len(sigmas)
    rng = np.random.default_rng(seed)
    q1, _ = np.linalg.qr(rng.normal(size=(n, n)))
    q2, _ = np.linalg.qr(rng.normal(size=(n, n)))
    return q1 @ np.diag(sigmas) @ q2.T


@pytest.fixture
def tiny_longtail():
    """Small 5-class long-tailed set, cheap enough for per-test training."""
    return synth_longtail_gaussians(
        k=5, d=2, n_max=80, imbalance_factor=10, cluster_spread=0.4, seed=3
    )
