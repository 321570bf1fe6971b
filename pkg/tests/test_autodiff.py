import numpy as np
import pytest

from carlab.autodiff import (
    Graph,
    add,
    backward,
    constant,
    cross_entropy_mean,
    grad_check,
    masked_softmax,
    matmul,
    mul,
    relu,
    scale,
    sigmoid,
    sub,
    transpose,
)
from carlab.errors import (
    DegenerateClassError,
    DimensionError,
    EmptyBatchError,
    RankError,
)


def test_matmul_identity():
    g = Graph()
    b = g.leaf([[5.0], [6.0]])
    out = matmul(constant(np.eye(2)), b)
    assert np.array_equal(out.values, [[5.0], [6.0]])


def test_matmul_hand_arithmetic():
    # oracle: [[1*5+2*6], [3*5+4*6]]
    g = Graph()
    a = g.leaf([[1.0, 2.0], [3.0, 4.0]])
    out = matmul(a, constant([[5.0], [6.0]]))
    assert np.array_equal(out.values, [[17.0], [39.0]])


def test_matmul_zero_left():
    for seed in range(3):
        rng = np.random.default_rng(seed)
        a = constant(rng.normal(size=(2, 1)))
        out = matmul(constant(np.zeros((2, 2))), a)
        assert np.array_equal(out.values, np.zeros((2, 1)))


def test_matmul_shape_mismatch():
    with pytest.raises(DimensionError):
        matmul(constant(np.ones((2, 3))), constant(np.ones((2, 3))))


def test_matmul_backward_rule():
    g = Graph()
    a = g.leaf([[1.0, 2.0], [3.0, 4.0]])
    b = g.leaf([[5.0], [6.0]])
    out = matmul(a, b)
    root = matmul(constant([[1.0, 1.0]]), out)  # sum of entries
    grads = backward(root)
    gout = np.ones((2, 1))
    assert np.array_equal(grads.wrt(a), gout @ b.values.T)
    assert np.array_equal(grads.wrt(b), a.values.T @ gout)


def test_sigmoid_and_relu_values():
    g = Graph()
    x = g.leaf([[0.0, -3.2, 3.2]])
    assert sigmoid(x).values[0, 0] == 0.5
    r = relu(x).values
    assert r[0, 1] == 0.0 and r[0, 2] == 3.2


def test_sigmoid_derivative_at_zero():
    g = Graph()
    x = g.leaf([[0.0]])
    grads = backward(sigmoid(x))
    assert abs(grads.wrt(x)[0, 0] - 0.25) < 1e-15


def test_relu_subgradient_zero_at_kink():
    g = Graph()
    x = g.leaf([[0.0, -1.0, 2.0]])
    root = matmul(relu(x), constant(np.ones((3, 1))))
    grads = backward(root)
    assert np.array_equal(grads.wrt(x), [[0.0, 0.0, 1.0]])


def test_elementwise_shape_mismatch():
    with pytest.raises(DimensionError):
        add(constant(np.ones((2, 2))), constant(np.ones((2, 3))))


def test_masked_softmax_single_survivor():
    g = Graph()
    x = g.leaf([[0.0, 0.0]])
    out = masked_softmax(x, 0)
    assert np.array_equal(out.values, [[0.0, 1.0]])


def test_masked_softmax_symmetry():
    g = Graph()
    out = masked_softmax(g.leaf([[0.0, 0.0, 0.0]]), 2)
    assert np.array_equal(out.values, [[0.5, 0.5, 0.0]])


def test_masked_softmax_direct_evaluation():
    # oracle: exclude index 1 from (1, 2, 3), normalize exp over survivors
    e1, e3 = np.exp(1.0), np.exp(3.0)
    g = Graph()
    out = masked_softmax(g.leaf([[1.0, 2.0, 3.0]]), 1)
    expected = np.array([[e1 / (e1 + e3), 0.0, e3 / (e1 + e3)]])
    assert np.allclose(out.values, expected, atol=1e-15)


def test_masked_softmax_properties_many_seeds():
    for seed in range(50):
        rng = np.random.default_rng(seed)
        k = int(rng.integers(2, 8))
        excluded = int(rng.integers(k))
        g = Graph()
        out = masked_softmax(g.leaf(rng.normal(scale=5.0, size=(3, k))), excluded)
        assert np.all(out.values[:, excluded] == 0.0)
        keep = [i for i in range(k) if i != excluded]
        assert np.all(out.values[:, keep] > 0.0)
        assert np.all(np.abs(out.values.sum(axis=1) - 1.0) <= 1e-12)


def test_masked_softmax_degenerate_class():
    g = Graph()
    with pytest.raises(DegenerateClassError):
        masked_softmax(g.leaf([[1.0]]), 0)


def test_cross_entropy_uniform_two_classes():
    g = Graph()
    out = cross_entropy_mean(g.leaf([[0.0, 0.0]]), [0])
    assert abs(out.item() - np.log(2.0)) < 1e-15


def test_cross_entropy_saturation_monotone():
    values = []
    for t in [0.0, 2.0, 5.0, 10.0, 30.0]:
        g = Graph()
        values.append(cross_entropy_mean(g.leaf([[t, 0.0, 0.0]]), [0]).item())
    assert all(a > b for a, b in zip(values, values[1:]))
    assert values[-1] < 1e-12


def test_cross_entropy_matches_per_sample_oracle():
    logits = np.array([[0.3, -1.2, 2.0], [1.5, 0.1, -0.7]])
    labels = [2, 0]
    per_sample = []
    for row, y in zip(logits, labels):
        m = row.max()
        per_sample.append(m + np.log(np.exp(row - m).sum()) - row[y])
    g = Graph()
    out = cross_entropy_mean(g.leaf(logits), labels)
    assert abs(out.item() - np.mean(per_sample)) < 1e-15


def test_cross_entropy_empty_batch():
    g = Graph()
    with pytest.raises(EmptyBatchError):
        cross_entropy_mean(g.leaf(np.zeros((0, 3))), [])


def test_backward_sum_gives_ones():
    g = Graph()
    x = g.leaf(np.arange(6.0).reshape(2, 3))
    root = matmul(matmul(constant(np.ones((1, 2))), x), constant(np.ones((3, 1))))
    assert np.array_equal(backward(root).wrt(x), np.ones((2, 3)))


def test_backward_quadratic_form():
    g = Graph()
    x = g.leaf([[1.0, -2.0, 0.5]])
    root = scale(matmul(mul(x, x), constant(np.ones((3, 1)))), 0.5)
    assert np.allclose(backward(root).wrt(x), x.values, atol=1e-15)


def test_backward_requires_scalar_root():
    g = Graph()
    x = g.leaf(np.ones((2, 2)))
    with pytest.raises(RankError):
        backward(relu(x))


def test_backward_untouched_leaf_zero():
    g = Graph()
    x = g.leaf(np.ones((2, 2)))
    y = g.leaf(np.ones((3, 1)))
    root = matmul(matmul(constant(np.ones((1, 2))), x), constant(np.ones((2, 1))))
    grads = backward(root)
    assert np.array_equal(grads.wrt(y), np.zeros((3, 1)))


def _random_graph_loss(seed):
    """Deterministic builder over the primitive set for property testing."""
    rng = np.random.default_rng(seed)
    shapes = [(2, 3), (3, 3), (3, 2)]
    arrays = [rng.normal(size=s) for s in shapes]
    labels = [int(rng.integers(3)), int(rng.integers(3))]
    gamma = float(rng.uniform(0.0, 0.5))

    def build(g, leaves):
        a, b, c = leaves
        h = matmul(a, sigmoid(b))
        h = matmul(h, relu(c))          # 2x2
        row = matmul(constant(np.ones((1, 2))), h)   # 1x2
        sm = masked_softmax(add(row, row), 0)
        gate = sigmoid(sub(transpose(matmul(a, b)), constant(rng.normal(size=(3, 2)))))
        pooled = matmul(matmul(constant(np.ones((1, 3))), gate), constant(np.ones((2, 1))))
        ce = cross_entropy_mean(matmul(h, transpose(scale(c, 0.7))), labels[:2])
        return add(add(ce, scale(pooled, gamma)), matmul(sm, constant(np.ones((2, 1)))))

    return build, arrays


def test_finite_difference_agreement_many_graphs():
    # >= 50 random graphs from the primitive set, relative error <= 1e-4
    for seed in range(50):
        build, arrays = _random_graph_loss(seed)
        assert grad_check(build, arrays, 1e-5) <= 1e-4


def test_grad_check_linear_loss_exact():
    x = np.array([[0.7], [-1.3], [2.2]])

    def build(g, leaves):
        return matmul(transpose(leaves[0]), constant(x))

    w = np.array([[0.1], [0.2], [0.3]])
    assert grad_check(build, [w], 1e-5) <= 1e-10


def test_grad_check_sigmoid_chain_depth_three():
    def build(g, leaves):
        out = sigmoid(sigmoid(sigmoid(leaves[0])))
        return matmul(matmul(constant(np.ones((1, 2))), out), constant(np.ones((2, 1))))

    rng = np.random.default_rng(0)
    assert grad_check(build, [rng.normal(size=(2, 2))], 1e-5) <= 1e-5


def test_determinism_and_replay():
    def run():
        g = Graph()
        x = g.leaf([[0.4, -1.0], [2.0, 0.1]])
        y = g.leaf([[1.0], [2.0]])
        root = cross_entropy_mean(transpose(matmul(relu(x), y)), [0])
        grads = backward(root)
        return g, root.values.copy(), grads.wrt(x).copy(), grads.wrt(y).copy()

    g1, v1, gx1, gy1 = run()
    g2, v2, gx2, gy2 = run()
    assert np.array_equal(v1, v2)
    assert np.array_equal(gx1, gx2)
    assert np.array_equal(gy1, gy2)
    assert g1.replay() and g2.replay()


def test_backward_linearity():
    rng = np.random.default_rng(7)
    xv = rng.normal(size=(2, 2))
    a, b = 1.7, -0.4

    g = Graph()
    x = g.leaf(xv)
    ones = constant(np.ones((2, 1)))
    l1 = matmul(matmul(constant(np.ones((1, 2))), mul(x, x)), ones)
    l2 = matmul(matmul(constant(np.ones((1, 2))), sigmoid(x)), ones)
    combined = add(scale(l1, a), scale(l2, b))
    g1 = backward(l1).wrt(x)
    g2 = backward(l2).wrt(x)
    gc = backward(combined).wrt(x)
    assert np.max(np.abs(gc - (a * g1 + b * g2))) <= 1e-12
