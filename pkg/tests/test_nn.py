import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import random_tree_adjacency
from ctnn.nn import (
    AsymmetricAdjacencyError,
    ChebyLayer,
    Dense,
    DiffusionLayer,
    LabelRangeError,
    MissingCacheError,
    NodeNorm,
    OptimizerState,
    cheby_backward,
    cheby_forward,
    dense_backward,
    dense_forward,
    diffusion_backward,
    diffusion_forward,
    diffusion_operators,
    lambda_max,
    momentum_step,
    node_norm_backward,
    node_norm_forward,
    normalized_laplacian,
    numeric_gradient,
    relative_error,
    scaled_laplacian,
    softmax_xent,
)

SEEDS = range(20)
EDGE = sp.csr_matrix(np.array([[0.0, 1.0], [1.0, 0.0]]))


def instance(seed, n=6):
    rng = np.random.default_rng(seed)
    w = random_tree_adjacency(rng, n)
    k, fin, fout = (int(v) for v in rng.integers(1, 5, 3))
    return rng, w, k, fin, fout


def check_layer(forward, backward, x, params, rng, tol=1e-5):
    """Compare ``backward`` against central differences of ``<forward(x), g>`` for x and every parameter."""
    out, _ = forward()
    g = rng.normal(size=out.shape)

    def f():
        return float((forward()[0] * g).sum())

    _, cache = forward()
    dx, grads = backward(cache, g)
    assert relative_error(dx, numeric_gradient(f, x)) < tol
    for name, p in params.items():
        assert relative_error(grads[name], numeric_gradient(f, p)) < tol, name


# ---------------------------------------------------------------- graph operators


def test_edge_laplacian():
    assert np.array_equal(normalized_laplacian(EDGE).toarray(), [[1, -1], [-1, 1]])
    assert lambda_max(EDGE) == 2.0
    assert np.array_equal(scaled_laplacian(EDGE).toarray(), [[0, -1], [-1, 0]])


def test_edgeless_graph():
    a = sp.csr_matrix((3, 3))
    assert np.array_equal(normalized_laplacian(a).toarray(), np.eye(3))
    assert lambda_max(a) == 1.0
    assert np.array_equal(scaled_laplacian(a).toarray(), np.eye(3))


def test_asymmetric_rejected():
    with pytest.raises(AsymmetricAdjacencyError):
        normalized_laplacian(sp.csr_matrix(np.array([[0.0, 1.0], [0.0, 0.0]])))


@pytest.mark.parametrize("method", ["auto", "two"])
def test_scaled_spectrum_on_random_trees(method):
    rng = np.random.default_rng(5)
    for _ in range(50):
        n = int(rng.integers(1, 51))
        w = random_tree_adjacency(rng, n)
        a = w + w.T
        ev = np.linalg.eigvalsh(scaled_laplacian(a, method).toarray())
        assert ev.min() >= -1 - 1e-6 and ev.max() <= 1 + 1e-6
        if method == "auto" and n > 1:
            assert np.isclose(ev.max(), 1.0, atol=1e-9)


def test_power_iteration_is_a_lower_bound():
    rng = np.random.default_rng(6)
    for _ in range(30):
        w = random_tree_adjacency(rng, int(rng.integers(2, 40)))
        a = w + w.T
        true = np.linalg.eigvalsh(normalized_laplacian(a).toarray())[-1]
        est = lambda_max(a, "power")
        assert est <= true + 1e-9 and est > 0.8 * true


def test_lambda_max_on_cyclic_graph():
    # odd cycle: not bipartite, eigenvalue below 2
    n = 5
    a = sp.csr_matrix((np.ones(2 * n), (np.r_[np.arange(n), (np.arange(n) + 1) % n], np.r_[(np.arange(n) + 1) % n, np.arange(n)])))
    expect = np.linalg.eigvalsh(normalized_laplacian(a).toarray())[-1]
    assert np.isclose(lambda_max(a), expect, atol=1e-12)
    assert np.isclose(lambda_max(a, "power"), expect, rtol=1e-4)


def test_diffusion_operators_zero_degree():
    po, pi = diffusion_operators(sp.csr_matrix(np.array([[0.0, 1.0], [0.0, 0.0]])))
    assert np.array_equal(po.toarray(), [[0, 1], [0, 0]])
    assert np.array_equal(pi.toarray(), [[0, 0], [1, 0]])


# ---------------------------------------------------------------- Chebyshev


def test_cheby_identity():
    x = np.arange(6.0).reshape(3, 2)
    layer = ChebyLayer(np.eye(2)[None], np.zeros(2))
    out, cache = cheby_forward(scaled_laplacian(sp.csr_matrix((3, 3))), x, layer)
    assert np.array_equal(out, x)
    dout = np.ones_like(x) * 3
    assert np.array_equal(cheby_backward(cache, dout)[0], dout)


def test_cheby_edge_example():
    layer = ChebyLayer(np.array([[[0.0]], [[1.0]]]), np.zeros(1))
    out, _ = cheby_forward(scaled_laplacian(EDGE), np.array([[1.0], [0.0]]), layer)
    assert out.ravel().tolist() == [0.0, -1.0]


@pytest.mark.parametrize("seed", SEEDS)
def test_cheby_gradients(seed):
    rng, w, k, fin, fout = instance(seed)
    lhat = scaled_laplacian(w + w.T)
    layer = ChebyLayer(rng.normal(size=(k, fin, fout)), rng.normal(size=fout))
    x = rng.normal(size=(6, fin))
    check_layer(lambda: cheby_forward(lhat, x, layer), cheby_backward, x, layer.params, rng)


@pytest.mark.parametrize("seed", SEEDS)
def test_diffusion_gradients(seed):
    rng, w, k, fin, fout = instance(seed)
    ops = diffusion_operators(w)
    layer = DiffusionLayer(rng.normal(size=(k, fin, fout)), rng.normal(size=(k, fin, fout)), rng.normal(size=fout))
    x = rng.normal(size=(6, fin))
    check_layer(lambda: diffusion_forward(ops, x, layer), diffusion_backward, x, layer.params, rng)


@pytest.mark.parametrize("seed", SEEDS)
def test_dense_gradients(seed):
    rng, _, _, fin, fout = instance(seed)
    layer = Dense(rng.normal(size=(fin, fout)), rng.normal(size=fout))
    x = rng.normal(size=(6, fin))
    check_layer(lambda: dense_forward(x, layer), dense_backward, x, layer.params, rng)


@pytest.mark.parametrize("seed", SEEDS)
def test_node_norm_gradients(seed):
    rng, _, _, fin, _ = instance(seed)
    norm = NodeNorm(rng.normal(size=fin), rng.normal(size=fin))
    x = rng.normal(size=(6, fin))
    check_layer(lambda: node_norm_forward(x, norm, "train"), node_norm_backward, x, norm.params, rng)
    check_layer(lambda: node_norm_forward(x, norm, "eval"), node_norm_backward, x, norm.params, rng)


@pytest.mark.parametrize("seed", SEEDS)
def test_xent_gradients(seed):
    rng = np.random.default_rng(seed)
    n, c = int(rng.integers(1, 7)), int(rng.integers(2, 5))
    logits = rng.normal(size=(n, c))
    labels = rng.integers(0, c, n)
    w = rng.uniform(0.5, 3, n)
    for weights in (None, w):
        _, grad = softmax_xent(logits, labels, weights)
        num = numeric_gradient(lambda: softmax_xent(logits, labels, weights)[0], logits, h=1e-5)
        assert relative_error(grad, num) <= 1e-6


@pytest.mark.parametrize("make", ["cheby", "diffusion"])
def test_zero_dout_gives_zero_grads(make, rng):
    w = random_tree_adjacency(rng, 6)
    x = rng.normal(size=(6, 3))
    if make == "cheby":
        layer = ChebyLayer.init(rng, 3, 3, 2)
        _, cache = cheby_forward(scaled_laplacian(w + w.T), x, layer)
        dx, grads = cheby_backward(cache, np.zeros((6, 2)))
    else:
        layer = DiffusionLayer.init(rng, 3, 3, 2)
        _, cache = diffusion_forward(diffusion_operators(w), x, layer)
        dx, grads = diffusion_backward(cache, np.zeros((6, 2)))
    assert not dx.any() and not any(g.any() for g in grads.values())


def test_missing_cache():
    with pytest.raises(MissingCacheError):
        cheby_backward(None, np.zeros((1, 1)))


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10**6), st.floats(-3, 3), st.floats(-3, 3))
def test_conv_linearity(seed, a, b):
    rng = np.random.default_rng(seed)
    w = random_tree_adjacency(rng, 8)
    x, y = rng.normal(size=(8, 3)), rng.normal(size=(8, 3))
    cl = ChebyLayer(rng.normal(size=(3, 3, 2)), rng.normal(size=2))
    dl = DiffusionLayer(rng.normal(size=(3, 3, 2)), rng.normal(size=(3, 3, 2)), rng.normal(size=2))
    lhat, ops = scaled_laplacian(w + w.T), diffusion_operators(w)
    for f, bias in ((lambda v: cheby_forward(lhat, v, cl)[0], cl.b), (lambda v: diffusion_forward(ops, v, dl)[0], dl.b)):
        lhs = f(a * x + b * y) - bias
        rhs = a * (f(x) - bias) + b * (f(y) - bias)
        assert np.allclose(lhs, rhs, atol=1e-9)


# ---------------------------------------------------------------- diffusion examples


def test_diffusion_k1_is_sum_of_kernels(rng):
    w = random_tree_adjacency(rng, 5)
    layer = DiffusionLayer.init(rng, 1, 2, 3)
    x = rng.normal(size=(5, 2))
    out, cache = diffusion_forward(diffusion_operators(w), x, layer)
    assert np.allclose(out, x @ (layer.W1[0] + layer.W2[0]) + layer.b)
    ident = DiffusionLayer(np.eye(2)[None], np.zeros((1, 2, 2)), np.zeros(2))
    _, cache = diffusion_forward(diffusion_operators(w), x, ident)
    assert np.array_equal(diffusion_backward(cache, x)[0], x)


def test_diffusion_edge_example():
    ops = diffusion_operators(sp.csr_matrix(np.array([[0.0, 1.0], [0.0, 0.0]])))  # u -> v
    layer = DiffusionLayer(np.array([[[0.0]], [[1.0]]]), np.zeros((2, 1, 1)), np.zeros(1))
    assert diffusion_forward(ops, np.array([[1.0], [0.0]]), layer)[0].ravel().tolist() == [0.0, 0.0]
    assert diffusion_forward(ops, np.array([[0.0], [1.0]]), layer)[0].ravel().tolist() == [1.0, 0.0]


def test_diffusion_single_node():
    ops = diffusion_operators(sp.csr_matrix((1, 1)))
    layer = DiffusionLayer(np.full((3, 2, 1), 2.0), np.full((3, 2, 1), 1.0), np.array([0.5]))
    out, _ = diffusion_forward(ops, np.array([[1.0, 2.0]]), layer)
    assert out.tolist() == [[0.5 + 3 * 3]]


# ---------------------------------------------------------------- normalization


def test_node_norm_examples():
    out, _ = node_norm_forward(np.array([[1.0], [3.0]]), NodeNorm(np.ones(1), np.zeros(1), eps=1e-12))
    assert np.allclose(out.ravel(), [-1, 1], atol=1e-9)
    z = np.array([[-1.0], [1.0]])
    out, _ = node_norm_forward(z, NodeNorm.init(1))
    assert np.allclose(out, z, atol=1e-5)
    out, _ = node_norm_forward(np.array([[7.0, -2.0]]), NodeNorm(np.ones(2), np.array([0.3, -0.4])))
    assert np.allclose(out, [[0.3, -0.4]])


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10**6), st.integers(2, 30))
def test_node_norm_standardizes(seed, n):
    rng = np.random.default_rng(seed)
    x = rng.normal(3, 5, size=(n, 4))
    if np.any(x.var(axis=0) < 1e-3):
        return
    out, _ = node_norm_forward(x, NodeNorm.init(4))
    assert np.allclose(out.mean(axis=0), 0, atol=1e-9)
    var = x.var(axis=0)
    assert np.allclose(out.var(axis=0), var / (var + 1e-5), atol=1e-12)


def test_running_stats_update():
    norm = NodeNorm.init(1, momentum=0.9)
    node_norm_forward(np.array([[1.0], [3.0]]), norm)
    assert np.isclose(norm.running_mean[0], 0.2) and np.isclose(norm.running_var[0], 0.9 + 0.1 * 1.0)
    before = norm.running_mean.copy()
    node_norm_forward(np.array([[5.0]]), norm, "eval")
    assert np.array_equal(norm.running_mean, before)
    with pytest.raises(ValueError):
        node_norm_forward(np.zeros((2, 1)), norm, "test")


# ---------------------------------------------------------------- loss


def test_xent_examples():
    assert np.isclose(softmax_xent(np.zeros((1, 2)), np.array([0]))[0], np.log(2))
    loss, grad = softmax_xent(np.array([[1000.0, 0.0]]), np.array([0]))
    assert loss < 1e-12 and np.all(np.isfinite(grad))
    with pytest.raises(LabelRangeError):
        softmax_xent(np.zeros((2, 2)), np.array([0, 2]))


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 10**6), st.floats(-50, 50))
def test_xent_shift_invariance(seed, shift):
    rng = np.random.default_rng(seed)
    logits = rng.normal(size=(5, 3))
    labels = rng.integers(0, 3, 5)
    assert abs(softmax_xent(logits + shift, labels)[0] - softmax_xent(logits, labels)[0]) < 1e-9


def test_equal_weights_bitwise_uniform(rng):
    logits, labels = rng.normal(size=(7, 3)), rng.integers(0, 3, 7)
    a = softmax_xent(logits, labels)
    b = softmax_xent(logits, labels, np.full(7, 13.0))
    assert a[0] == b[0] and np.array_equal(a[1], b[1])


# ---------------------------------------------------------------- optimizer


def test_momentum_examples():
    st_ = OptimizerState(lr=0.1, momentum=0.9, decay=0.99, l2=0.0)
    p = {"w": np.array([1.0])}
    momentum_step(p, {"w": np.array([1.0])}, st_, 0)
    assert np.isclose(p["w"][0], 0.9)
    momentum_step(p, {"w": np.array([1.0])}, st_, 0)
    assert np.isclose(p["w"][0], 0.9 - 0.19)
    assert np.isclose(st_.effective_lr(1), 0.099)


def test_l2_only_on_kernels():
    st_ = OptimizerState(lr=1.0, momentum=0.0, decay=1.0, l2=0.5)
    p = {"W": np.array([2.0]), "b": np.array([2.0])}
    momentum_step(p, {"W": np.zeros(1), "b": np.zeros(1)}, st_, 0, kernels=["W"])
    assert p["W"][0] == 1.0 and p["b"][0] == 2.0


def test_velocity_shape_mismatch():
    st_ = OptimizerState()
    with pytest.raises(ValueError):
        momentum_step({"w": np.zeros(2)}, {"w": np.zeros(3)}, st_, 0)


def test_graph_mode_uses_batch_stats_without_update(rng):
    norm = NodeNorm.init(3)
    x = rng.normal(2, 3, size=(9, 3))
    before = norm.running_mean.copy(), norm.running_var.copy()
    out_g, cache = node_norm_forward(x, norm, "graph")
    assert np.array_equal(norm.running_mean, before[0]) and np.array_equal(norm.running_var, before[1])
    out_t, _ = node_norm_forward(x, NodeNorm.init(3), "train")
    assert np.array_equal(out_g, out_t)
    check_layer(lambda: node_norm_forward(x, norm, "graph"), node_norm_backward, x, norm.params, rng)
