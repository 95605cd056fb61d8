import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from zeromatch.exceptions import ClassIndexError, DimensionError
from zeromatch.nn import (
    MLP,
    Linear,
    Tensor,
    concat,
    LOG_EPS,
    cross_entropy,
    load_checkpoint,
    matmul,
    mlp_forward,
    relu,
    save_checkpoint,
    softmax,
)

from gradcheck import check_graph, max_rel_error, numeric_grad, random_graph_case

finite = st.floats(-50, 50, allow_nan=False, allow_infinity=False)


def test_matmul_identity():
    b = np.array([[1.0, 2.0], [3.0, 4.0]])
    assert np.array_equal(matmul(np.eye(2), b).data, b)


def test_matmul_projector():
    out = matmul(np.array([[1.0, 0.0], [0.0, 0.0]]), np.array([[5.0, 6.0], [7.0, 8.0]]))
    assert np.array_equal(out.data, [[5.0, 6.0], [0.0, 0.0]])


def test_matmul_shape_error_names_both_shapes():
    with pytest.raises(DimensionError, match=r"\(2, 3\).*\(2, 3\)"):
        matmul(np.ones((2, 3)), np.ones((2, 3)))


def test_matmul_gradient_matches_finite_differences():
    rng = np.random.default_rng(0)
    a = Tensor(rng.standard_normal((3, 4)), requires_grad=True)
    b = Tensor(rng.standard_normal((4, 2)), requires_grad=True)
    (a @ b).sum().backward()
    for t in (a, b):
        num = numeric_grad(lambda: float((a.data @ b.data).sum()), t.data)
        assert max_rel_error(t.grad, num) < 1e-4
    # closed forms dA = dC B^T, dB = A^T dC with dC = ones
    assert np.allclose(a.grad, np.ones((3, 2)) @ b.data.T)
    assert np.allclose(b.grad, a.data.T @ np.ones((3, 2)))


def test_softmax_symmetric_and_stable():
    assert np.array_equal(softmax(np.array([0.0, 0.0])).data, [0.5, 0.5])
    p = softmax(np.array([1000.0, 0.0])).data
    assert np.isfinite(p).all()
    assert p[0] == pytest.approx(1.0) and p[1] == pytest.approx(0.0, abs=1e-300)


def test_softmax_rejects_nonfinite():
    with pytest.raises(FloatingPointError):
        softmax(np.array([np.nan, 1.0]))


@settings(max_examples=50, deadline=None)
@given(arrays(np.float64, (3, 5), elements=finite))
def test_softmax_rows_sum_to_one_and_shift_invariant(z):
    p = softmax(z).data
    assert np.all(p >= 0)
    assert np.all(np.abs(p.sum(axis=1) - 1.0) < 1e-12)
    assert np.allclose(softmax(z + 17.3).data, p, atol=1e-12)


@pytest.mark.parametrize(
    "target, probs, expected",
    [
        (0, [1.0, 0.0], 0.0),
        (0, [0.5, 0.5], math.log(2)),
        (1, [0.25, 0.75], -math.log(0.75)),
    ],
)
def test_cross_entropy_examples(target, probs, expected):
    got = cross_entropy(np.array([target]), np.array(probs)).item()
    assert got == pytest.approx(expected, abs=1e-11)


def test_cross_entropy_accepts_distribution_targets():
    got = cross_entropy(np.array([0.5, 0.5]), np.array([0.5, 0.5])).item()
    assert got == pytest.approx(math.log(2), abs=1e-11)


def test_cross_entropy_class_index_error():
    with pytest.raises(ClassIndexError):
        cross_entropy(np.array([2]), np.array([0.5, 0.5]))


@settings(max_examples=50, deadline=None)
@given(arrays(np.float64, 4, elements=finite), st.integers(0, 3))
def test_cross_entropy_nonnegative_for_hard_targets(z, c):
    p = softmax(z).data
    loss = cross_entropy(np.array([c]), p).item()
    # ln(p + eps) with p == 1 gives -ln(1 + 1e-12)
    assert loss >= -math.log(1.0 + LOG_EPS)
    if p[c] == 1.0:
        assert loss == pytest.approx(0.0, abs=1e-11)


def test_cross_entropy_reductions():
    p = np.array([[0.5, 0.5], [0.25, 0.75]])
    per = cross_entropy(np.array([0, 1]), p, reduction="none").data
    assert np.allclose(per, [math.log(2), -math.log(0.75)], atol=1e-11)
    assert cross_entropy(np.array([0, 1]), p, reduction="sum").item() == pytest.approx(per.sum())
    assert cross_entropy(np.array([0, 1]), p).item() == pytest.approx(per.mean())


def test_zero_weight_network_gives_zero_logits():
    rng = np.random.default_rng(1)
    net = MLP((5, 7, 3), rng)
    for p in net.parameters():
        p.data[...] = 0.0
    out = mlp_forward(net, rng.standard_normal((4, 5)))
    assert np.array_equal(out.data, np.zeros((4, 3)))


def test_single_layer_is_affine():
    rng = np.random.default_rng(2)
    net = MLP((3, 2), rng)
    net.layers[0].bias.data[...] = [0.5, -1.0]
    x = rng.standard_normal((4, 3))
    expected = x @ net.layers[0].weight.data + net.layers[0].bias.data
    assert np.array_equal(mlp_forward(net, x).data, expected)


def test_mlp_width_mismatch():
    net = MLP((3, 4, 2), np.random.default_rng(0))
    with pytest.raises(DimensionError):
        mlp_forward(net, np.ones((2, 5)))


def test_mlp_4_8_3_gradient_matches_finite_differences():
    rng = np.random.default_rng(3)
    net = MLP((4, 8, 3), rng)
    x = rng.standard_normal((6, 4))
    y = rng.integers(0, 3, size=6)

    def loss():
        return cross_entropy(y, softmax(mlp_forward(net, x)))

    assert check_graph(loss, net.parameters()) < 1e-4


def test_glorot_uniform_bounds_and_zero_bias():
    lin = Linear(30, 20, np.random.default_rng(0))
    limit = math.sqrt(6 / 50)
    assert np.all(np.abs(lin.weight.data) <= limit)
    assert np.array_equal(lin.bias.data, np.zeros(20))


def test_random_graph_gradients():
    rng = np.random.default_rng(11)
    for _ in range(10):
        loss_fn, params = random_graph_case(rng)
        assert check_graph(loss_fn, params) < 1e-4


def test_concat_and_indexing_gradients():
    rng = np.random.default_rng(4)
    a = Tensor(rng.standard_normal((3, 2)), requires_grad=True)
    b = Tensor(rng.standard_normal((3, 3)), requires_grad=True)
    w = rng.standard_normal((5,))

    def loss():
        c = concat([a, b], axis=1)
        return (relu(c[1:]) * w).sum() + (c[np.array([0, 0])] * 2.0).sum()

    assert check_graph(loss, [a, b]) < 1e-4


def test_backward_requires_scalar():
    t = Tensor(np.ones(3), requires_grad=True)
    with pytest.raises(DimensionError):
        (t * 2.0).backward()


def test_shared_subexpression_accumulates():
    x = Tensor(np.array([2.0]), requires_grad=True)
    y = x * x
    (y + y).sum().backward()
    assert x.grad[0] == pytest.approx(8.0)


def test_forward_is_bit_deterministic():
    rng = np.random.default_rng(5)
    net = MLP((6, 10, 4), rng)
    x = rng.standard_normal((8, 6))
    assert np.array_equal(mlp_forward(net, x).data, mlp_forward(net, x).data)


def test_checkpoint_round_trip(tmp_path):
    net = MLP((3, 5, 2), np.random.default_rng(0))
    path = tmp_path / "ckpt.npz"
    save_checkpoint(path, net.state_dict(), step=np.array(7))
    state, extra = load_checkpoint(path)
    other = MLP((3, 5, 2), np.random.default_rng(99))
    other.load_state_dict(state)
    for (n1, p1), (n2, p2) in zip(net.named_parameters().items(), other.named_parameters().items()):
        assert n1 == n2
        assert np.array_equal(p1.data, p2.data)
    assert int(extra["step"]) == 7


def test_checkpoint_shape_mismatch(tmp_path):
    net = MLP((3, 5, 2), np.random.default_rng(0))
    state = net.state_dict()
    state["0.weight"] = np.zeros((2, 2))
    with pytest.raises(DimensionError):
        net.load_state_dict(state)
