import numpy as np
import pytest

from waitinfo import tensor as T
from waitinfo.tensor import Tensor, ShapeError

from gradcheck import max_rel_error, numeric_grad


def _check(fn, *shapes, seed=0, positive=False, trials=20, tol=1e-4):
    """Compare analytic and finite-difference grads of ``sum(fn(...) * w)``."""
    rng = np.random.default_rng(seed)
    for _ in range(trials):
        arrays = [rng.normal(size=s) for s in shapes]
        if positive:
            arrays = [np.abs(a) + 0.5 for a in arrays]
        out_shape = fn(*[Tensor(a) for a in arrays]).shape
        w = rng.normal(size=out_shape)

        def scalar(*arrs):
            return float((fn(*[Tensor(a) for a in arrs]).data * w).sum())

        params = [T.parameter(a.copy()) for a in arrays]
        T.sum_(T.mul(fn(*params), w)).backward()
        analytic = [p.grad for p in params]
        numeric = numeric_grad(scalar, arrays)
        assert max_rel_error(analytic, numeric) < tol


OPS = {
    "matmul": (lambda a, b: a @ b, [(3, 4), (4, 2)]),
    "batched_matmul": (lambda a, b: a @ b, [(2, 3, 4), (4, 5)]),
    "matmul_both_batched": (lambda a, b: a @ b, [(2, 3, 4), (2, 4, 2)]),
    "add_broadcast": (lambda a, b: a + b, [(3, 4), (4,)]),
    "sub": (lambda a, b: a - b, [(2, 3), (2, 3)]),
    "mul": (lambda a, b: a * b, [(3, 1), (1, 4)]),
    "scalar_mul": (lambda a: a * 2.5, [(3, 3)]),
    "softmax": (lambda a: T.softmax(a), [(3, 5)]),
    "log_softmax": (lambda a: T.log_softmax(a), [(2, 4)]),
    "sigmoid": (lambda a: T.sigmoid(a), [(4, 3)]),
    "relu": (lambda a: T.relu(a), [(4, 3)]),
    "layer_norm": (lambda x, g, b: T.layer_norm(x, g, b), [(3, 6), (6,), (6,)]),
    "embedding": (lambda t: T.embedding(t, [[0, 2, 2], [1, 0, 3]]), [(4, 3)]),
    "transpose": (lambda a: T.transpose(a, (2, 0, 1)), [(2, 3, 4)]),
    "reshape": (lambda a: a.reshape((6, 2)), [(3, 4)]),
    "sum_axis": (lambda a: a.sum(axis=1), [(3, 4)]),
    "mean": (lambda a: a.mean(axis=-1, keepdims=True), [(3, 4)]),
    "abs": (lambda a: T.abs_(a), [(4, 4)]),
    "masked_fill": (lambda a: T.softmax(T.masked_fill(a, np.triu(np.ones((4, 4), bool), 1))), [(4, 4)]),
    "getitem": (lambda a: a[:, 1:3], [(3, 4)]),
    "concat": (lambda a, b: T.concat([a, b], axis=1), [(2, 3), (2, 2)]),
    "cumsum": (lambda a: T.cumsum(a, axis=-1), [(2, 5)]),
    "weighted_softmax": (lambda a, b: T.weighted_softmax(a, T.exp(b)), [(2, 3, 4), (3, 1)]),
}


@pytest.mark.parametrize("kind", sorted(OPS))
def test_op_gradients_match_finite_differences(kind):
    fn, shapes = OPS[kind]
    _check(fn, *shapes)


def test_div_and_log_gradients():
    _check(lambda a, b: a / b, (3, 2), (3, 2), positive=True)
    _check(lambda a: T.log(a), (3, 3), positive=True)
    _check(lambda a: T.exp(a), (2, 3))


def test_cross_entropy_gradient():
    targets = np.array([[1, 0, 3], [2, 2, 0]])
    weights = np.array([[1, 1, 0], [1, 1, 1]], dtype=float)
    _check(lambda z: T.cross_entropy(z, targets, weights).reshape((1,)), (2, 3, 4))
    _check(lambda z: T.cross_entropy(z, targets, label_smoothing=0.1).reshape((1,)), (2, 3, 4))


def test_cross_entropy_value():
    logits = Tensor(np.log([[0.25, 0.25, 0.5]]))
    assert T.cross_entropy(logits, [2]).item() == pytest.approx(np.log(2.0))


def test_sigmoid_values_and_grad():
    assert T.sigmoid(Tensor(0.0)).item() == 0.5
    x = T.parameter(np.array([0.0]))
    T.sigmoid(x).sum().backward()
    assert x.grad[0] == pytest.approx(0.25)
    assert np.all(np.isfinite(T.sigmoid(Tensor([-800.0, 800.0])).data))


def test_softmax_values():
    np.testing.assert_array_equal(T.softmax(Tensor([0.0, 0.0])).data, [0.5, 0.5])
    # e/(1+e) and 1/(1+e) evaluated separately
    np.testing.assert_allclose(T.softmax(Tensor([1.0, 0.0])).data, [0.731059, 0.268941], atol=1e-6)


def test_weighted_softmax_with_constant_weight_is_softmax():
    x = np.random.default_rng(4).normal(size=(5, 7))
    plain = T.softmax(Tensor(x)).data
    np.testing.assert_array_equal(T.weighted_softmax(Tensor(x), np.full((5, 7), 2.0)).data, plain)
    np.testing.assert_allclose(T.weighted_softmax(Tensor(x), np.full((5, 7), 1.7)).data, plain, atol=1e-15)


def test_softmax_rows_are_distributions():
    rng = np.random.default_rng(3)
    for _ in range(20):
        p = T.softmax(Tensor(rng.normal(scale=5, size=(6, 7)))).data
        assert np.all(p >= 0)
        np.testing.assert_allclose(p.sum(-1), 1.0, atol=1e-9)


def test_mean_squared_random_matrix_grad():
    rng = np.random.default_rng(11)
    a = rng.normal(size=(3, 3))
    x = T.parameter(a.copy())
    (x * x).mean().backward()
    num = numeric_grad(lambda arr: float((arr * arr).mean()), [a])
    assert max_rel_error([x.grad], num) < 1e-4


def test_masked_logit_gets_zero_gradient():
    x = T.parameter(np.array([0.3, -1.2, 2.0]))
    p = T.softmax(T.masked_fill(x, np.array([False, True, False])))
    T.sum_(p * np.array([1.0, 5.0, -2.0])).backward()
    assert x.grad[1] == 0.0
    assert p.data[1] == 0.0


def test_fully_masked_row_is_finite():
    p = T.softmax(T.masked_fill(Tensor(np.zeros((2, 3))), np.ones((2, 3), bool)))
    assert np.all(np.isfinite(p.data))


def test_backward_requires_scalar():
    x = T.parameter(np.ones(3))
    with pytest.raises(ValueError):
        (x * 2.0).backward()


def test_shared_subgraph_visited_once():
    x = T.parameter(np.array([2.0]))
    y = x * x
    z = y + y + y
    z.sum().backward()
    assert x.grad[0] == pytest.approx(12.0)


@pytest.mark.parametrize("fn, shapes, kind", [
    (lambda a, b: a @ b, [(2, 3), (2, 3)], "matmul"),
    (lambda a, b: a + b, [(2, 3), (4,)], "add"),
    (lambda a: T.layer_norm(a, np.ones(2), np.zeros(2)), [(2, 3)], "layer_norm"),
    (lambda a: a.reshape((7,)), [(2, 3)], "reshape"),
])
def test_shape_errors_name_the_op(fn, shapes, kind):
    with pytest.raises(ShapeError) as info:
        fn(*[Tensor(np.zeros(s)) for s in shapes])
    assert info.value.kind == kind
    assert kind in str(info.value)


def test_deterministic_outputs():
    def run():
        rng = np.random.default_rng(5)
        a = Tensor(rng.normal(size=(4, 4)))
        w = T.parameter(rng.normal(size=(4, 4)))
        out = T.softmax(T.layer_norm(a @ w, np.ones(4), np.zeros(4)))
        T.dropout(out, 0.3, np.random.default_rng(1)).sum().backward()
        return out.data.copy(), w.grad.copy()

    (o1, g1), (o2, g2) = run(), run()
    assert o1.tobytes() == o2.tobytes()
    assert g1.tobytes() == g2.tobytes()


def test_no_grad_skips_graph():
    x = T.parameter(np.ones(2))
    with T.no_grad():
        y = x * 3.0
    assert not y.requires_grad
    assert T.grad_enabled()
