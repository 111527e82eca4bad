import numpy as np
import pytest

from posegraphnet import tensor as T
from posegraphnet.gradcheck import numerical_grad, relative_error
from posegraphnet.tensor import Parameter, ShapeError, StateError, Tensor


def naive_matmul(a, b):
    m, k = a.shape
    n = b.shape[1]
    out = np.zeros((m, n))
    for i in range(m):
        for j in range(n):
            s = 0.0
            for t in range(k):
                s += a[i, t] * b[t, j]
            out[i, j] = s
    return out


def test_matmul_identity_and_projector():
    b = Tensor([[1.0, 2.0], [3.0, 4.0]])
    assert np.array_equal(T.matmul(Tensor(np.eye(2)), b).data, b.data)
    p = T.matmul(Tensor([[1.0, 0.0], [0.0, 0.0]]), Tensor([[5.0, 6.0], [7.0, 8.0]]))
    assert np.array_equal(p.data, [[5.0, 6.0], [0.0, 0.0]])


def test_matmul_matches_triple_loop(rng):
    a, b = rng.normal(size=(3, 4)), rng.normal(size=(4, 2))
    np.testing.assert_allclose(T.matmul(Tensor(a), Tensor(b)).data, naive_matmul(a, b), rtol=1e-12)


def test_matmul_batch_broadcast(rng):
    a, b = rng.normal(size=(5, 3, 4)), rng.normal(size=(4, 2))
    out = T.matmul(Tensor(a), Tensor(b)).data
    for i in range(5):
        np.testing.assert_allclose(out[i], naive_matmul(a[i], b), rtol=1e-12)


def test_matmul_shape_error():
    with pytest.raises(ShapeError):
        T.matmul(Tensor(np.ones((2, 3))), Tensor(np.ones((2, 3))))


def test_matmul_associativity(rng):
    for _ in range(20):
        a, b, c = (Tensor(rng.normal(size=s)) for s in [(3, 4), (4, 5), (5, 2)])
        left = T.matmul(T.matmul(a, b), c).data
        right = T.matmul(a, T.matmul(b, c)).data
        assert np.max(np.abs(left - right)) <= 1e-9 * np.max(np.abs(left))


def test_svd3_identity_and_diagonal():
    u, s, v = T.svd3(np.eye(3))
    np.testing.assert_allclose(s, [1, 1, 1])
    np.testing.assert_allclose(u @ v.T, np.eye(3), atol=1e-12)
    _, s, _ = T.svd3(np.diag([3.0, 2.0, 1.0]))
    np.testing.assert_allclose(s, [3, 2, 1])


def test_svd3_random_reconstruction(rng):
    for _ in range(100):
        a = rng.normal(size=(3, 3)) * rng.uniform(0.1, 100)
        u, s, v = T.svd3(a)
        assert np.max(np.abs(u.T @ u - np.eye(3))) < 1e-10
        assert np.max(np.abs(v.T @ v - np.eye(3))) < 1e-10
        assert np.max(np.abs(a - u @ np.diag(s) @ v.T)) < 1e-10 * np.max(np.abs(a))
        assert np.all(s >= 0) and np.all(np.diff(s) <= 0)


def test_svd3_rejects_nonfinite():
    with pytest.raises(T.NumericalError):
        T.svd3(np.full((3, 3), np.nan))


def test_backward_sum_gives_ones(rng):
    w = Parameter(rng.normal(size=(3, 4)))
    T.backward(T.tsum(w))
    assert np.array_equal(w.grad, np.ones((3, 4)))


def test_backward_half_square_norm(rng):
    w = Parameter(rng.normal(size=(4, 2)))
    T.backward(T.scale(T.tsum(T.mul(w, w)), 0.5))
    np.testing.assert_allclose(w.grad, w.data, rtol=1e-15)


def test_gradients_accumulate_until_zeroed(rng):
    w = Parameter(rng.normal(size=(2, 2)))
    T.backward(T.tsum(w))
    T.backward(T.tsum(w))
    assert np.array_equal(w.grad, 2 * np.ones((2, 2)))
    T.zero_grads([w])
    assert np.array_equal(w.grad, np.zeros((2, 2)))


def test_backward_without_graph_is_state_error():
    with pytest.raises(StateError):
        T.backward(Tensor(1.0))


def test_backward_requires_scalar(rng):
    w = Parameter(rng.normal(size=(2, 2)))
    with pytest.raises(ShapeError):
        T.backward(T.scale(w, 2.0))


def test_no_grad_records_nothing(rng):
    w = Parameter(rng.normal(size=(2, 2)))
    with T.no_grad():
        out = T.tsum(w)
    assert out.is_leaf and not out.requires_grad


def test_debug_mode_flags_nonfinite():
    with T.debug_mode():
        with pytest.raises(T.NumericalError):
            T.scale(Tensor([1.0, np.inf]), 0.0)


OPS = {
    "relu": (lambda x, y: T.relu(x), (3, 4)),
    "add": (lambda x, y: T.add(x, y), (3, 4)),
    "bias_add": (lambda x, y: T.add(x, y), (4,)),
    "sub": (lambda x, y: T.sub(x, y), (3, 4)),
    "mul": (lambda x, y: T.mul(x, y), (3, 4)),
    "scale": (lambda x, y: T.scale(x, -2.5), (3, 4)),
    "transpose": (lambda x, y: T.transpose(x), (3, 4)),
    "matmul": (lambda x, y: T.matmul(x, T.transpose(y)), (3, 4)),
    "sum": (lambda x, y: T.tsum(x), (3, 4)),
    "mean": (lambda x, y: T.mean(x), (3, 4)),
}


@pytest.mark.parametrize("name", sorted(OPS))
def test_op_gradients_match_finite_differences(name, rng):
    op, y_shape = OPS[name]
    x = Parameter(rng.normal(size=(3, 4)))
    y = Parameter(rng.normal(size=y_shape))
    # keep relu inputs away from the kink
    x.data[np.abs(x.data) < 0.05] += 0.1
    weight = Tensor(rng.normal(size=op(x, y).shape))

    def loss():
        return T.tsum(T.mul(op(x, y), weight))

    T.backward(loss())
    for p in (x, y):
        assert relative_error(p.grad, numerical_grad(loss, p)) < 1e-4


def test_add_rejects_general_broadcast():
    with pytest.raises(ShapeError):
        T.add(Tensor(np.ones((2, 3))), Tensor(np.ones((2, 1))))
