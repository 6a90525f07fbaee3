"""Forward values and finite-difference gradient checks for every
operation kind of the tensor engine."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ctrbench.errors import ConfigError, DimensionError
from ctrbench import ndgrad as ng

FD_STEP = 1e-5


def fd_gradient(f, x: np.ndarray, step: float = FD_STEP) -> np.ndarray:
    """Central-difference gradient of scalar-valued f at x."""
    g = np.zeros_like(x)
    flat = x.reshape(-1)
    gf = g.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + step
        up = f()
        flat[i] = orig - step
        down = f()
        flat[i] = orig
        gf[i] = (up - down) / (2 * step)
    return g


def check_op(make_loss, tensors, tol=1e-6):
    """Run backward and compare each tensor's grad with finite differences."""
    with ng.Tape():
        loss = make_loss()
        ng.backward(loss)
    for t in tensors:
        analytic = t.grad.copy()
        t.grad = None
        fd = fd_gradient(lambda: make_loss().item(), t.data)
        err = ng.relative_error(analytic, fd)
        assert err.max() <= tol, f"max rel err {err.max():.2e} > {tol}"


def test_sigmoid_at_zero():
    out = ng.sigmoid(ng.Tensor([0.0]))
    np.testing.assert_array_equal(out.data, [0.5])


def test_matmul_hand_case():
    a = ng.Tensor([[1.0, 2.0], [3.0, 4.0]])
    b = ng.Tensor([[1.0], [1.0]])
    np.testing.assert_array_equal(ng.matmul(a, b).data, [[3.0], [7.0]])


def test_embedding_lookup_gather():
    table = ng.Tensor([[1.0, 0.0], [0.0, 1.0]])
    out = ng.embedding_lookup(table, np.array([1, 1]))
    np.testing.assert_array_equal(out.data, [[0.0, 1.0], [0.0, 1.0]])


def test_sigmoid_grad_at_zero():
    w = ng.Tensor([0.0], requires_grad=True)
    with ng.Tape():
        loss = ng.sum_reduce(ng.sigmoid(w))
        ng.backward(loss)
    np.testing.assert_allclose(w.grad, [0.25], rtol=0, atol=1e-15)


def test_embedding_backward_is_scatter_add():
    table = ng.Tensor(np.zeros((4, 3)), requires_grad=True)
    with ng.Tape():
        loss = ng.sum_reduce(ng.embedding_lookup(table, np.array([2, 2])))
        ng.backward(loss)
    expected = np.zeros((4, 3))
    expected[2] = 2.0
    np.testing.assert_array_equal(table.grad, expected)


def test_matmul_grads_match_finite_differences():
    rng = np.random.default_rng(7)
    a = ng.Tensor(rng.normal(size=(3, 2)), requires_grad=True)
    b = ng.Tensor(rng.normal(size=(2, 4)), requires_grad=True)
    check_op(lambda: ng.sum_reduce(ng.matmul(a, b)), [a, b], tol=1e-6)


@pytest.mark.parametrize("shape_a,shape_b", [((3, 4), (3, 4)), ((3, 4), (4,)), ((3, 1), (3, 4))])
@pytest.mark.parametrize("op", [ng.add, ng.sub, ng.elementwise_mul])
def test_binary_op_gradients(op, shape_a, shape_b):
    rng = np.random.default_rng(11)
    a = ng.Tensor(rng.normal(size=shape_a), requires_grad=True)
    b = ng.Tensor(rng.normal(size=shape_b), requires_grad=True)
    check_op(lambda: ng.sum_reduce(ng.square(op(a, b))), [a, b])


@pytest.mark.parametrize("axis", [None, 0, 1])
@pytest.mark.parametrize("reducer", [ng.sum_reduce, ng.mean_reduce])
def test_reduce_gradients(reducer, axis):
    rng = np.random.default_rng(13)
    x = ng.Tensor(rng.normal(size=(4, 5)), requires_grad=True)
    check_op(lambda: ng.sum_reduce(ng.square(reducer(x, axis))), [x])


def test_concat_gradients():
    rng = np.random.default_rng(17)
    a = ng.Tensor(rng.normal(size=(2, 3)), requires_grad=True)
    b = ng.Tensor(rng.normal(size=(2, 2)), requires_grad=True)
    check_op(lambda: ng.sum_reduce(ng.square(ng.concat([a, b], axis=1))), [a, b])


@pytest.mark.parametrize("unary,tol", [
    (ng.sigmoid, 1e-4),
    (ng.relu, 1e-6),
    (ng.square, 1e-6),
    (ng.softplus, 1e-4),
])
def test_unary_op_gradients(unary, tol):
    rng = np.random.default_rng(19)
    # keep away from relu's kink at 0
    x = ng.Tensor(rng.normal(size=(3, 4)) + np.sign(rng.normal(size=(3, 4))) * 0.2,
                  requires_grad=True)
    check_op(lambda: ng.sum_reduce(unary(x)), [x], tol=tol)


def test_sqrt_safe_gradient_and_floor():
    x = ng.Tensor([4.0, 0.25, 1e-15], requires_grad=True)
    with ng.Tape():
        out = ng.sqrt_safe(x)
        np.testing.assert_allclose(out.data[:2], [2.0, 0.5])
        ng.backward(ng.sum_reduce(out))
    # derivative clamps to zero below the floor
    np.testing.assert_allclose(x.grad, [0.25, 1.0, 0.0], rtol=1e-12)


def test_softmax_gradient_and_normalization():
    rng = np.random.default_rng(23)
    x = ng.Tensor(rng.normal(size=(4, 6)), requires_grad=True)
    p = ng.Tensor(rng.normal(size=(4, 6)))
    out = ng.softmax(x, axis=1)
    np.testing.assert_allclose(out.data.sum(axis=1), 1.0, rtol=1e-12)
    check_op(lambda: ng.sum_reduce(ng.elementwise_mul(ng.softmax(x, axis=1), p)), [x],
             tol=1e-4)


def test_transpose_reshape_slice_gradients():
    rng = np.random.default_rng(29)
    x = ng.Tensor(rng.normal(size=(2, 3, 4)), requires_grad=True)
    check_op(lambda: ng.sum_reduce(ng.square(ng.transpose(x, (2, 0, 1)))), [x])
    check_op(lambda: ng.sum_reduce(ng.square(ng.reshape(x, (6, 4)))), [x])
    check_op(lambda: ng.sum_reduce(ng.square(ng.slice_tensor(x, (slice(None), 1)))), [x])


def test_batch_norm_train_gradients():
    rng = np.random.default_rng(31)
    x = ng.Tensor(rng.normal(size=(6, 3)), requires_grad=True)
    gamma = ng.Tensor(rng.normal(size=3) + 1.0, requires_grad=True)
    beta = ng.Tensor(rng.normal(size=3), requires_grad=True)
    state = ng.BatchNormState(3)
    weight = ng.Tensor(rng.normal(size=(6, 3)))

    def loss():
        out = ng.batch_norm(x, gamma, beta, state, train_mode=True)
        return ng.sum_reduce(ng.elementwise_mul(out, weight))

    check_op(loss, [x, gamma, beta], tol=1e-4)


def test_batch_norm_eval_uses_running_stats():
    x = ng.Tensor(np.arange(12.0).reshape(4, 3))
    gamma = ng.Tensor(np.ones(3), requires_grad=True)
    beta = ng.Tensor(np.zeros(3), requires_grad=True)
    state = ng.BatchNormState(3)
    ng.batch_norm(x, gamma, beta, state, train_mode=True)
    out = ng.batch_norm(x, gamma, beta, state, train_mode=False)
    expected = (x.data - state.running_mean) / np.sqrt(state.running_var + state.eps)
    np.testing.assert_allclose(out.data, expected, rtol=1e-12)


def test_dropout_identity_contracts():
    rng = np.random.default_rng(37)
    x = ng.Tensor(rng.normal(size=(5, 4)), requires_grad=True)
    assert ng.dropout(x, 0.5, train_mode=False) is x
    assert ng.dropout(x, 0.0, train_mode=True) is x
    assert ng.dropout(x, 0.0, train_mode=False) is x


def test_dropout_masks_reproducible_and_differentiable():
    rng = np.random.default_rng(41)
    x = ng.Tensor(rng.normal(size=(8, 4)), requires_grad=True)
    a = ng.dropout(x, 0.4, True, seed=123)
    b = ng.dropout(x, 0.4, True, seed=123)
    np.testing.assert_array_equal(a.data, b.data)
    check_op(lambda: ng.sum_reduce(ng.square(ng.dropout(x, 0.4, True, seed=123))), [x])


def test_dropout_scales_surviving_entries():
    x = ng.Tensor(np.ones((1000, 4)))
    out = ng.dropout(x, 0.25, True, seed=7)
    kept = out.data[out.data > 0]
    np.testing.assert_allclose(kept, 1.0 / 0.75)
    assert abs((out.data > 0).mean() - 0.75) < 0.05


@settings(max_examples=50, deadline=None)
@given(st.integers(1, 8), st.integers(1, 8))
def test_sum_of_concat_is_additive(n, m):
    rng = np.random.default_rng(n * 100 + m)
    a = ng.Tensor(rng.normal(size=n))
    b = ng.Tensor(rng.normal(size=m))
    joint = ng.sum_reduce(ng.concat([a, b])).item()
    split = ng.sum_reduce(a).item() + ng.sum_reduce(b).item()
    assert abs(joint - split) <= 1e-12


def test_random_op_compositions_match_finite_differences():
    """Randomized sweep over all differentiable kinds on small shapes."""
    rng = np.random.default_rng(43)
    for trial in range(30):
        n, m = rng.integers(1, 5, size=2)
        x = ng.Tensor(rng.normal(size=(int(n), int(m))), requires_grad=True)
        w = ng.Tensor(rng.normal(size=(int(m), 2)), requires_grad=True)

        def loss():
            h = ng.matmul(x, w)
            h = ng.softplus(h)
            h = ng.elementwise_mul(h, h)
            return ng.mean_reduce(h)

        check_op(loss, [x, w], tol=1e-4)


def test_embedding_lookup_grads_match_finite_differences():
    rng = np.random.default_rng(53)
    table = ng.Tensor(rng.normal(size=(6, 3)), requires_grad=True)
    idx = np.array([[0, 2], [2, 5]])
    check_op(lambda: ng.sum_reduce(ng.square(ng.embedding_lookup(table, idx))),
             [table])


def test_float32_storage_mode_propagates():
    # data may be stored in 32-bit; ops must not silently upcast it
    x = ng.Tensor(np.ones((4, 3)), dtype=np.float32)
    w = ng.Tensor(np.ones((3, 2)), dtype=np.float32)
    out = ng.relu(ng.matmul(x, w))
    assert out.data.dtype == np.float32
    assert ng.dropout(x, 0.5, True, seed=1).data.dtype == np.float32
    assert ng.softmax(x, axis=1).data.dtype == np.float32


def test_op_forward_dispatch_and_unknown_kind():
    a = ng.Tensor([[1.0, 2.0]])
    b = ng.Tensor([[3.0], [4.0]])
    out = ng.op_forward("matmul", [a, b])
    np.testing.assert_array_equal(out.data, [[11.0]])
    out = ng.op_forward("scalar_mul", [a], scalar=2.0)
    np.testing.assert_array_equal(out.data, [[2.0, 4.0]])
    with pytest.raises(ConfigError):
        ng.op_forward("convolve", [a])


def test_shape_mismatch_names_operation():
    a = ng.Tensor(np.ones((2, 3)))
    b = ng.Tensor(np.ones((4, 5)))
    with pytest.raises(DimensionError, match="matmul"):
        ng.matmul(a, b)
    with pytest.raises(DimensionError, match="add"):
        ng.add(a, b)
