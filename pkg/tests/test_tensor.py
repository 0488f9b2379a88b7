import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from ctxaffect.errors import ContractError, NumericError
from ctxaffect.tensor import (
    ComputationRecord, Tensor, amax, backward, concat, exp, gradient_check, log, matmul, mean, no_grad,
    reshape, sqrt, stack, transpose, tsum, where,
)

finite = st.floats(-3, 3, allow_nan=False, allow_infinity=False)


def test_sum_of_product_gradient():
    x = Tensor([1.0, 2.0, 3.0], requires_grad=True)
    y = Tensor([4.0, 5.0, 6.0], requires_grad=True)
    backward(tsum(x * y))
    np.testing.assert_array_equal(x.grad, [4, 5, 6])
    np.testing.assert_array_equal(y.grad, [1, 2, 3])


def test_fan_out_accumulates():
    x = Tensor(3.0, requires_grad=True)
    backward(x * x + x)
    assert x.grad == pytest.approx(7.0)


def test_broadcast_gradient_sums_over_expanded_axes():
    x = Tensor(np.ones((2, 3)), requires_grad=True)
    b = Tensor(np.ones(3), requires_grad=True)
    backward(tsum(x + b))
    np.testing.assert_array_equal(b.grad, [2, 2, 2])


def test_leaf_gradients_accumulate_across_backward_calls():
    x = Tensor([1.0, 2.0], requires_grad=True)
    backward(tsum(x * 2.0))
    backward(tsum(x * 3.0))
    np.testing.assert_array_equal(x.grad, [5, 5])


def test_graph_can_only_be_traversed_once():
    x = Tensor(2.0, requires_grad=True)
    y = x * x
    backward(y)
    with pytest.raises(ContractError):
        backward(y)


def test_backward_requires_scalar():
    x = Tensor([1.0, 2.0], requires_grad=True)
    with pytest.raises(ContractError):
        backward(x * 2.0)


def test_item_requires_single_element():
    with pytest.raises(ContractError):
        Tensor([1.0, 2.0]).item()
    assert Tensor([[4.0]]).item() == 4.0


def test_no_grad_records_nothing():
    x = Tensor([1.0, 2.0], requires_grad=True)
    with no_grad():
        y = x * 2.0
    assert not y.requires_grad and y.is_leaf


def test_record_is_topological():
    x = Tensor(1.0, requires_grad=True)
    y = exp(x)
    z = y * x
    rec = ComputationRecord.from_output(z)
    pos = {id(n): i for i, n in enumerate(rec.nodes)}
    assert pos[id(x)] < pos[id(y)] < pos[id(z)]
    assert "exp" in rec.ops()


def test_amax_gradient_goes_to_first_maximum():
    x = Tensor([1.0, 3.0, 3.0, 0.0], requires_grad=True)
    backward(tsum(amax(x, axis=0)))
    np.testing.assert_array_equal(x.grad, [0, 1, 0, 0])


def test_getitem_repeated_indices_accumulate():
    x = Tensor([1.0, 2.0, 3.0], requires_grad=True)
    backward(tsum(x[np.array([0, 0, 2])]))
    np.testing.assert_array_equal(x.grad, [2, 0, 1])


def test_gradient_check_detects_wrong_adjoint():
    from ctxaffect.tensor import make_op

    def bad_square(x):
        return make_op(x.data ** 2, (x,), lambda g: (g * x.data,), "bad")  # missing factor 2

    x = Tensor([0.5, 1.5], requires_grad=True)
    assert gradient_check(lambda x: tsum(bad_square(x)), x) > 0.1


@pytest.mark.filterwarnings("ignore:invalid value")
def test_gradient_check_rejects_non_finite():
    x = Tensor([-1.0], requires_grad=True)
    with pytest.raises(NumericError):
        gradient_check(lambda x: tsum(log(x)), x)


@settings(max_examples=30, deadline=None)
@given(arrays(np.float64, (3, 4), elements=finite), arrays(np.float64, (4, 2), elements=finite))
def test_matmul_gradient_property(a, b):
    A, B = Tensor(a), Tensor(b)
    assert gradient_check(lambda A, B: tsum(matmul(A, B) * np.arange(6.0).reshape(3, 2)), [A, B]) < 1e-6


@settings(max_examples=30, deadline=None)
@given(arrays(np.float64, (2, 3, 4), elements=finite))
def test_shape_ops_gradient_property(a):
    x = Tensor(a)
    w = np.linspace(-1, 1, 24).reshape(4, 3, 2)

    def f(x):
        y = transpose(reshape(x, (6, 4)), (1, 0))
        z = concat([y, y * 2.0], axis=1)
        s = stack([z, z], axis=0)
        return tsum(reshape(s[:, :, :3], (4, 3, 2)) * w) + mean(x)

    assert gradient_check(f, x) < 1e-6


@settings(max_examples=30, deadline=None)
@given(arrays(np.float64, (5,), elements=st.floats(0.1, 4)))
def test_elementwise_math_gradient_property(a):
    x = Tensor(a)
    assert gradient_check(lambda x: tsum(sqrt(x) * log(x) + exp(-x) / x + x ** 3), x) < 1e-5


def test_where_routes_gradient():
    x = Tensor([1.0, 2.0, 3.0], requires_grad=True)
    backward(tsum(where(np.array([True, False, True]), x, x * 10.0)))
    np.testing.assert_array_equal(x.grad, [1, 10, 1])
