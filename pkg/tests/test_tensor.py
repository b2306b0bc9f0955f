import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from idiomcloze import tensor as T


def test_softmax_uniform_on_equal_logits():
    out = T.softmax(T.Tensor([0.0, 0.0, 0.0]))
    np.testing.assert_allclose(out.data, [1 / 3, 1 / 3, 1 / 3], atol=1e-12)


def test_softmax_two_logits():
    out = T.softmax(T.Tensor([3.0, 1.0]))
    np.testing.assert_allclose(out.data, [0.8808, 0.1192], atol=1e-4)


@given(st.lists(st.floats(-50, 50), min_size=1, max_size=12),
       st.floats(-20, 20))
@settings(max_examples=60, deadline=None)
def test_softmax_positive_sums_to_one_and_shift_invariant(z, c):
    z = np.array(z)
    y = T.softmax(T.Tensor(z)).data
    assert (y > 0).all()
    assert abs(y.sum() - 1.0) <= 1e-9
    y_shift = T.softmax(T.Tensor(z + c)).data
    np.testing.assert_allclose(y, y_shift, atol=1e-9)


def test_max_over_axis_value_argmax_and_backward_routing():
    x = T.Tensor([[1.0, 5.0, 2.0]], requires_grad=True)
    val, idx = T.max_over_axis(x, axis=-1)
    assert val.data[0] == 5.0 and idx[0] == 1
    T.tsum(val).backward()
    np.testing.assert_array_equal(x.grad, [[0.0, 1.0, 0.0]])


def test_max_over_axis_tie_breaks_to_lowest_index():
    x = T.Tensor([[3.0, 3.0, 1.0]], requires_grad=True)
    val, idx = T.max_over_axis(x, axis=-1)
    assert idx[0] == 0
    T.tsum(val).backward()
    np.testing.assert_array_equal(x.grad, [[1.0, 0.0, 0.0]])


@given(st.integers(0, 10_000))
@settings(max_examples=40, deadline=None)
def test_max_backward_single_nonzero_at_a_maximum(seed):
    rng = np.random.default_rng(seed)
    x = T.Tensor(rng.normal(size=(3, 5)), requires_grad=True)
    val, idx = T.max_over_axis(x, axis=-1)
    T.tsum(val).backward()
    for r in range(3):
        nz = np.flatnonzero(x.grad[r])
        assert len(nz) == 1
        assert x.data[r, nz[0]] == x.data[r].max()


def test_shape_mismatch_is_structured():
    with pytest.raises(T.ShapeError) as exc:
        T.matmul(T.Tensor(np.ones((2, 3))), T.Tensor(np.ones((4, 2))))
    assert "matmul" in str(exc.value)
    assert "(2, 3)" in str(exc.value)


def test_non_finite_output_raises():
    with pytest.raises(T.NumericalError):
        T.log(T.Tensor([0.0]))
    big = T.Tensor([1e308])
    with np.errstate(over="ignore"):
        with pytest.raises(T.NumericalError):
            T.mul(big, big)


def test_check_gradient_constant_function_is_zero():
    err = T.check_gradient(lambda t: T.Tensor(3.0), np.array([1.0, 2.0]))
    assert err == 0.0


def test_check_gradient_sum_of_squares():
    x = np.array([1.0, 2.0])
    grads = {}

    def f(t):
        out = T.tsum(T.mul(t, t))
        return out

    err = T.check_gradient(f, x, eps=1e-5)
    assert err <= 1e-6
    probe = T.Tensor(x, requires_grad=True)
    T.tsum(T.mul(probe, probe)).backward()
    np.testing.assert_allclose(probe.grad, [2.0, 4.0], atol=1e-12)


def test_check_gradient_rejects_bad_eps():
    with pytest.raises(ValueError):
        T.check_gradient(lambda t: T.tsum(t), np.ones(2), eps=1e-2)


def test_gradient_accumulation_is_additive():
    x = T.Tensor([2.0], requires_grad=True)
    y = T.add(T.mul(x, x), T.mul(x, x))
    T.tsum(y).backward()
    np.testing.assert_allclose(x.grad, [8.0])


def test_embedding_lookup_and_backward():
    table = T.Tensor(np.arange(12.0).reshape(4, 3), requires_grad=True)
    out = T.embedding(table, np.array([1, 1, 3]))
    np.testing.assert_array_equal(out.data[0], [3, 4, 5])
    T.tsum(out).backward()
    np.testing.assert_array_equal(table.grad[1], [2, 2, 2])
    np.testing.assert_array_equal(table.grad[0], [0, 0, 0])


def test_embedding_out_of_range():
    table = T.Tensor(np.ones((4, 3)))
    with pytest.raises(IndexError):
        T.embedding(table, np.array([4]))


def test_masked_fill_blocks_gradient():
    x = T.Tensor([1.0, 2.0, 3.0], requires_grad=True)
    y = T.masked_fill(x, np.array([False, True, False]), -100.0)
    np.testing.assert_array_equal(y.data, [1.0, -100.0, 3.0])
    T.tsum(y).backward()
    np.testing.assert_array_equal(x.grad, [1.0, 0.0, 1.0])


def test_concat_and_split_backward():
    a = T.Tensor([1.0, 2.0], requires_grad=True)
    b = T.Tensor([3.0], requires_grad=True)
    out = T.concat([a, b])
    np.testing.assert_array_equal(out.data, [1, 2, 3])
    T.tsum(T.mul(out, T.Tensor([1.0, 2.0, 3.0]))).backward()
    np.testing.assert_array_equal(a.grad, [1.0, 2.0])
    np.testing.assert_array_equal(b.grad, [3.0])


def test_layer_norm_statistics():
    rng = np.random.default_rng(0)
    x = T.Tensor(rng.normal(2.0, 3.0, size=(5, 32)))
    out = T.layer_norm(x, T.Tensor(np.ones(32)), T.Tensor(np.zeros(32)))
    mean = out.data.mean(axis=-1)
    var = out.data.var(axis=-1)
    assert np.abs(mean).max() <= 1e-9
    np.testing.assert_allclose(var, 1.0, atol=1e-6)


# -- gradient checks per op -------------------------------------------------

def _rand(shape, rng):
    return rng.normal(size=shape)


def op_gradcheck_cases(rng):
    """Factories building a deterministic scalar-valued f per op; random
    constants are drawn once per trial so f is stable under probing."""
    def W(*shape):
        return T.Tensor(_rand(shape, rng))

    w24a, w24b, w24c = W(2, 4), W(2, 4), W(2, 4)
    return {
        "matmul": ((2, 3), lambda t, m=W(3, 4), w=W(2, 4):
                   T.tsum(T.mul(T.matmul(t, m), w))),
        "add": ((2, 4), lambda t, o=w24a, w=w24b: T.tsum(T.mul(T.add(t, o), w))),
        "mul": ((2, 4), lambda t, o=w24a, w=w24c: T.tsum(T.mul(T.mul(t, o), w))),
        "mul_by_vector": ((2, 4), lambda t, v=W(4), w=w24b:
                          T.tsum(T.mul(T.mul(t, v), w))),
        "dot": ((8,), lambda t, v=W(8): T.dot(t, v)),
        "bias_add": ((4,), lambda t, x=W(2, 4), w=w24a:
                     T.tsum(T.mul(T.add(x, t), w))),
        "softmax": ((2, 4), lambda t, w=w24b: T.tsum(T.mul(T.softmax(t), w))),
        "log": ((2, 4), lambda t, w=w24c:
                T.tsum(T.mul(T.log(T.add(T.mul(t, t), T.Tensor(np.ones((2, 4))))), w))),
        "max_over_axis": ((2, 4), lambda t, w=W(2):
                          T.tsum(T.mul(T.max_over_axis(t, axis=-1)[0], w))),
        "layer_norm": ((2, 4), lambda t, g=T.Tensor(np.abs(_rand((4,), rng)) + 0.5),
                       b=W(4), w=w24a:
                       T.tsum(T.mul(T.layer_norm(t, g, b), w))),
        "gelu": ((2, 4), lambda t, w=w24b: T.tsum(T.mul(T.gelu(t), w))),
        "concat": ((2, 4), lambda t, o=W(2, 4), w=W(4, 4):
                   T.tsum(T.mul(T.concat([t, o], axis=0), w))),
        "masked_fill": ((2, 4), lambda t, m=rng.random((2, 4)) < 0.3, w=w24c:
                        T.tsum(T.mul(T.masked_fill(t, m, -5.0), w))),
        "scale": ((2, 4), lambda t, w=w24a: T.tsum(T.mul(T.scale(t, -1.7), w))),
        "reshape": ((2, 4), lambda t, w=W(4, 2):
                    T.tsum(T.mul(T.reshape(t, (4, 2)), w))),
        "transpose": ((2, 4), lambda t, w=W(4, 2):
                      T.tsum(T.mul(T.transpose(t, (1, 0)), w))),
        "gather_positions": ((2, 2, 2), lambda t, w=W(2, 2):
                             T.tsum(T.mul(T.gather_positions(t, np.array([1, 0])), w))),
        "gather_last": ((2, 4), lambda t, w=W(2):
                        T.tsum(T.mul(T.gather_last(t, np.array([3, 0])), w))),
        "clamp_min": ((2, 4), lambda t, w=w24b:
                      T.tsum(T.mul(T.clamp_min(t, 0.1), w))),
    }


OP_NAMES = sorted(op_gradcheck_cases(np.random.default_rng(0)).keys())


@pytest.mark.parametrize("name", OP_NAMES)
def test_op_gradients_match_finite_differences(name):
    rng = np.random.default_rng(abs(hash(name)) % 2**32)
    worst = 0.0
    for _ in range(10):
        shape, f = op_gradcheck_cases(rng)[name]
        x = rng.normal(size=shape)
        worst = max(worst, T.check_gradient(f, x, eps=1e-5))
    assert worst <= 1e-4, f"{name}: max relative error {worst}"


def test_embedding_gradient_matches_finite_differences():
    rng = np.random.default_rng(7)
    ids = np.array([0, 2, 2, 1])
    weights = rng.normal(size=(4, 3))

    def f(table):
        return T.tsum(T.mul(T.embedding(table, ids), T.Tensor(weights)))

    assert T.check_gradient(f, rng.normal(size=(3, 3)), eps=1e-5) <= 1e-4


def test_backward_requires_scalar():
    x = T.Tensor(np.ones((2, 2)), requires_grad=True)
    with pytest.raises(T.ShapeError):
        T.mul(x, x).backward()
