import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from chrono_dce import tensor as tc
from chrono_dce.tensor import Tensor, grad_check


def leaf(a):
    return Tensor(np.asarray(a, dtype=float), requires_grad=True)


def test_mul_is_hadamard():
    out = tc.elementwise("mul", Tensor([1.0, 2, 3]), Tensor([4.0, 5, 6]))
    assert out.data.tolist() == [4, 10, 18]


def test_relu_values_and_zero_gradient_at_zero():
    x = leaf([-1.0, 0.0, 2.0])
    y = tc.relu(x)
    assert y.data.tolist() == [0, 0, 2]
    tc.backward(tc.reduce(y, 0, "sum"))
    assert x.grad.tolist() == [0, 0, 1]


def test_add_zeros_is_identity():
    x = np.random.default_rng(0).normal(size=(3, 4))
    assert np.array_equal(tc.add(Tensor(x), Tensor(np.zeros((3, 4)))).data, x)


def test_shape_mismatch_names_both_shapes():
    with pytest.raises(ValueError, match=r"\(2,\).*\(3,\)"):
        tc.add(Tensor([1.0, 2]), Tensor([1.0, 2, 3]))


def test_matmul_examples():
    m = Tensor([[1.0, 2], [3, 4]])
    assert np.array_equal(tc.matmul(Tensor(np.eye(2)), m).data, m.data)
    assert tc.matmul(Tensor([[1.0, 2]]), Tensor([[3.0], [4]])).data.tolist() == [[11]]
    with pytest.raises(ValueError):
        tc.matmul(Tensor(np.ones((2, 3))), Tensor(np.ones((2, 3))))


def test_matmul_grad_is_ones_times_b_transpose():
    rng = np.random.default_rng(1)
    a, b = leaf(rng.normal(size=(3, 4))), Tensor(rng.normal(size=(4, 2)))
    tc.backward(tc.reduce(tc.reduce(tc.matmul(a, b), 1, "sum"), 0, "sum"))
    assert np.allclose(a.grad, np.ones((3, 2)) @ b.data.T, atol=1e-12)
    assert grad_check(lambda t: tc.reduce(tc.reduce(tc.matmul(t, b), 1, "sum"), 0, "sum"), a.data) < 1e-8


@pytest.mark.parametrize("w, expected", [
    ([[[1.0]]], [1.0, 2.0, 3.0]),
    ([[[0.0, 1.0, 0.0]]], [1.0, 2.0, 3.0]),
    ([[[1.0, 1.0, 1.0]]], [3.0, 6.0, 5.0]),
])
def test_conv_temporal_examples(w, expected):
    out = tc.conv_temporal(Tensor([[1.0, 2.0, 3.0]]), Tensor(w))
    assert np.allclose(out.data, [expected])


def test_conv_rejects_even_kernel_and_bad_dilation():
    x = Tensor(np.ones((1, 5)))
    with pytest.raises(ValueError):
        tc.conv_temporal(x, Tensor(np.ones((1, 1, 2))))
    with pytest.raises(ValueError):
        tc.conv_temporal(x, Tensor(np.ones((1, 1, 3))), dilation=0)


def _conv_reference(x, w, dilation, stride):
    """Direct loop over the definition with explicit zero padding."""
    c_in, nb, t_len, nj = x.shape
    c_out, _, k = w.shape
    pad = dilation * (k - 1) // 2
    xp = np.zeros((c_in, nb, t_len + 2 * pad, nj))
    xp[:, :, pad:pad + t_len] = x
    outs = []
    for t in range(0, t_len, stride):
        acc = np.zeros((c_out, nb, nj))
        for j in range(k):
            acc += np.einsum("oc,cbn->obn", w[:, :, j], xp[:, :, t + j * dilation])
        outs.append(acc)
    return np.stack(outs, axis=2)


@pytest.mark.parametrize("dilation,stride,k", [(1, 1, 3), (2, 1, 3), (3, 2, 3), (1, 2, 5), (2, 3, 1)])
def test_temporal_conv_matches_loop_and_finite_differences(dilation, stride, k):
    rng = np.random.default_rng(dilation * 10 + stride)
    x = rng.normal(size=(2, 2, 11, 3))
    w = rng.normal(size=(3, 2, k))
    b = rng.normal(size=3)
    out = tc.temporal_conv(Tensor(x), Tensor(w), dilation, stride, bias=Tensor(b))
    ref = _conv_reference(x, w, dilation, stride) + b[:, None, None, None]
    assert np.allclose(out.data, ref, atol=1e-12)
    probe = rng.normal(size=out.shape)

    def f_x(t):
        return tc.reduce(tc.reshape(tc.mul(tc.temporal_conv(t, Tensor(w), dilation, stride), Tensor(probe)), (-1,)), 0)

    def f_w(t):
        return tc.reduce(tc.reshape(tc.mul(tc.temporal_conv(Tensor(x), t, dilation, stride), Tensor(probe)), (-1,)), 0)

    assert grad_check(f_x, x) < 1e-7
    assert grad_check(f_w, w) < 1e-7


def test_reduce_examples():
    assert tc.reduce(Tensor([2.0, 4, 6]), 0, "mean").item() == 4
    assert tc.reduce(Tensor(np.ones((3, 5))), 1, "sum").data.tolist() == [5, 5, 5]
    x = leaf([1.0, 3.0, 3.0])
    tc.backward(tc.reduce(x, 0, "max"))
    assert x.grad.tolist() == [0, 1, 0]
    with pytest.raises(ValueError):
        tc.reduce(x, 1)


def test_backward_examples_and_accumulation():
    x = leaf(np.arange(5.0))
    tc.backward(tc.reduce(x, 0, "sum"))
    assert x.grad.tolist() == [1] * 5
    y = leaf([1.0, 2.0])
    tc.backward(tc.reduce(tc.mul(y, y), 0, "sum"))
    assert y.grad.tolist() == [2, 4]
    tc.backward(tc.reduce(tc.mul(y, y), 0, "sum"))
    assert y.grad.tolist() == [4, 8]
    with pytest.raises(ValueError):
        tc.backward(tc.mul(y, y))


def test_unreachable_tensor_gets_no_grad():
    a, b = leaf([1.0, 2.0]), leaf([3.0, 4.0])
    tc.backward(tc.reduce(a, 0, "sum"))
    assert b.grad is None


def test_every_reachable_tensor_gets_grad():
    a = leaf([1.0, -2.0])
    mid = tc.relu(tc.scale(a, 3.0))
    loss = tc.reduce(mid, 0, "sum")
    tc.backward(loss)
    assert mid.grad is not None and a.grad is not None and loss.grad is not None


def test_grad_check_sum_is_exact():
    x = np.random.default_rng(3).normal(size=(4, 3))
    # the widest allowed step keeps summation rounding below 1e-12
    assert grad_check(lambda t: tc.reduce(tc.reduce(t, 1, "sum"), 0, "sum"), x, eps=1e-3) < 1e-12


def test_grad_check_rejects_vector_output_and_bad_eps():
    with pytest.raises(ValueError):
        grad_check(lambda t: t, np.ones(3))
    with pytest.raises(ValueError):
        grad_check(lambda t: tc.reduce(t, 0), np.ones(3), eps=1e-2)


def _away_from_kinks(x, margin=0.1):
    return np.where(np.abs(x) < margin, np.sign(x + 1e-300) * margin + x, x)


OPS = {
    "add": lambda t, c: tc.add(t, Tensor(c)),
    "sub": lambda t, c: tc.sub(Tensor(c), t),
    "mul": lambda t, c: tc.mul(t, Tensor(c)),
    "relu": lambda t, c: tc.relu(t),
    "scale": lambda t, c: tc.scale(t, -2.5),
    "matmul": lambda t, c: tc.matmul(t, Tensor(c.T)),
    "mean0": lambda t, c: tc.reduce(t, 0, "mean"),
    "max1": lambda t, c: tc.reduce(t, 1, "max"),
    "transpose": lambda t, c: tc.transpose(t, (1, 0)),
    "take": lambda t, c: tc.take(t, (slice(None), slice(1, None, 2))),
    "xent": lambda t, c: tc.softmax_cross_entropy(t, [0, 2, 1, 3]),
    "minmax": lambda t, c: tc.minmax_normalize(t, axis=1)[0],
    "bias": lambda t, c: tc.add_channel_bias(t, Tensor(c[:, 0])),
}


@pytest.mark.parametrize("name", sorted(OPS))
def test_grad_check_every_op_over_seeds(name):
    op = OPS[name]
    for seed in range(100):
        rng = np.random.default_rng(seed)
        x = _away_from_kinks(rng.normal(size=(4, 5)))
        c = rng.normal(size=(4, 5))
        proj = None

        def f(t):
            nonlocal proj
            out = op(t, c)
            if proj is None:
                proj = np.random.default_rng(seed + 1000).normal(size=out.shape)
            flat = tc.reshape(tc.mul(out, Tensor(proj)), (-1,))
            return tc.reduce(flat, 0, "sum")

        if name == "max1":
            # keep the argmax clear of ties
            x = x + np.arange(5)[None, :] * 3.0
        if name == "minmax":
            x = x + np.arange(5)[None, :] * 3.0
        assert grad_check(f, x) < 1e-4, (name, seed)


@settings(max_examples=50, deadline=None)
@given(st.floats(-3, 3), st.floats(-3, 3), st.integers(0, 10_000))
def test_backward_is_linear(a, b, seed):
    rng = np.random.default_rng(seed)
    x0 = rng.normal(size=6)
    c = rng.normal(size=6)

    def f(t):
        return tc.reduce(tc.mul(tc.relu(t), Tensor(c)), 0, "sum")

    def g(t):
        return tc.reduce(tc.mul(t, t), 0, "mean")

    x = leaf(x0)
    tc.backward(tc.add(tc.scale(f(x), a), tc.scale(g(x), b)))
    xf, xg = leaf(x0), leaf(x0)
    tc.backward(f(xf))
    tc.backward(g(xg))
    assert np.allclose(x.grad, a * xf.grad + b * xg.grad, atol=1e-12, rtol=0)


def test_deterministic_forward_backward():
    def run():
        rng = np.random.default_rng(7)
        x = leaf(rng.normal(size=(2, 1, 9, 2)))
        w = leaf(rng.normal(size=(3, 2, 3)))
        loss = tc.reduce(tc.reshape(tc.relu(tc.temporal_conv(x, w, 2)), (-1,)), 0, "sum")
        tc.backward(loss)
        return loss.data.tobytes(), x.grad.tobytes(), w.grad.tobytes()

    assert run() == run()


def test_minmax_normalize_flags_constant_rows():
    out, deg = tc.minmax_normalize(Tensor([[2.0, 4.0, 6.0], [1.0, 1.0, 1.0]]), axis=1)
    assert np.allclose(out.data, [[0, 0.5, 1], [0, 0, 0]])
    assert deg.tolist() == [False, True]
