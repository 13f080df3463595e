import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from motifsnn.autodiff import (
    ShapeError,
    Tensor,
    add,
    backward,
    fast_sigmoid_grad,
    finite_difference_gradient,
    matmul,
    mul,
    scale,
    softmax_cross_entropy,
    spike_threshold,
    sub,
    time_sum,
    topological_order,
    total,
    transpose,
    vstack,
)


def rel_err(a, b):
    a, b = np.asarray(a), np.asarray(b)
    return np.max(np.abs(a - b)) / max(np.max(np.abs(b)), 1e-12)


def grad_of(fn, *arrays):
    ts = [Tensor(a, requires_grad=True) for a in arrays]
    backward(fn(*ts))
    return [t.grad for t in ts]


class TestMatmul:
    def test_identity(self):
        m = np.arange(6.0).reshape(2, 3)
        np.testing.assert_array_equal(matmul(Tensor(np.eye(2)), Tensor(m)).values, m)

    def test_hand_product(self):
        assert matmul(Tensor([[1.0, 2.0]]), Tensor([[3.0], [4.0]])).values.tolist() == [[11.0]]

    def test_shape_error_reports_both_shapes(self):
        with pytest.raises(ShapeError, match=r"\(2, 3\).*\(2, 3\)"):
            matmul(Tensor(np.zeros((2, 3))), Tensor(np.zeros((2, 3))))

    def test_gradient_matches_finite_differences(self):
        rng = np.random.default_rng(0)
        a, b = rng.normal(size=(3, 3)), rng.normal(size=(3, 3))
        ga, gb = grad_of(lambda x, y: total(matmul(x, y)), a, b)
        fd_a = finite_difference_gradient(lambda x: total(matmul(x, Tensor(b))), Tensor(a)).values
        fd_b = finite_difference_gradient(lambda y: total(matmul(Tensor(a), y)), Tensor(b)).values
        assert rel_err(ga, fd_a) < 1e-6
        assert rel_err(gb, fd_b) < 1e-6


class TestElementwise:
    def test_identities(self):
        a = Tensor(np.random.default_rng(1).normal(size=(3, 2)))
        np.testing.assert_array_equal(add(a, 0).values, a.values)
        np.testing.assert_array_equal(scale(a, 1).values, a.values)

    def test_shape_mismatch(self):
        with pytest.raises(ShapeError):
            add(Tensor(np.zeros((2, 2))), Tensor(np.zeros((2, 3))))
        with pytest.raises(ShapeError):
            mul(Tensor(np.zeros((2, 2))), Tensor(np.zeros((3, 2))))

    def test_mul_backward(self):
        rng = np.random.default_rng(2)
        a, b = rng.normal(size=(4, 3)), rng.normal(size=(4, 3))
        ga, gb = grad_of(lambda x, y: total(mul(x, y)), a, b)
        fd = finite_difference_gradient(lambda x: total(mul(x, Tensor(b))), Tensor(a)).values
        assert rel_err(ga, fd) < 1e-6
        np.testing.assert_allclose(gb, a)

    def test_sub_and_operators(self):
        a = Tensor([[1.0, 2.0]], requires_grad=True)
        b = Tensor([[5.0, 7.0]], requires_grad=True)
        out = total(3.0 * (b - a) + (-a) + 1.0 - a)
        assert out.item() == pytest.approx(3 * 9 - 3 + 2 - 3)
        backward(out)
        np.testing.assert_array_equal(a.grad, [[-5.0, -5.0]])
        np.testing.assert_array_equal(b.grad, [[3.0, 3.0]])


class TestSpikeThreshold:
    def test_strict_inequality(self):
        assert spike_threshold(Tensor([[1.0]]), 1.0).item() == 0.0

    def test_above_threshold(self):
        assert spike_threshold(Tensor([[1.05]]), 1.0).item() == 1.0

    def test_surrogate_peak_is_one(self):
        u = Tensor([[1.0]], requires_grad=True)
        backward(total(spike_threshold(u, 1.0, slope=25.0)))
        assert u.grad[0, 0] == 1.0

    @given(st.floats(-5, 5, allow_nan=False), st.floats(0.1, 100))
    def test_surrogate_even_and_decreasing(self, d, slope):
        g = fast_sigmoid_grad(np.array([d, -d, abs(d) + 0.1]), slope)
        assert g[0] == g[1]
        assert g[2] < g[0] <= 1.0

    @given(st.lists(st.floats(-3, 3, allow_nan=False), min_size=1, max_size=20))
    def test_forward_is_binary(self, xs):
        out = spike_threshold(Tensor([xs]), 0.5).values
        assert set(np.unique(out)) <= {0.0, 1.0}


class TestBackward:
    def test_sum_gives_ones(self):
        a = Tensor(np.arange(4.0).reshape(2, 2), requires_grad=True)
        backward(total(a))
        np.testing.assert_array_equal(a.grad, np.ones((2, 2)))

    def test_reuse_accumulates(self):
        rng = np.random.default_rng(3)
        a0 = rng.normal(size=(3, 3))
        (g,) = grad_of(lambda a: total(mul(a, a)), a0)
        np.testing.assert_allclose(g, 2 * a0)
        fd = finite_difference_gradient(lambda a: total(mul(a, a)), Tensor(a0)).values
        assert rel_err(g, fd) < 1e-6

    def test_no_grad_flag(self):
        a = Tensor(np.ones((2, 2)))
        b = Tensor(np.ones((2, 2)), requires_grad=True)
        backward(total(mul(a, b)))
        assert a.grad is None
        assert b.grad is not None

    def test_non_scalar_root(self):
        with pytest.raises(ValueError, match="scalar"):
            backward(Tensor(np.ones((2, 2)), requires_grad=True))

    def test_deterministic_traversal(self):
        rng = np.random.default_rng(4)
        w = Tensor(rng.normal(size=(5, 4)), requires_grad=True)
        x = Tensor(rng.normal(size=(6, 5)))
        root = softmax_cross_entropy(matmul(x, w), [0, 1, 2, 3, 0, 1])
        backward(root)
        first = w.grad.copy()
        w.zero_grad()
        backward(root)
        assert np.array_equal(first, w.grad)

    def test_topological_order_visits_each_node_once(self):
        a = Tensor(np.ones((2, 2)), requires_grad=True)
        b = mul(a, a)
        c = add(b, a)
        root = total(add(c, b))
        order = topological_order(root)
        assert len(order) == len({id(n) for n in order})
        pos = {id(n): i for i, n in enumerate(order)}
        for n in order:
            for p in n._parents:
                if p.requires_grad:
                    assert pos[id(p)] < pos[id(n)]


class TestStructuralOps:
    def test_transpose_vstack_time_sum_gradients(self):
        rng = np.random.default_rng(5)
        a0, b0 = rng.normal(size=(2, 3)), rng.normal(size=(4, 3))
        weights = rng.normal(size=(3, 3))

        def f(a, b):
            stacked = vstack([a, b])  # 6 x 3 -> 3 steps x batch 2
            return total(mul(time_sum(matmul(stacked, transpose(Tensor(weights))), 3),
                             Tensor(np.arange(6.0).reshape(2, 3))))

        ga, gb = grad_of(f, a0, b0)
        fd_a = finite_difference_gradient(lambda a: f(a, Tensor(b0)), Tensor(a0)).values
        fd_b = finite_difference_gradient(lambda b: f(Tensor(a0), b), Tensor(b0)).values
        assert rel_err(ga, fd_a) < 1e-6
        assert rel_err(gb, fd_b) < 1e-6

    def test_softmax_ce_symmetric(self):
        out = softmax_cross_entropy(Tensor([[10.0, 10.0, 10.0]]), [1])
        assert out.item() == pytest.approx(np.log(3))

    def test_softmax_ce_bad_label(self):
        with pytest.raises(ValueError):
            softmax_cross_entropy(Tensor([[1.0, 2.0, 3.0]]), [3])


class TestFiniteDifference:
    def test_linear(self):
        x = Tensor(np.random.default_rng(6).normal(size=(3, 2)))
        np.testing.assert_allclose(finite_difference_gradient(total, x).values, 1.0, atol=1e-9)

    def test_square(self):
        g = finite_difference_gradient(lambda t: total(mul(t, t)), Tensor([[3.0]]), h=1e-5)
        assert g.item() == pytest.approx(6.0, abs=1e-6)

    def test_constant(self):
        g = finite_difference_gradient(lambda t: 4.2, Tensor(np.ones((2, 2))))
        np.testing.assert_array_equal(g.values, 0.0)

    def test_bad_step(self):
        with pytest.raises(ValueError):
            finite_difference_gradient(total, Tensor([[1.0]]), h=0)


def _random_graph(seed):
    """A small random composition of smooth ops ending in cross-entropy."""
    rng = np.random.default_rng(seed)
    n_in, n_hid, n_out, batch = rng.integers(2, 5, size=4)
    x = Tensor(rng.normal(size=(batch, n_in)))
    w1 = rng.normal(size=(n_hid, n_in))
    w2 = rng.normal(size=(n_out, n_hid))
    bias = rng.normal(size=(batch, n_hid))
    labels = rng.integers(0, n_out, size=batch)

    def f(a, b):
        h = add(matmul(x, transpose(a)), Tensor(bias))
        h = sub(mul(h, h), scale(h, 0.5))
        return softmax_cross_entropy(scale(matmul(h, transpose(b)), 0.1), labels)

    return f, w1, w2


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_random_smooth_graph_gradients(seed):
    f, w1, w2 = _random_graph(seed)
    g1, g2 = grad_of(f, w1, w2)
    fd1 = finite_difference_gradient(lambda a: f(a, Tensor(w2)), Tensor(w1)).values
    fd2 = finite_difference_gradient(lambda b: f(Tensor(w1), b), Tensor(w2)).values
    assert np.allclose(g1, fd1, rtol=1e-4, atol=1e-7)
    assert np.allclose(g2, fd2, rtol=1e-4, atol=1e-7)
