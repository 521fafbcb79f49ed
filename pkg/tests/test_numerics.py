import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from wsmix.numerics import (
    ContractError,
    DimensionError,
    NonFiniteError,
    Parameter,
    Tensor,
    concat,
    finite_diff_check,
    gelu,
    layer_norm,
    linear,
    log,
    log_softmax,
    matmul,
    mul,
    no_grad,
    softmax,
    sum_all,
    track_activations,
    weighted_sum,
)
from wsmix.oracles import gelu_scalar, naive_matmul


class TestMatmul:
    def test_identity(self):
        b = np.array([[1.0, 2.0], [3.0, 4.0]])
        np.testing.assert_array_equal(matmul(Tensor(np.eye(2)), Tensor(b)).data, b)

    def test_projector(self):
        out = matmul(Tensor([[1.0, 0.0], [0.0, 0.0]]), Tensor([[5.0], [7.0]]))
        np.testing.assert_array_equal(out.data, [[5.0], [0.0]])

    def test_matches_triple_loop(self, rng):
        a, b = rng.normal(size=(3, 4)), rng.normal(size=(4, 2))
        np.testing.assert_allclose(matmul(Tensor(a), Tensor(b)).data, naive_matmul(a, b), atol=1e-12, rtol=0)

    @given(st.integers(1, 16), st.integers(1, 16), st.integers(1, 16), st.integers(0, 2**32 - 1))
    def test_triple_loop_property(self, m, n, p, seed):
        r = np.random.default_rng(seed)
        a, b = r.normal(size=(m, n)), r.normal(size=(n, p))
        np.testing.assert_allclose(matmul(Tensor(a), Tensor(b)).data, naive_matmul(a, b), atol=1e-12, rtol=0)

    def test_shape_mismatch_names_both_shapes(self):
        with pytest.raises(DimensionError, match=r"\(2, 3\).*\(2, 3\)"):
            matmul(Tensor(np.ones((2, 3))), Tensor(np.ones((2, 3))))

    def test_backward_rules(self, rng):
        a = Parameter(rng.normal(size=(3, 4)))
        b = Parameter(rng.normal(size=(4, 2)))
        g = rng.normal(size=(3, 2))
        sum_all(mul(matmul(a, b), Tensor(g))).backward()
        np.testing.assert_allclose(a.grad, g @ b.data.T, atol=1e-12)
        np.testing.assert_allclose(b.grad, a.data.T @ g, atol=1e-12)


class TestGelu:
    def test_zero(self):
        assert gelu(Tensor([0.0])).data[0] == 0.0

    def test_saturation(self):
        assert abs(gelu(Tensor([10.0])).data[0] - 10.0) < 1e-9

    def test_one(self):
        assert gelu(Tensor([1.0])).data[0] == pytest.approx(0.841345, abs=1e-6)
        assert gelu(Tensor([1.0])).data[0] == pytest.approx(gelu_scalar(1.0), abs=1e-15)

    def test_erf_form_not_tanh(self):
        x = 1.5
        tanh_form = 0.5 * x * (1 + math.tanh(math.sqrt(2 / math.pi) * (x + 0.044715 * x**3)))
        got = gelu(Tensor([x])).data[0]
        assert got == pytest.approx(gelu_scalar(x), abs=1e-15)
        assert abs(got - tanh_form) > 1e-6


class TestConcat:
    def test_axis1(self):
        out = concat([Tensor([[1.0], [2.0]]), Tensor([[3.0], [4.0]])], axis=1)
        np.testing.assert_array_equal(out.data, [[1, 3], [2, 4]])

    def test_single_is_identity(self):
        x = Tensor([[1.0, 2.0]])
        assert concat([x]) is x

    def test_gradient_of_sum_is_ones(self, rng):
        a = Parameter(rng.normal(size=(2, 3)))
        b = Parameter(rng.normal(size=(2, 1)))
        sum_all(concat([a, b], axis=1)).backward()
        np.testing.assert_array_equal(a.grad, np.ones((2, 3)))

    def test_mismatch(self):
        with pytest.raises(DimensionError):
            concat([Tensor(np.ones((2, 1))), Tensor(np.ones((3, 1)))], axis=1)


class TestSoftmax:
    def test_uniform(self):
        np.testing.assert_allclose(softmax(Tensor([0.0, 0.0, 0.0])).data, [1 / 3] * 3, atol=1e-15)

    def test_no_overflow(self):
        np.testing.assert_array_equal(softmax(Tensor([1000.0, 0.0])).data, [1.0, 0.0])

    @given(st.lists(st.floats(-50, 50), min_size=1, max_size=30))
    def test_sums_to_one(self, xs):
        assert abs(softmax(Tensor(xs)).data.sum() - 1.0) < 1e-12

    def test_mask_zeroes_entries(self):
        out = softmax(Tensor([[1.0, 2.0, 3.0]]), mask=np.array([[True, False, True]]))
        assert out.data[0, 1] == 0.0
        assert out.data.sum() == pytest.approx(1.0, abs=1e-12)

    def test_overwrite_refused_on_tape(self):
        x = Parameter(np.zeros(3))
        with pytest.raises(ContractError):
            softmax(x, overwrite=True)


class TestBackward:
    def test_non_scalar_loss(self):
        x = Parameter(np.ones(3))
        with pytest.raises(ContractError):
            mul(x, x).backward()

    def test_unreachable_parameter_keeps_zero_grad(self, rng):
        used, unused = Parameter(rng.normal(size=3)), Parameter(rng.normal(size=3))
        sum_all(mul(used, used)).backward()
        assert not unused.grad.any()
        assert used.grad.any()

    def test_frozen_parameter_gets_no_grad(self, rng):
        w = Parameter(rng.normal(size=(3, 3)), trainable=False)
        x = Parameter(rng.normal(size=(2, 3)))
        sum_all(matmul(x, w)).backward()
        assert not w.grad.any()

    def test_accumulates(self, rng):
        x = Parameter(rng.normal(size=4))
        sum_all(x).backward()
        sum_all(x).backward()
        np.testing.assert_array_equal(x.grad, 2 * np.ones(4))

    @given(st.integers(0, 2**32 - 1))
    def test_linearity(self, seed):
        r = np.random.default_rng(seed)
        w = Parameter(r.normal(size=(4, 3)))
        x = Tensor(r.normal(size=(5, 4)))
        t1, t2 = Tensor(r.normal(size=(5, 3))), Tensor(r.normal(size=(5, 3)))

        def loss(t):
            return sum_all(mul(gelu(matmul(x, w)), t))

        (loss(t1) + loss(t2)).backward()
        together = w.grad.copy()
        w.zero_grad()
        loss(t1).backward()
        loss(t2).backward()
        np.testing.assert_allclose(together, w.grad, atol=1e-12, rtol=0)

    def test_no_grad_builds_no_tape(self, rng):
        x = Parameter(rng.normal(size=3))
        with no_grad():
            y = mul(x, x)
        assert not y.requires_grad


class TestFiniteDiff:
    def test_quadratic(self):
        x = Parameter([3.0])
        f = lambda: sum_all(mul(x, x))  # noqa: E731
        assert finite_diff_check(f, x) < 1e-7
        x.zero_grad()
        f().backward()
        assert x.grad[0] == pytest.approx(6.0)

    def test_bad_eps(self):
        x = Parameter([1.0])
        with pytest.raises(ValueError):
            finite_diff_check(lambda: sum_all(x), x, eps=0.0)

    @pytest.mark.parametrize("op", ["gelu", "log_softmax", "softmax", "layer_norm", "linear", "weighted_sum", "log"])
    @given(seed=st.integers(0, 2**32 - 1), T=st.integers(1, 16), d=st.integers(2, 8))
    def test_every_op(self, op, seed, T, d):
        r = np.random.default_rng(seed)
        x = Parameter(r.normal(size=(T, d)))
        target = Tensor(r.normal(size=(T, d)))
        extra = []
        if op == "gelu":
            f = lambda: sum_all(mul(gelu(x), target))  # noqa: E731
        elif op == "log_softmax":
            f = lambda: sum_all(mul(log_softmax(x), target))  # noqa: E731
        elif op == "softmax":
            f = lambda: sum_all(mul(softmax(x), target))  # noqa: E731
        elif op == "layer_norm":
            g, b = Parameter(r.normal(size=d)), Parameter(r.normal(size=d))
            extra = [g, b]
            f = lambda: sum_all(mul(layer_norm(x, g, b), target))  # noqa: E731
        elif op == "linear":
            w, b = Parameter(r.normal(size=(d, d))), Parameter(r.normal(size=d))
            extra = [w, b]
            f = lambda: sum_all(mul(linear(x, w, b), target))  # noqa: E731
        elif op == "log":
            x.data[:] = np.abs(x.data) + 0.5
            f = lambda: sum_all(mul(log(x), target))  # noqa: E731
        else:
            ys = [Parameter(r.normal(size=(T, d))) for _ in range(2)]
            w = Parameter(r.normal(size=3))
            extra = [*ys, w]
            f = lambda: sum_all(mul(weighted_sum([x, *ys], softmax(w)), target))  # noqa: E731
        assert max(finite_diff_check(f, p) for p in [x, *extra]) < 1e-4


def test_non_finite_is_an_error():
    with pytest.raises(NonFiniteError):
        log(Tensor([-1.0]))


def test_tracker_counts_tape_outputs(rng):
    x = Parameter(rng.normal(size=(10, 4)))
    with track_activations() as tr:
        y = gelu(x)
        assert tr.current == y.data.nbytes
        with no_grad():
            gelu(x)
        assert tr.current == y.data.nbytes
        del y
        assert tr.current == 0
        assert tr.peak == 10 * 4 * 8
