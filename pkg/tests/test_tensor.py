"""Gradient oracle tests for the autodiff primitives.

Every op's analytic gradient is checked against central finite differences
in float64. The FD side only calls forward evaluation.
"""

import numpy as np
import pytest

from cybersick.nn import (
    Tensor,
    avg_pool2d,
    conv2d,
    elu,
    fd_gradient,
    gelu,
    no_grad,
    relu,
    rel_error,
    softmax,
)

TOL = 1e-5


def check_grad(build, *arrays, tol=TOL):
    """build(*tensors) -> scalar Tensor; compare backward vs FD per input."""
    tensors = [Tensor(a.copy(), requires_grad=True) for a in arrays]
    loss = build(*tensors)
    loss.backward()
    for i, (t, a) in enumerate(zip(tensors, arrays)):
        def f(x, i=i):
            args = [Tensor(arr) for arr in arrays]
            args[i] = Tensor(x)
            return build(*args).item()
        num = fd_gradient(f, a.copy())
        err = rel_error(t.grad, num)
        assert err < tol, f"input {i}: rel err {err:.2e}"


def rand(*shape, seed=0):
    return np.random.default_rng(seed).standard_normal(shape)


class TestElementwise:
    def test_add_mul_broadcast(self):
        a, b = rand(3, 4, seed=1), rand(4, seed=2)
        check_grad(lambda x, y: ((x + y) * (x * 2.0 - y)).sum(), a, b)

    def test_div_pow(self):
        a = np.abs(rand(5, seed=3)) + 0.5
        b = np.abs(rand(5, seed=4)) + 0.5
        check_grad(lambda x, y: ((x / y) ** 3).sum(), a, b)

    def test_exp_log_sqrt_tanh(self):
        a = np.abs(rand(4, 3, seed=5)) + 0.2
        check_grad(lambda x: (x.exp() + x.log() + x.sqrt() + x.tanh()).sum(), a)

    def test_clamp_min(self):
        a = np.array([-2.0, -0.5, 0.3, 2.0])
        check_grad(lambda x: (x.clamp_min(0.0) * 3.0).sum(), a)
        t = Tensor(a)
        assert np.allclose(t.clamp_min(0.0).data, [0, 0, 0.3, 2.0])

    def test_scalar_mixing(self):
        a = rand(3, seed=6)
        check_grad(lambda x: (2.0 * x + 1.0 - x / 4.0).sum(), a)

    @pytest.mark.parametrize("act", [relu, elu, gelu])
    def test_activations(self, act):
        # keep points away from the relu/elu kink at 0
        a = rand(4, 5, seed=7)
        a[np.abs(a) < 0.05] = 0.1
        check_grad(lambda x: (act(x) * rand(4, 5, seed=8)).sum(), a)

    def test_elu_at_zero_is_zero(self):
        assert elu(Tensor(np.zeros(3))).data.tolist() == [0.0, 0.0, 0.0]


class TestMatmulReductions:
    def test_matmul_2d(self):
        check_grad(lambda a, b: (a @ b).sum(), rand(3, 4, seed=9), rand(4, 2, seed=10))

    def test_matmul_batched_with_broadcast(self):
        a, b = rand(2, 3, 5, 4, seed=11), rand(4, 6, seed=12)
        check_grad(lambda x, y: ((x @ y) ** 2).sum(), a, b)

    def test_sum_axes(self):
        a = rand(2, 3, 4, seed=13)
        check_grad(lambda x: (x.sum(axis=(0, 2)) ** 2).sum(), a)
        check_grad(lambda x: (x.sum(axis=1, keepdims=True) * 2).sum(), a)

    def test_mean(self):
        a = rand(3, 4, seed=14)
        check_grad(lambda x: (x.mean(axis=0) ** 2).sum(), a)
        assert np.isclose(Tensor(a).mean().item(), a.mean())

    def test_reshape_swapaxes(self):
        a = rand(2, 3, 4, seed=15)
        check_grad(lambda x: (x.reshape(6, 4).swapaxes(0, 1) ** 2).sum(), a)


class TestSoftmax:
    def test_rows_sum_to_one(self):
        s = softmax(Tensor(rand(5, 7, seed=16))).data
        assert np.allclose(s.sum(axis=-1), 1.0, atol=1e-6)

    def test_gradient(self):
        a = rand(3, 4, seed=17)
        w = rand(3, 4, seed=18)
        check_grad(lambda x: (softmax(x) * w).sum(), a)

    def test_shift_invariance(self):
        a = rand(2, 5, seed=19)
        assert np.allclose(softmax(Tensor(a)).data,
                           softmax(Tensor(a + 100.0)).data)


class TestConv2d:
    def test_hand_convolution(self):
        # 1x1x1x4 input [1,2,3,4], kernel (1,2) of ones -> [3,5,7]
        x = Tensor(np.array([1.0, 2.0, 3.0, 4.0]).reshape(1, 1, 1, 4))
        w = Tensor(np.ones((1, 1, 1, 2)))
        out = conv2d(x, w, None)
        assert out.data.reshape(-1).tolist() == [3.0, 5.0, 7.0]

    def test_identity_pointwise(self):
        x = Tensor(rand(2, 3, 4, 5, seed=20))
        w = np.zeros((3, 3, 1, 1))
        for c in range(3):
            w[c, c, 0, 0] = 1.0
        out = conv2d(x, Tensor(w), Tensor(np.zeros(3)))
        assert np.array_equal(out.data, x.data)

    def test_depthwise_group_isolation(self):
        x = np.zeros((1, 4, 2, 6))
        x[0, 2] = 1.0  # only channel 2 is non-zero
        w = Tensor(rand(4, 1, 1, 3, seed=21))
        out = conv2d(Tensor(x), w, None, groups=4)
        nonzero = np.abs(out.data).sum(axis=(0, 2, 3)) > 0
        assert nonzero.tolist() == [False, False, True, False]

    @pytest.mark.parametrize("case", [
        dict(cin=2, cout=4, k=(1, 5), s=(1, 1), p=((0, 0), (2, 2)), g=1, hw=(3, 8)),
        dict(cin=4, cout=4, k=(3, 1), s=(1, 1), p=((0, 0), (0, 0)), g=4, hw=(3, 6)),
        dict(cin=4, cout=8, k=(1, 1), s=(1, 1), p=((0, 0), (0, 0)), g=1, hw=(2, 4)),
        dict(cin=6, cout=4, k=(2, 3), s=(2, 2), p=((1, 0), (1, 2)), g=2, hw=(5, 7)),
    ])
    def test_gradients(self, case):
        b = 2
        x = rand(b, case["cin"], *case["hw"], seed=22)
        w = rand(case["cout"], case["cin"] // case["g"], *case["k"], seed=23)
        bias = rand(case["cout"], seed=24)
        check_grad(
            lambda xx, ww, bb: (conv2d(xx, ww, bb, stride=case["s"],
                                       padding=case["p"], groups=case["g"]) ** 2).sum(),
            x, w, bias)

    def test_shape_validation(self):
        x = Tensor(np.zeros((1, 2, 2, 3)))
        w = Tensor(np.zeros((4, 2, 2, 5)))
        with pytest.raises(ValueError):
            conv2d(x, w, None)
        with pytest.raises(ValueError):
            conv2d(x, Tensor(np.zeros((4, 1, 1, 2))), None, groups=3)


class TestAvgPool:
    def test_values(self):
        x = Tensor(np.arange(8.0).reshape(1, 1, 1, 8))
        out = avg_pool2d(x, (1, 4), (1, 4))
        assert out.data.reshape(-1).tolist() == [1.5, 5.5]

    def test_overlapping_gradients(self):
        x = rand(2, 3, 1, 20, seed=25)
        check_grad(lambda xx: (avg_pool2d(xx, (1, 7), (1, 3)) ** 2).sum(), x)

    def test_nonoverlapping_gradients(self):
        x = rand(2, 2, 4, 6, seed=26)
        check_grad(lambda xx: (avg_pool2d(xx, (2, 3)) ** 2).sum(), x)


class TestEngine:
    def test_grad_accumulates_on_reuse(self):
        x = Tensor(np.array([2.0]), requires_grad=True)
        y = x * x + x * 3.0
        y.backward()
        assert np.allclose(x.grad, [7.0])

    def test_no_grad_blocks_recording(self):
        x = Tensor(np.ones(3), requires_grad=True)
        with no_grad():
            y = x * 2.0
        assert y._backward is None and not y.requires_grad

    def test_backward_needs_scalar(self):
        x = Tensor(np.ones(3), requires_grad=True)
        with pytest.raises(ValueError):
            (x * 2).backward()

    def test_backward_without_graph(self):
        with pytest.raises(RuntimeError):
            Tensor(np.ones(2)).backward()

    def test_zero_grad_for_unused_parameter(self):
        x = Tensor(np.ones(2), requires_grad=True)
        unused = Tensor(np.ones(2), requires_grad=True)
        (x * 5.0).sum().backward()
        assert unused.grad is None

    def test_deep_chain_no_recursion_limit(self):
        x = Tensor(np.array([1.0]), requires_grad=True)
        y = x
        for _ in range(5000):
            y = y + 1.0
        y.sum().backward()
        assert np.allclose(x.grad, [1.0])
