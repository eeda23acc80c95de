"""
Tests for reverse-mode differentiation.

Every operation is checked against central finite differences.
"""

import numpy as np
import pytest


def numerical_grad(f, x, eps=1e-6):
    """Central differences of scalar f with respect to array x, perturbed in place."""
    grad = np.zeros_like(x)
    it = np.nditer(x, flags=['multi_index'])
    for _ in it:
        idx = it.multi_index
        original = x[idx]
        x[idx] = original + eps
        plus = f()
        x[idx] = original - eps
        minus = f()
        x[idx] = original
        grad[idx] = (plus - minus) / (2 * eps)
    return grad


def check_gradients(build, *arrays, rtol=1e-5, atol=1e-7):
    """Compare backward() against finite differences for every input array."""
    from app.utils.autograd import parameter

    leaves = [parameter(a) for a in arrays]
    out = build(*leaves)
    out.backward()

    for k, leaf in enumerate(leaves):
        data = leaf.data

        def value():
            fresh = [parameter(l.data) for l in leaves]
            return float(build(*fresh).data)

        expected = numerical_grad(value, data)
        np.testing.assert_allclose(leaf.grad, expected, rtol=rtol, atol=atol,
                                   err_msg=f"gradient of input {k}")


@pytest.fixture
def rng():
    return np.random.default_rng(0)


class TestElementwise:
    """Test elementwise arithmetic."""

    def test_add_mul_broadcast(self, rng):
        """Broadcast operands get their gradients summed back."""
        check_gradients(lambda a, b: ((a + b) * b).sum(), rng.normal(size=(3, 4)), rng.normal(size=(4,)))

    def test_sub_div_pow(self, rng):
        """Subtraction, division and powers."""
        check_gradients(lambda a, b: ((a - b) / (b * b + 1.0) + a ** 3).sum(),
                        rng.normal(size=(2, 3)), rng.normal(size=(2, 3)))

    def test_reverse_operands(self, rng):
        """Scalars on the left of an operator."""
        check_gradients(lambda a: (2.0 - a + 3.0 * a).sum(), rng.normal(size=(5,)))

    def test_reused_node(self, rng):
        """A tensor used twice accumulates both contributions."""
        check_gradients(lambda a: (a * a + a).sum(), rng.normal(size=(4,)))


class TestMatmul:
    """Test matrix products."""

    def test_batched_matmul(self, rng):
        """Batched left operand with a shared right operand."""
        check_gradients(lambda a, w: (a @ w).tanh().sum(), rng.normal(size=(2, 3, 4)), rng.normal(size=(4, 5)))

    def test_batched_both(self, rng):
        """Both operands batched, as in attention."""
        check_gradients(lambda q, k: (q @ k.swapaxes(-1, -2)).sum(),
                        rng.normal(size=(2, 3, 4)), rng.normal(size=(2, 5, 4)))


class TestShapes:
    """Test shape operations and reductions."""

    def test_reshape_transpose(self, rng):
        """Gradients flow back through reshapes and permutations."""
        weights = rng.normal(size=(3, 2, 4))
        check_gradients(lambda a: (a.reshape(2, 3, 4).transpose(2, 0, 1) * weights.transpose(2, 1, 0)).sum(),
                        rng.normal(size=(6, 4)))

    def test_mean_axis(self, rng):
        """Means over one axis, with and without keepdims."""
        check_gradients(lambda a: (a.mean(axis=1) ** 2).sum() + a.mean(axis=0, keepdims=True).sum(),
                        rng.normal(size=(3, 4)))

    def test_concat(self, rng):
        """Concatenation splits the gradient back to its inputs."""
        from app.utils.autograd import concat

        weights = rng.normal(size=(2, 5))
        check_gradients(lambda a, b: (concat([a, b], axis=-1) * weights).sum(),
                        rng.normal(size=(2, 3)), rng.normal(size=(2, 2)))


class TestNonlinearities:
    """Test nonlinear functions."""

    def test_exp_sigmoid(self, rng):
        check_gradients(lambda a: (a.exp() + a.sigmoid()).sum(), rng.normal(size=(3, 3)))

    def test_gelu(self, rng):
        check_gradients(lambda a: a.gelu().sum(), rng.normal(size=(10,)))

    def test_relu_away_from_kink(self):
        check_gradients(lambda a: (a.relu() * 2.0).sum(), np.array([-1.5, -0.2, 0.3, 2.0]))

    def test_softmax(self, rng):
        """Softmax along the last axis against a fixed weighting."""
        weights = rng.normal(size=(2, 5))
        check_gradients(lambda a: (a.softmax(axis=-1) * weights).sum(), rng.normal(size=(2, 5)))

    def test_softmax_rows_sum_to_one(self, rng):
        from app.utils.autograd import Tensor

        out = Tensor(rng.normal(size=(3, 7)) * 50.0).softmax(axis=-1)

        np.testing.assert_allclose(out.data.sum(axis=-1), 1.0)

    def test_norm(self, rng):
        check_gradients(lambda a: a.norm(axis=-1).sum(), rng.normal(size=(4, 2)))

    def test_norm_zero_has_zero_gradient(self):
        """The Euclidean norm is taken as flat at the origin."""
        from app.utils.autograd import parameter

        a = parameter(np.zeros((1, 2)))
        a.norm(axis=-1).sum().backward()

        np.testing.assert_array_equal(a.grad, np.zeros((1, 2)))

    def test_layer_norm(self, rng):
        """Layer normalization with learnable gain and bias."""
        from app.utils.autograd import layer_norm

        weights = rng.normal(size=(3, 6))
        check_gradients(lambda x, g, b: (layer_norm(x, g, b) * weights).sum(),
                        rng.normal(size=(3, 6)), rng.normal(size=(6,)), rng.normal(size=(6,)), rtol=1e-4)


class TestGraph:
    """Test graph bookkeeping."""

    def test_constants_collect_no_gradient(self, rng):
        """Tensors that do not require grad stay without .grad."""
        from app.utils.autograd import Tensor, parameter

        const = Tensor(rng.normal(size=(3,)))
        p = parameter(rng.normal(size=(3,)))
        (const * p).sum().backward()

        assert const.grad is None
        np.testing.assert_allclose(p.grad, const.data)

    def test_zero_grad(self, rng):
        from app.utils.autograd import parameter, zero_grad

        p = parameter(rng.normal(size=(3,)))
        (p * 2.0).sum().backward()
        zero_grad([p])

        assert p.grad is None

    def test_check_finite_names_layer(self):
        """Non-finite values raise NumericError carrying the layer name."""
        from app.utils.autograd import NumericError, Tensor, check_finite

        with pytest.raises(NumericError) as excinfo:
            check_finite(Tensor(np.array([1.0, np.nan])), 'block0.attention')

        assert excinfo.value.layer == 'block0.attention'
        assert check_finite(Tensor(np.ones(2)), 'ok').shape == (2,)

    def test_pow_requires_scalar(self):
        from app.utils.autograd import parameter

        with pytest.raises(TypeError):
            parameter(np.ones(2)) ** np.ones(2)
