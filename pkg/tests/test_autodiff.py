"""
Tests for the reverse-mode tape.
"""

import numpy as np
import pytest

from jdrecon import autodiff as ad


def central_difference(fn, value: np.ndarray, eps: float = 1e-6) -> np.ndarray:
    """Gradient of a scalar function of an array by central differences."""
    grad = np.zeros_like(value)
    for idx in np.ndindex(value.shape):
        up, down = value.copy(), value.copy()
        up[idx] += eps
        down[idx] -= eps
        grad[idx] = (fn(up) - fn(down)) / (2 * eps)
    return grad


def taped_gradient(build, value: np.ndarray) -> np.ndarray:
    tape = ad.Tape()
    leaf = tape.parameter("w", value)
    out = ad.reduce_sum(build(leaf))
    return ad.backward(tape, 1.0, output=out)["w"]


class TestOperators:
    """Test cases for individual reverse rules."""

    @pytest.mark.parametrize(
        "build",
        [
            lambda w: w * w + 3.0 * w,
            lambda w: ad.exp(w * 0.5) - w,
            lambda w: ad.sqrt_abs(w),
            lambda w: ad.relu(w) * 2.0,
            lambda w: 1.0 / (w * w + 1.0),
            lambda w: ad.square(w[:, 0]) + w[:, 1],
            lambda w: ad.reshape(w, (6,)) * np.arange(6.0),
            lambda w: ad.stack([w[:, 0], w[:, 2]], axis=1) * 1.5,
            lambda w: ad.concatenate([w, w * 2.0], axis=1),
            lambda w: ad.matvec(np.ones((2, 4, 3)), w),
            lambda w: ad.power(w * w + 1.0, 1.5),
            lambda w: (w * w + 1.0) ** 0.5 - w,
            lambda w: w**3 + w**2,
        ],
    )
    def test_matches_finite_differences(self, build):
        """Test each operator against central differences away from kinks."""
        value = np.array([[0.3, -1.2, 0.8], [1.5, 0.4, -0.7]])

        def plain(v: np.ndarray) -> float:
            return float(np.sum(ad.value_of(build(v))))

        np.testing.assert_allclose(taped_gradient(build, value), central_difference(plain, value), rtol=1e-6, atol=1e-8)

    def test_affine(self):
        """Test gradients of x @ W + b with respect to all three operands."""
        rng = np.random.default_rng(3)
        x, w, b = rng.normal(size=(4, 3)), rng.normal(size=(3, 2)), rng.normal(size=2)
        tape = ad.Tape()
        xs, ws, bs = tape.parameter("x", x), tape.parameter("w", w), tape.parameter("b", b)
        out = ad.reduce_sum(ad.square(ad.affine(xs, ws, bs)))
        grads = ad.backward(tape, 1.0, output=out)
        y = x @ w + b
        np.testing.assert_allclose(grads["x"], 2 * y @ w.T)
        np.testing.assert_allclose(grads["w"], x.T @ (2 * y))
        np.testing.assert_allclose(grads["b"], (2 * y).sum(axis=0))

    def test_linear_chain(self):
        """Test that y = w x gives dy/dw = x."""
        tape = ad.Tape()
        w = tape.parameter("w", np.array(2.0))
        y = w * 3.5
        assert ad.backward(tape, 1.0, output=y)["w"] == pytest.approx(3.5)

    def test_sqrt_abs_at_zero(self):
        """Test that the derivative of sqrt|x| at zero is taken as zero."""
        tape = ad.Tape()
        w = tape.parameter("w", np.zeros(3))
        grads = ad.backward(tape, 1.0, output=ad.reduce_sum(ad.sqrt_abs(w)))
        assert np.all(grads["w"] == 0)

    def test_broadcast_gradient_is_reduced(self):
        """Test that a broadcast operand receives the summed gradient."""
        tape = ad.Tape()
        b = tape.parameter("b", np.array([1.0, 2.0]))
        out = ad.reduce_sum(np.ones((5, 2)) * b)
        np.testing.assert_allclose(ad.backward(tape, 1.0, output=out)["b"], [5.0, 5.0])

    def test_plain_arrays_record_nothing(self):
        """Test that array-only operations return arrays."""
        out = ad.exp(np.zeros(2)) + np.ones(2)
        assert not ad.is_var(out)
        np.testing.assert_array_equal(out, [2.0, 2.0])


class TestBackward:
    """Test cases for tape bookkeeping."""

    def test_unreached_parameter_gets_zero(self):
        """Test that parameters the output does not depend on get zero gradients."""
        tape = ad.Tape()
        w = tape.parameter("w", np.array([1.0, 2.0]))
        tape.parameter("unused", np.ones(3))
        grads = ad.backward(tape, 1.0, output=ad.reduce_sum(w * w))
        np.testing.assert_allclose(grads["w"], [2.0, 4.0])
        np.testing.assert_array_equal(grads["unused"], np.zeros(3))

    def test_constant_output_gives_zero_gradients(self):
        """Test that an output independent of the parameters has zero gradients."""
        tape = ad.Tape()
        w = tape.parameter("w", np.array([1.0]))
        out = w * 0.0
        assert ad.backward(tape, 1.0, output=out)["w"][0] == 0.0

    def test_tape_is_single_use(self):
        """Test that a differentiated tape cannot be replayed."""
        tape = ad.Tape()
        w = tape.parameter("w", np.array(1.0))
        out = w * 2.0
        ad.backward(tape, 1.0, output=out)
        with pytest.raises(ad.TapeError):
            ad.backward(tape, 1.0, output=out)

    def test_empty_tape(self):
        """Test that an empty tape is rejected."""
        with pytest.raises(ad.TapeError):
            ad.backward(ad.Tape(), 1.0)

    def test_foreign_output(self):
        """Test that an output recorded on another tape is rejected."""
        tape, other = ad.Tape(), ad.Tape()
        tape.parameter("w", np.array(1.0))
        foreign = other.parameter("v", np.array(1.0)) * 2.0
        with pytest.raises(ad.TapeError):
            ad.backward(tape, 1.0, output=foreign)

    def test_mixed_tapes(self):
        """Test that combining values from two tapes fails."""
        a = ad.Tape().parameter("a", np.array(1.0))
        b = ad.Tape().parameter("b", np.array(1.0))
        with pytest.raises(ad.TapeError):
            _ = a + b

    def test_duplicate_parameter(self):
        """Test that a parameter name can only be registered once."""
        tape = ad.Tape()
        tape.parameter("w", np.array(1.0))
        with pytest.raises(ad.TapeError):
            tape.parameter("w", np.array(2.0))
