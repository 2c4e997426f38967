"""
Tests for coefficient functions and the model zoo.
"""

import math

import numpy as np
import pytest

from jdrecon import autodiff as ad
from jdrecon.models import JumpMeasure
from jdrecon.process_model import (
    ZOO_DEFAULTS,
    ProcessModelError,
    build_model,
    evaluate_batch,
    evaluate_coefficients,
    example3_g,
    make_example1,
    make_example2,
    make_example3,
    with_overrides,
    zero_spec,
)


class TestJumpMeasure:
    """Test cases for the finite jump measure."""

    def test_marks_and_total_rate(self):
        """Test that marks are numbered from one and rates add up."""
        measure = JumpMeasure(rates=[1.0, 0.5])
        assert measure.marks == [1, 2]
        assert measure.n_marks == 2
        assert measure.total_rate == 1.5

    def test_negative_rate_rejected(self):
        """Test that a negative rate fails validation."""
        with pytest.raises(ValueError):
            JumpMeasure(rates=[-0.1])


class TestExample1:
    """Test cases for the bond-pricing model."""

    def test_coefficients_at_two(self):
        """Test drift, diffusion and jump at the default initial state."""
        spec = make_example1(b=4, a=-1, sigma0=0.4, y0=1)
        f, sigma, beta = evaluate_coefficients(spec, np.array([2.0]), 0.0)
        assert f[0] == pytest.approx(3.0)
        assert sigma[0, 0] == pytest.approx(0.4 * math.sqrt(2.0))
        assert len(beta) == 1
        assert beta[0][0] == 1.0

    def test_diffusion_at_four(self):
        """Test the square-root diffusion."""
        spec = make_example1(b=4, a=-1, sigma0=0.4, y0=1)
        _, sigma, _ = evaluate_coefficients(spec, np.array([4.0]), 1.0)
        assert sigma[0, 0] == pytest.approx(0.8)

    def test_zero_parameters_give_zero_coefficients(self):
        """Test that b = a = sigma0 = y0 = 0 is the zero process."""
        spec = make_example1(b=0, a=0, sigma0=0, y0=0)
        f, sigma, beta = evaluate_batch(spec, np.linspace(-3, 3, 7)[:, None], 0.5)
        assert np.all(f == 0)
        assert np.all(sigma == 0)
        assert np.all(beta == 0)

    def test_diffusion_uses_absolute_value(self):
        """Test that negative states give a real diffusion."""
        spec = make_example1(b=4, a=-1, sigma0=0.4, y0=1)
        _, sigma, _ = evaluate_coefficients(spec, np.array([-4.0]), 0.0)
        assert sigma[0, 0] == pytest.approx(0.8)


class TestExample2:
    """Test cases for the stock-return model."""

    def test_langevin_forms(self):
        """Test sigma and beta of the Langevin form at x = 4."""
        spec = make_example2("langevin", "langevin", 0.1, 0.1, 0.05)
        f, sigma, beta = evaluate_coefficients(spec, np.array([4.0]), 0.0)
        assert f[0] == pytest.approx(0.05)
        assert sigma[0, 0] == pytest.approx(0.2)
        assert beta[0][0] == pytest.approx(0.2)

    def test_linear_form(self):
        """Test the linear diffusion form at x = 3."""
        spec = make_example2("linear", "linear", 0.1, 0.1, 0.05)
        _, sigma, beta = evaluate_coefficients(spec, np.array([3.0]), 0.0)
        assert sigma[0, 0] == pytest.approx(0.3)
        assert beta[0][0] == pytest.approx(0.3)

    def test_constant_zero_noise(self):
        """Test that constant forms with zero strength leave a pure drift."""
        spec = make_example2("const", "const", 0.0, 0.0, 0.05)
        f, sigma, beta = evaluate_batch(spec, np.array([[1.0], [7.0]]), 0.0)
        assert np.all(f == 0.05)
        assert np.all(sigma == 0)
        assert np.all(beta == 0)

    def test_unknown_form(self):
        """Test that an unknown coefficient form is rejected."""
        with pytest.raises(ProcessModelError):
            make_example2("cubic", "const", 0.1, 0.1, 0.05)


class TestExample3:
    """Test cases for the two-dimensional mixture-potential model."""

    def test_jump_matrix(self):
        """Test the correlated jump amplitudes."""
        spec = make_example3(c1=-0.5, c2=-0.5, sigma0=0.1, beta0=0.1)
        _, _, beta = evaluate_coefficients(spec, np.array([1.7, 1.1]), 0.0)
        matrix = np.stack(beta, axis=1)
        np.testing.assert_allclose(matrix, [[0.1, -0.05], [-0.05, 0.1]])

    def test_zero_correlation_is_diagonal(self):
        """Test that c1 = c2 = 0 gives diagonal diffusion and jump matrices."""
        spec = make_example3(c1=0.0, c2=0.0, sigma0=0.1, beta0=0.1)
        _, sigma, beta = evaluate_coefficients(spec, np.array([1.0, 4.0]), 0.0)
        assert sigma[0, 1] == 0 and sigma[1, 0] == 0
        np.testing.assert_allclose(np.diag(sigma), [0.1, 0.2])
        matrix = np.stack(beta, axis=1)
        assert matrix[0, 1] == 0 and matrix[1, 0] == 0

    def test_perfect_correlation_is_singular(self):
        """Test that c1 = 1 makes the diffusion rows dependent when X1 = X2."""
        spec = make_example3(c1=1.0, c2=0.0, sigma0=0.1, beta0=0.1)
        _, sigma, _ = evaluate_coefficients(spec, np.array([2.0, 2.0]), 0.0)
        assert abs(np.linalg.det(sigma)) < 1e-15

    def test_correlation_bound(self):
        """Test that |c| > 1 is rejected."""
        with pytest.raises(ProcessModelError):
            make_example3(c1=1.5, c2=0.0, sigma0=0.1, beta0=0.1)

    def test_drift_is_negative_potential_gradient(self):
        """Test the drift against a direct evaluation of the mixture formula."""
        x = np.array([[0.3, -0.4], [1.6, 1.2]])
        g = example3_g(x)
        for (x1, x2), row in zip(x, g, strict=True):
            n1 = math.exp(-((x1 - 1.6) ** 2 + (x2 - 1.2) ** 2) / 2.0) / math.sqrt(2 * math.pi)
            n2 = math.exp(-((x1 - 1.8) ** 2 + (x2 - 1.0) ** 2) / (2 * 0.95**2)) / (math.sqrt(2 * math.pi) * 0.95)
            w1, w2 = n1 / (n1 + n2), n2 / (n1 + n2)
            assert row[0] == pytest.approx(w1 * (x1 - 1.6) + w2 * (x1 - 1.8) / 0.95)
            assert row[1] == pytest.approx(w1 * (x2 - 1.8) + w2 * (x2 - 1.0) / 0.95)
        spec = make_example3(c1=-0.5, c2=-0.5, sigma0=0.1, beta0=0.1)
        f, _, _ = evaluate_batch(spec, x, 0.0)
        np.testing.assert_allclose(f, -g)


class TestZoo:
    """Test cases for building models by id."""

    def test_defaults(self):
        """Test that defaults fill unspecified parameters."""
        spec = build_model("example1", {"y0": 0.5})
        assert spec.params == {"b": 4.0, "a": -1.0, "sigma0": 0.4, "y0": 0.5}
        assert ZOO_DEFAULTS["example1"]["T"] == 20.2

    def test_unknown_model(self):
        """Test that an unknown id is rejected."""
        with pytest.raises(ProcessModelError):
            build_model("example9")

    def test_unknown_parameter(self):
        """Test that parameters foreign to a model are rejected."""
        with pytest.raises(ProcessModelError, match="unknown parameters"):
            build_model("example2", {"c1": 0.1})

    def test_zero_spec(self):
        """Test that the zero process evaluates to zeros."""
        f, sigma, beta = evaluate_coefficients(zero_spec(), np.array([1.3]), 0.0)
        assert f[0] == 0 and sigma[0, 0] == 0 and beta[0][0] == 0

    def test_with_overrides(self):
        """Test replacing only the jump function."""
        spec = make_example1(b=4, a=-1, sigma0=0.4, y0=1)
        halved = with_overrides(spec, jump=lambda x, t: np.full((x.shape[0], 1, 1), 0.5))
        f, _, beta = evaluate_coefficients(halved, np.array([2.0]), 0.0)
        assert f[0] == pytest.approx(3.0)
        assert beta[0][0] == 0.5

    def test_non_finite_input(self):
        """Test that non-finite states are rejected."""
        spec = make_example1(b=4, a=-1, sigma0=0.4, y0=1)
        with pytest.raises(ProcessModelError):
            evaluate_coefficients(spec, np.array([np.nan]), 0.0)
        with pytest.raises(ProcessModelError):
            evaluate_coefficients(spec, np.array([1.0, 2.0]), 0.0)

    def test_taped_and_untaped_evaluation_agree(self):
        """Test that coefficient functions give the same values on taped input."""
        spec = make_example3(c1=-0.5, c2=-0.5, sigma0=0.1, beta0=0.1)
        x = np.array([[1.7, 1.1], [0.2, 2.5]])
        tape = ad.Tape()
        leaf = tape.parameter("x", x)
        taped = spec.coefficients.diffusion(leaf, 0.0)
        np.testing.assert_array_equal(ad.value_of(taped), spec.coefficients.diffusion(x, 0.0))


ZOO_CASES = [
    ("example1", {}),
    *[
        ("example2", {"form_sigma": s, "form_beta": b})
        for s in ("const", "linear", "langevin")
        for b in ("const", "linear", "langevin")
    ],
    ("example3", {}),
    ("example3", {"c1": 0.8, "c2": -0.3}),
]


def _case_id(case):
    model_id, params = case
    return "-".join([model_id, *map(str, params.values())])


class TestCoefficientRegularity:
    """Test cases for Lipschitz bounds and purity of the zoo coefficients."""

    # Away from the origin, where sqrt|x| is not Lipschitz.
    BOX = (0.5, 3.0)
    LIPSCHITZ_BOUND = 50.0

    @pytest.mark.parametrize("case", ZOO_CASES, ids=_case_id)
    def test_lipschitz_on_box(self, case):
        """Test that f, sigma and beta have bounded difference quotients on a box away from zero."""
        spec = build_model(*case)
        rng = np.random.default_rng(11)
        x1 = rng.uniform(*self.BOX, size=(400, spec.d))
        x2 = rng.uniform(*self.BOX, size=(400, spec.d))
        dx = np.linalg.norm(x1 - x2, axis=1)
        for k, name in enumerate(("drift", "diffusion", "jump")):
            c1, c2 = evaluate_batch(spec, x1, 0.7)[k], evaluate_batch(spec, x2, 0.7)[k]
            dc = np.linalg.norm((c1 - c2).reshape(len(x1), -1), axis=1)
            ratios = dc / dx
            assert np.all(np.isfinite(ratios)), name
            assert ratios.max() <= self.LIPSCHITZ_BOUND, name

    def test_affine_drift_constant(self):
        """Test that the bond-model drift quotient equals |a| everywhere."""
        spec = build_model("example1", {"a": -1.3})
        rng = np.random.default_rng(12)
        x1, x2 = rng.uniform(*self.BOX, size=(50, 1)), rng.uniform(*self.BOX, size=(50, 1))
        f1, _, _ = evaluate_batch(spec, x1, 0.0)
        f2, _, _ = evaluate_batch(spec, x2, 0.0)
        np.testing.assert_allclose(np.abs(f1 - f2)[:, 0] / np.abs(x1 - x2)[:, 0], 1.3, rtol=1e-9)

    @pytest.mark.parametrize("case", ZOO_CASES, ids=_case_id)
    def test_evaluation_is_pure(self, case):
        """Test that repeated evaluation returns identical values and leaves the input untouched."""
        spec = build_model(*case)
        rng = np.random.default_rng(13)
        x = rng.uniform(0.2, 4.0, size=(16, spec.d))
        before = x.copy()
        first, second = evaluate_batch(spec, x, 1.5), evaluate_batch(spec, x, 1.5)
        for a, b in zip(first, second, strict=True):
            np.testing.assert_array_equal(a, b)
        single_first = evaluate_coefficients(spec, x[0], 1.5)
        single_second = evaluate_coefficients(spec, x[0], 1.5)
        np.testing.assert_array_equal(single_first[0], single_second[0])
        np.testing.assert_array_equal(single_first[1], single_second[1])
        for a, b in zip(single_first[2], single_second[2], strict=True):
            np.testing.assert_array_equal(a, b)
        np.testing.assert_array_equal(x, before)
