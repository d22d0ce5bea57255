"""
数值工具测试
"""
import math

import numpy as np
import pytest

from levy_polling.core.errors import NumericError
from levy_polling.utils.numerics import (
    decreasing_root,
    forward_derivative,
    forward_gradient,
    forward_jacobian,
    metzler_abscissa,
    perron_root,
)


class TestDecreasingRoot:
    def test_simple_root(self):
        root = decreasing_root(lambda t: 1.0 - t * t, lambda t: -2.0 * t)
        assert root == pytest.approx(1.0, abs=1e-13)

    def test_nonpositive_start_returns_zero(self):
        assert decreasing_root(lambda t: -t) == 0.0
        assert decreasing_root(lambda t: -1.0 - t) == 0.0

    def test_bracket_expansion(self):
        assert decreasing_root(lambda t: 1000.0 - t) == pytest.approx(1000.0, rel=1e-14)

    def test_without_derivative(self):
        root = decreasing_root(lambda t: 0.5 - math.sqrt(t))
        assert root == pytest.approx(0.25, abs=1e-12)

    def test_no_sign_change(self):
        with pytest.raises(NumericError):
            decreasing_root(lambda t: 1.0)


class TestForwardDifferences:
    def test_derivative_second_order(self):
        assert forward_derivative(math.exp, 1e-5) == pytest.approx(1.0, abs=1e-8)

    def test_jacobian_of_linear_map(self):
        matrix = np.array([[1.0, 2.0], [0.5, -3.0], [0.0, 4.0]])
        jac = forward_jacobian(lambda v: matrix @ v, np.zeros(2), 1e-3)
        np.testing.assert_allclose(jac, matrix, atol=1e-10)

    def test_gradient_only_samples_forward(self):
        def f(v):
            assert np.all(v >= 0.0)
            return float(np.sum(np.sqrt(1.0 + v)))

        grad = forward_gradient(f, np.zeros(3), 1e-6)
        np.testing.assert_allclose(grad, [0.5, 0.5, 0.5], atol=1e-8)


class TestPerronRoot:
    def test_gated_mean_matrix(self):
        result = perron_root(np.array([[0.26, 0.09], [0.2, 0.3]]))
        assert result.converged
        assert result.radius == pytest.approx((0.56 + math.sqrt(0.56**2 - 4 * 0.06)) / 2, abs=1e-10)
        assert result.radius == pytest.approx(0.415646, abs=1e-6)
        assert result.vector.sum() == pytest.approx(1.0)
        assert np.all(result.vector > 0.0)

    def test_periodic_matrix(self):
        result = perron_root(np.array([[0.0, 2.0], [0.5, 0.0]]))
        assert result.converged
        assert result.radius == pytest.approx(1.0, abs=1e-10)

    def test_zero_matrix(self):
        assert perron_root(np.zeros((1, 1))).radius == 0.0

    def test_negative_entry_rejected(self):
        with pytest.raises(NumericError):
            perron_root(np.array([[0.5, -0.1], [0.2, 0.3]]))

    def test_non_square_rejected(self):
        with pytest.raises(NumericError):
            perron_root(np.ones((2, 3)))


class TestMetzlerAbscissa:
    def test_rate_matrix(self):
        result = metzler_abscissa(np.array([[-0.8, 0.3], [0.2, -0.7]]))
        assert result.converged
        assert result.radius == pytest.approx(-0.5, abs=1e-10)
        np.testing.assert_allclose(result.vector, [0.5, 0.5], atol=1e-9)

    def test_matches_dense_eigenvalues(self):
        rng = np.random.default_rng(2)
        for _ in range(20):
            a = rng.uniform(0.0, 1.0, size=(3, 3))
            np.fill_diagonal(a, rng.uniform(-2.0, 0.0, size=3))
            expected = max(np.linalg.eigvals(a).real)
            assert metzler_abscissa(a).radius == pytest.approx(expected, abs=1e-8)
