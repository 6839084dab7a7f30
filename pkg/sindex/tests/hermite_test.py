import math
import unittest
import warnings

import numpy as np
import numpy.testing as npt

from sindex.exceptions import DegenerateSeriesError, QuadratureError
from sindex.hermite import (
    HermiteSeries, QuadratureRule, check_truncation, derivative_norms,
    eval_hermite, hermite_table, information_exponent, mixed_derivative_sum,
    ou_transform, project_to_series, relu, relu_coeffs_closed_form,
    relu_decay_bound, strip_low_order
)


class TestEvalHermite(unittest.TestCase):

    def test_low_orders(self):
        self.assertEqual(eval_hermite(0, 7.3), 1.0)
        self.assertEqual(eval_hermite(1, 2.5), 2.5)
        self.assertAlmostEqual(eval_hermite(2, 1.0), 0.0, places=15)

    def test_rejects_negative_index(self):
        with self.assertRaises(ValueError):
            eval_hermite(-1, 0.0)

    def test_orthonormal(self):
        quad = QuadratureRule.gauss_hermite(64)
        table = hermite_table(10, quad.nodes)
        gram = (table * quad.weights) @ table.T
        npt.assert_allclose(gram, np.eye(11), atol=1e-8)

    def test_derivative_identity(self):
        z = np.linspace(-4, 4, 41)
        h = 1e-5
        for j in range(1, 11):
            fd = (eval_hermite(j, z + h) - eval_hermite(j, z - h)) / (2 * h)
            npt.assert_allclose(fd, math.sqrt(j) * eval_hermite(j - 1, z),
                                atol=1e-7)


class TestQuadratureRule(unittest.TestCase):

    def test_weights_sum_to_one(self):
        self.assertAlmostEqual(QuadratureRule.gauss_hermite().weights.sum(),
                               1.0, places=12)
        self.assertAlmostEqual(
            QuadratureRule.piecewise((0.0,)).weights.sum(), 1.0, places=12
        )

    def test_moments(self):
        quad = QuadratureRule.gauss_hermite(16)
        self.assertAlmostEqual(quad.expect(quad.nodes ** 2), 1.0, places=12)
        self.assertAlmostEqual(quad.expect(quad.nodes ** 4), 3.0, places=11)

    def test_rejects_bad_weights(self):
        with self.assertRaises(ValueError):
            QuadratureRule(np.array([0.0, 1.0]), np.array([1.0, -1.0]))

    def test_lebesgue_weights(self):
        quad = QuadratureRule.piecewise((-1.0, 1.0), half_width=1.0)
        self.assertAlmostEqual(quad.lebesgue_weights.sum(), 2.0, places=12)


class TestProjection(unittest.TestCase):

    def test_basis_function(self):
        series = project_to_series(lambda z: eval_hermite(3, z), 5,
                                   QuadratureRule.gauss_hermite())
        npt.assert_allclose(series.coeffs, [0, 0, 0, 1, 0, 0], atol=1e-10)

    def test_square(self):
        series = project_to_series(np.square, 4,
                                   QuadratureRule.gauss_hermite())
        npt.assert_allclose(series.coeffs, [1, 0, math.sqrt(2), 0, 0],
                            atol=1e-10)

    def test_relu_low_orders(self):
        series = project_to_series(relu, 1, QuadratureRule.piecewise((0.0,)))
        npt.assert_allclose(series.coeffs, [1 / math.sqrt(2 * math.pi), 0.5],
                            atol=1e-12)

    def test_too_few_nodes(self):
        with self.assertRaises(QuadratureError):
            project_to_series(relu, 10, QuadratureRule.gauss_hermite(8))


class TestReluCoefficients(unittest.TestCase):

    def test_closed_form_matches_quadrature(self):
        exact = relu_coeffs_closed_form(20)
        numeric = project_to_series(relu, 20,
                                    QuadratureRule.piecewise((0.0,)))
        npt.assert_allclose(exact.coeffs, numeric.coeffs, atol=1e-8)

    def test_known_values(self):
        coeffs = relu_coeffs_closed_form(6).coeffs
        self.assertAlmostEqual(coeffs[2], 1 / math.sqrt(4 * math.pi))
        self.assertEqual(coeffs[3], 0.0)
        self.assertEqual(coeffs[5], 0.0)
        self.assertLess(coeffs[4], 0.0)

    def test_decay_bound(self):
        coeffs = relu_coeffs_closed_form(200).coeffs
        j = np.arange(2, 201)
        self.assertTrue(np.all(np.abs(coeffs[2:]) <= relu_decay_bound(j)))
        self.assertTrue(np.all(relu_decay_bound(j) <= 0.72 * j ** -1.25))

    def test_large_order_is_finite(self):
        coeffs = relu_coeffs_closed_form(400).coeffs
        self.assertTrue(np.all(np.isfinite(coeffs)))


class TestSeriesAlgebra(unittest.TestCase):

    def setUp(self):
        rng = np.random.default_rng(7)
        self.series = HermiteSeries(rng.normal(size=12))

    def test_ou_identity_and_zero(self):
        npt.assert_array_equal(ou_transform(self.series, 1.0).coeffs,
                               self.series.coeffs)
        zeroed = ou_transform(self.series, 0.0).coeffs
        self.assertEqual(zeroed[0], self.series.coeffs[0])
        npt.assert_array_equal(zeroed[1:], 0.0)

    def test_ou_eigenrelation(self):
        out = ou_transform(HermiteSeries.basis(2), 0.5)
        self.assertAlmostEqual(out.coeffs[2], 0.25)

    def test_ou_semigroup(self):
        twice = ou_transform(ou_transform(self.series, 0.5), -0.4)
        once = ou_transform(self.series, -0.2)
        npt.assert_allclose(twice.coeffs, once.coeffs, rtol=1e-15)

    def test_ou_rejects_rho(self):
        with self.assertRaises(ValueError):
            ou_transform(self.series, 1.5)

    def test_information_exponent(self):
        self.assertEqual(information_exponent(HermiteSeries.basis(3)), 3)
        mixed = HermiteSeries.basis(2, 5).coeffs + 0.1 * np.eye(6)[5]
        self.assertEqual(information_exponent(HermiteSeries(mixed)), 2)
        centered = HermiteSeries(relu_coeffs_closed_form(16).coeffs
                                 * np.r_[0.0, np.ones(16)])
        self.assertEqual(information_exponent(centered), 1)

    def test_information_exponent_scale_invariant(self):
        series = HermiteSeries(np.r_[0.3, 0.0, 1e-4, 0.5])
        for scale in (1e-2, 1.0, 1e6):
            self.assertEqual(information_exponent(series.scaled(scale)), 2)

    def test_information_exponent_absolute_tol(self):
        series = HermiteSeries(np.r_[0.3, 0.0, 1e-4, 0.5])
        self.assertEqual(information_exponent(series.scaled(1e-6)), 3)
        self.assertEqual(information_exponent(series, tol=1e-3), 3)

    def test_information_exponent_degenerate(self):
        with self.assertRaises(DegenerateSeriesError):
            information_exponent(HermiteSeries(np.r_[1.0, 0.0, 0.0]))
        tiny = HermiteSeries(np.r_[0.0, 1e-10, 0.0, 1e-11])
        with self.assertRaises(DegenerateSeriesError):
            information_exponent(tiny, tol=1e-8)
        self.assertEqual(information_exponent(tiny, tol=1e-12), 1)

    def test_strip_low_order(self):
        stripped = strip_low_order(self.series, 3)
        npt.assert_array_equal(stripped.coeffs[:3], 0.0)
        self.assertAlmostEqual(stripped.norm(), 1.0)
        self.assertEqual(information_exponent(stripped), 3)
        h2 = HermiteSeries.basis(2)
        npt.assert_array_equal(strip_low_order(h2, 2).coeffs, h2.coeffs)
        with self.assertRaises(DegenerateSeriesError):
            strip_low_order(HermiteSeries.basis(1), 2)

    def test_derivative_norms(self):
        npt.assert_allclose(derivative_norms(HermiteSeries.basis(1)),
                            (1, 1, 0))
        npt.assert_allclose(derivative_norms(HermiteSeries.basis(2)),
                            (1, math.sqrt(2), math.sqrt(2)))
        npt.assert_allclose(derivative_norms(HermiteSeries.zeros(4)),
                            (0, 0, 0))

    def test_derivative_norms_match_derivative_series(self):
        norms = derivative_norms(self.series)
        self.assertAlmostEqual(norms.first, self.series.derivative().norm())
        self.assertAlmostEqual(norms.second,
                               self.series.second_derivative().norm())
        self.assertEqual(self.series.derivative().truncation_order, 10)

    def test_mixed_sum(self):
        # h_3: f'' = sqrt(6) h_1, f''' = sqrt(6) h_0
        self.assertAlmostEqual(mixed_derivative_sum(HermiteSeries.basis(3)),
                               36.0)

    def test_evaluate(self):
        z = np.linspace(-3, 3, 7)
        npt.assert_allclose(HermiteSeries(np.r_[1.0, 0.0, math.sqrt(2)])
                            .evaluate(z), z ** 2, atol=1e-12)

    def test_json(self):
        restored = HermiteSeries.from_json(self.series.to_json())
        npt.assert_array_equal(restored.coeffs, self.series.coeffs)
        self.assertEqual(self.series.to_dict()["truncation_order"], 11)


class TestTruncation(unittest.TestCase):

    def test_relu_tail_warns(self):
        with warnings.catch_warnings(record=True) as caught:
            warnings.simplefilter("always")
            tail = check_truncation(relu_coeffs_closed_form(16))
        self.assertGreater(tail, 1e-6)
        self.assertTrue(any(issubclass(w.category, RuntimeWarning)
                            for w in caught))

    def test_polynomial_is_silent(self):
        with warnings.catch_warnings():
            warnings.simplefilter("error")
            self.assertEqual(check_truncation(HermiteSeries.basis(3, 64)),
                             0.0)


if __name__ == '__main__':
    unittest.main()
