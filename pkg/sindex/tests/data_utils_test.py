import os
import tempfile
import unittest
import warnings

import numpy as np
import numpy.testing as npt
from scipy import stats

from sindex.data_utils import (
    Dataset, LinkSpec, make_teacher, sample_dataset, stream_rng
)
from sindex.exceptions import DegenerateSeriesError
from sindex.hermite import eval_hermite, information_exponent


def _default_teacher(d=5, seed=0, **kwargs):
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        return make_teacher(LinkSpec.piecewise_linear(), d, seed, **kwargs)


class TestStreams(unittest.TestCase):

    def test_deterministic(self):
        npt.assert_array_equal(stream_rng(3, "train").normal(size=5),
                               stream_rng(3, "train").normal(size=5))

    def test_streams_differ(self):
        self.assertFalse(np.allclose(stream_rng(3, "train").normal(size=5),
                                     stream_rng(3, "finetune").normal(size=5)))

    def test_unknown_stream(self):
        with self.assertRaises(ValueError):
            stream_rng(0, "validation")


class TestLinkSpec(unittest.TestCase):

    def test_default_profile(self):
        link = LinkSpec.piecewise_linear()
        npt.assert_allclose(link.raw([-3.0, -2.0, -0.5, 1.0, 2.0, 3.0]),
                            [0.0, 0.0, 1.0, -0.6, 0.0, 0.0])
        self.assertAlmostEqual(float(link.raw(0.25)), 0.2)

    def test_rejects_unsorted_knots(self):
        with self.assertRaises(ValueError):
            LinkSpec.piecewise_linear((0.0, -1.0), (1.0, 0.0))

    def test_rejects_unknown_kind(self):
        with self.assertRaises(ValueError):
            LinkSpec("sigmoid")

    def test_dict(self):
        link = LinkSpec.stripped(LinkSpec.piecewise_linear(), 2)
        self.assertEqual(LinkSpec.from_dict(link.to_dict()), link)


class TestMakeTeacher(unittest.TestCase):

    def test_hermite_monomial(self):
        teacher = make_teacher(LinkSpec.hermite_monomial(3), 4, 0)
        npt.assert_allclose(teacher.series.coeffs,
                            np.eye(teacher.truncation_order + 1)[3],
                            atol=1e-12)
        self.assertEqual(information_exponent(teacher.series), 3)

    def test_default_link(self):
        teacher = _default_teacher()
        self.assertEqual(information_exponent(teacher.series), 1)
        self.assertAlmostEqual(teacher.series.norm(), 1.0, places=12)
        self.assertAlmostEqual(teacher.series.coeffs[0], 0.0, places=12)
        for j in (1, 2, 3):
            self.assertGreater(abs(teacher.series.coeffs[j]), 1e-3)

    def test_stripped(self):
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            teacher = make_teacher(
                LinkSpec.stripped(LinkSpec.piecewise_linear(), 2), 5, 0
            )
        npt.assert_allclose(teacher.series.coeffs[:2], 0.0, atol=1e-14)
        self.assertEqual(information_exponent(teacher.series), 2)
        self.assertAlmostEqual(teacher.series.norm(), 1.0, places=12)

    def test_strip_one_is_centering(self):
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            stripped = make_teacher(
                LinkSpec.stripped(LinkSpec.piecewise_linear(), 1), 5, 0
            )
        npt.assert_allclose(stripped.series.coeffs,
                            _default_teacher().series.coeffs)

    def test_stripped_callable(self):
        teacher = make_teacher(
            LinkSpec.stripped(LinkSpec.custom_series([0.0, 1.0, 0.0, 2.0]),
                              2), 3, 0
        )
        z = np.linspace(-3.0, 3.0, 11)
        npt.assert_allclose(teacher(z), eval_hermite(3, z), atol=1e-12)

    def test_degenerate(self):
        with self.assertRaises(DegenerateSeriesError):
            make_teacher(LinkSpec.stripped(LinkSpec.hermite_monomial(1), 2),
                         3, 0)

    def test_direction(self):
        teacher = _default_teacher(d=7, seed=4)
        self.assertAlmostEqual(np.linalg.norm(teacher.theta_star), 1.0,
                               places=12)
        npt.assert_array_equal(teacher.theta_star,
                               _default_teacher(d=7, seed=4).theta_star)
        fixed = _default_teacher(d=7, fixed_direction=True)
        npt.assert_array_equal(fixed.theta_star, np.eye(7)[0])

    def test_rejects_small_dimension(self):
        with self.assertRaises(ValueError):
            make_teacher(LinkSpec.hermite_monomial(2), 1, 0)


class TestSampleDataset(unittest.TestCase):

    def test_noiseless_linear(self):
        teacher = make_teacher(LinkSpec.hermite_monomial(1), 6, 1, sigma=0.0)
        data = sample_dataset(teacher, 100, 6, 1)
        npt.assert_allclose(data.ys, data.xs @ teacher.theta_star,
                            atol=1e-12)

    def test_deterministic(self):
        teacher = _default_teacher()
        first = sample_dataset(teacher, 50, 5, 9)
        second = sample_dataset(teacher, 50, 5, 9)
        npt.assert_array_equal(first.xs, second.xs)
        npt.assert_array_equal(first.ys, second.ys)
        self.assertEqual(first.teacher_hash, second.teacher_hash)

    def test_streams_are_independent(self):
        teacher = _default_teacher()
        train = sample_dataset(teacher, 50, 5, 9)
        fresh = sample_dataset(teacher, 50, 5, 9, stream="finetune")
        self.assertEqual(fresh.stream, "finetune")
        self.assertFalse(np.allclose(train.xs, fresh.xs))

    def test_gaussian_inputs(self):
        teacher = _default_teacher(d=3)
        data = sample_dataset(teacher, 10000, 3, 2)
        for column in data.xs.T:
            self.assertGreater(stats.kstest(column, "norm").pvalue, 1e-3)
        projected = data.xs @ teacher.theta_star
        self.assertGreater(stats.kstest(projected, "norm").pvalue, 1e-3)

    def test_moments(self):
        sigma = 0.5
        teacher = make_teacher(LinkSpec.hermite_monomial(2), 2, 0,
                               sigma=sigma)
        data = sample_dataset(teacher, 1_000_000, 2, 0)
        se_mean = np.sqrt((1 + sigma ** 2) / data.n)
        self.assertLess(abs(data.ys.mean()), 4 * se_mean)
        self.assertAlmostEqual(data.ys.var(), 1 + sigma ** 2, delta=0.016)

    def test_dimension_mismatch(self):
        teacher = _default_teacher()
        with self.assertRaises(ValueError):
            sample_dataset(teacher, 10, 4, 0)

    def test_rejects_empty(self):
        with self.assertRaises(ValueError):
            sample_dataset(_default_teacher(), 0, 5, 0)


class TestDatasetIO(unittest.TestCase):

    def test_csv_columns(self):
        data = sample_dataset(_default_teacher(d=3), 4, 3, 0)
        self.assertEqual(list(data.to_frame().columns),
                         ["x_1", "x_2", "x_3", "y"])

    def test_npz(self):
        data = sample_dataset(_default_teacher(d=3), 8, 3, 0,
                              stream="finetune")
        with tempfile.TemporaryDirectory() as tmp:
            path = os.path.join(tmp, "data.npz")
            data.save(path)
            loaded = Dataset.load(path)
        npt.assert_array_equal(loaded.xs, data.xs)
        npt.assert_array_equal(loaded.ys, data.ys)
        self.assertEqual(loaded.stream, "finetune")
        self.assertEqual(loaded.teacher_hash, data.teacher_hash)


if __name__ == '__main__':
    unittest.main()
