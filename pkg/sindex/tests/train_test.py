import math
import warnings

import numpy as np
import numpy.testing as npt
import tensorflow as tf

from sindex.data_utils import LinkSpec, make_teacher, sample_dataset
from sindex.exceptions import DivergenceError
from sindex.features import FeatureBank, sample_bank
from sindex.model import ModelState, empirical_loss, grad_c
from sindex.train import (
    TrainConfig, default_n0, default_rho_init, excess_risk, fine_tune_ridge,
    init_state, run_two_phase
)


def _problem(d=5, n=256, N=20, seed=0):
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        teacher = make_teacher(LinkSpec.piecewise_linear(), d, seed)
    bank = sample_bank(N, 2.0, seed)
    data = sample_dataset(teacher, n, d, seed)
    return teacher, bank, data


class TestConfig(tf.test.TestCase):

    def test_defaults(self):
        config = TrainConfig()
        self.assertEqual(config.total_steps, 10000)
        self.assertAlmostEqual(config.resolved_step_c, 0.01)
        self.assertEqual(config.resolved_n0, default_n0())
        self.assertEqual(default_n0(), 3)

    def test_rho_formula(self):
        expected = math.sqrt(100) * 3 ** -1.5 / (4.0 + 0.01 * 100 / 3)
        self.assertAlmostEqual(default_rho_init(100, 3, 1, 2.0, 0.01),
                               expected)

    def test_rejects(self):
        for bad in ({"lam": 0.0}, {"step_theta": -1.0}, {"T0_steps": -1},
                    {"record_every": 0}, {"schedule": "cosine"}):
            with self.assertRaises(ValueError):
                TrainConfig(**bad)
        with self.assertRaises(ValueError):
            TrainConfig.from_dict({"learning_rate": 0.1})

    def test_dict(self):
        config = TrainConfig(lam=0.01, T0_steps=3)
        self.assertEqual(TrainConfig.from_dict(config.to_dict()), config)


class TestInitState(tf.test.TestCase):

    def test_norms_and_support(self):
        _, bank, _ = _problem()
        config = TrainConfig(N0=4)
        state = init_state(config, bank, 5, 0)
        self.assertAllClose(np.linalg.norm(state.theta), 1.0, atol=1e-12)
        self.assertAllClose(np.linalg.norm(state.c),
                            config.resolved_rho_init(bank), atol=1e-12)
        self.assertEqual(np.count_nonzero(state.c), 4)

    def test_support_too_large(self):
        _, bank, _ = _problem(N=3)
        with self.assertRaises(ValueError):
            init_state(TrainConfig(N0=5), bank, 5, 0)

    def test_direction_is_symmetric(self):
        _, bank, _ = _problem()
        theta_star = np.eye(10)[0]
        overlaps = np.array([
            init_state(TrainConfig(), bank, 10, seed).theta @ theta_star
            for seed in range(10000)
        ])
        self.assertLess(abs(overlaps.mean()), 4 / math.sqrt(10000 * 10))


class TestRunTwoPhase(tf.test.TestCase):

    def setUp(self):
        tf.config.experimental.enable_op_determinism()

    def _run(self, **options):
        teacher, bank, data = _problem()
        config = TrainConfig(**{"lam": 0.01, "T0_steps": 5, "T1_steps": 10,
                                "record_every": 1, **options})
        state0 = init_state(config, bank, 5, 0)
        return state0, run_two_phase(state0, config, bank, data, teacher)

    def test_no_steps(self):
        state0, trace = self._run(T0_steps=0, T1_steps=0)
        self.assertLen(trace, 1)
        npt.assert_array_equal(trace.final_state.c, state0.c)
        npt.assert_array_equal(trace.final_state.theta, state0.theta)

    def test_warmup_keeps_c(self):
        state0, trace = self._run(T1_steps=0)
        npt.assert_array_equal(trace.final_state.c, state0.c)
        self.assertAllClose(trace.records["c_norm"],
                            np.full(len(trace), np.linalg.norm(state0.c)))
        self.assertTrue((trace.records["phase"] == "warmup").all())

    def test_loss_does_not_increase(self):
        _, trace = self._run()
        self.assertTrue(np.all(np.diff(trace.records["loss"]) <= 1e-10))
        self.assertAllClose(np.linalg.norm(trace.final_state.theta), 1.0,
                            atol=1e-12)

    def test_trace_length(self):
        _, trace = self._run(T0_steps=3, T1_steps=4, record_every=3)
        self.assertEqual(list(trace.records["step"]), [0, 3, 6])

    def test_recording_does_not_change_result(self):
        _, every = self._run(record_every=1)
        _, sparse = self._run(record_every=2)
        npt.assert_array_equal(every.final_state.c, sparse.final_state.c)
        npt.assert_array_equal(every.final_state.theta,
                               sparse.final_state.theta)

    def test_overlap_recorded(self):
        teacher, bank, data = _problem()
        config = TrainConfig(lam=0.01, T0_steps=2, T1_steps=2,
                             record_every=1)
        state0 = init_state(config, bank, 5, 0)
        trace = run_two_phase(state0, config, bank, data, teacher)
        self.assertAllClose(trace.records["m"].iloc[0],
                            state0.overlap(teacher.theta_star))
        self.assertAllClose(trace.final_m,
                            trace.final_state.overlap(teacher.theta_star))

    def test_vanilla_moves_c(self):
        state0, trace = self._run(schedule="vanilla", T0_steps=0, T1_steps=1)
        self.assertNotAllClose(trace.final_state.c, state0.c)
        self.assertEqual(trace.records["phase"].iloc[-1], "joint")

    def test_divergence(self):
        teacher, bank, data = _problem()
        config = TrainConfig(lam=0.01, T0_steps=0, T1_steps=20,
                             step_c=1e9, backoff=False, record_every=1)
        state0 = init_state(config, bank, 5, 0)
        with self.assertRaises(DivergenceError) as caught:
            run_two_phase(state0, config, bank, data, teacher)
        self.assertIsNotNone(caught.exception.trace)

    def test_rejects_non_unit(self):
        teacher, bank, data = _problem()
        state = ModelState(np.zeros(bank.N), 2 * np.eye(5)[0])
        with self.assertRaises(ValueError):
            run_two_phase(state, TrainConfig(), bank, data, teacher)


class TestFineTune(tf.test.TestCase):

    def _fresh(self):
        teacher, bank, _ = _problem()
        fresh = sample_dataset(teacher, 300, 5, 0, stream="finetune")
        return teacher, bank, fresh

    def test_stationary(self):
        teacher, bank, fresh = self._fresh()
        c = fine_tune_ridge(teacher.theta_star, bank, fresh, 0.01)
        state = ModelState(c, teacher.theta_star)
        self.assertLess(np.linalg.norm(grad_c(state, bank, fresh, 0.01)),
                        1e-8)

    def test_minimizes(self):
        teacher, bank, fresh = self._fresh()
        c = fine_tune_ridge(teacher.theta_star, bank, fresh, 0.01)
        best = empirical_loss(ModelState(c, teacher.theta_star), bank,
                              fresh, 0.01)
        rng = np.random.default_rng(0)
        for _ in range(20):
            moved = ModelState(c + 1e-3 * rng.normal(size=c.size),
                               teacher.theta_star)
            self.assertLessEqual(best,
                                 empirical_loss(moved, bank, fresh, 0.01))

    def test_matches_gradient_descent(self):
        teacher, bank, fresh = self._fresh()
        lam = 0.1
        c = np.zeros(bank.N)
        for _ in range(5000):
            state = ModelState(c, teacher.theta_star)
            c = c - 0.1 * grad_c(state, bank, fresh, lam)
        self.assertAllClose(fine_tune_ridge(teacher.theta_star, bank, fresh,
                                            lam), c, atol=1e-6)

    def test_heavy_ridge(self):
        teacher, bank, fresh = self._fresh()
        c = fine_tune_ridge(teacher.theta_star, bank, fresh, 1e6)
        self.assertLess(np.linalg.norm(c),
                        2 * np.linalg.norm(fresh.ys) / 1e6)

    def test_rejects_training_sample(self):
        teacher, bank, data = _problem()
        with self.assertRaises(ValueError):
            fine_tune_ridge(teacher.theta_star, bank, data, 0.01)

    def test_rejects_lambda(self):
        teacher, bank, fresh = self._fresh()
        with self.assertRaises(ValueError):
            fine_tune_ridge(teacher.theta_star, bank, fresh, 0.0)


class TestExcessRisk(tf.test.TestCase):

    def test_zero_predictor(self):
        teacher = make_teacher(LinkSpec.hermite_monomial(2), 4, 0)
        bank = sample_bank(10, 2.0, 0)
        state = ModelState(np.zeros(10), teacher.theta_star)
        risk, se = excess_risk(state, bank, teacher, 100000, 0)
        self.assertLess(abs(risk - 1.0), 3 * se)

    def test_exact_fit(self):
        teacher = make_teacher(LinkSpec.custom_series([0.0, 1.0]), 4, 0)
        bank = FeatureBank(np.zeros(2), np.array([1.0, -1.0]), 2.0)
        state = ModelState(np.array([math.sqrt(2), -math.sqrt(2)]),
                           teacher.theta_star)
        risk, _ = excess_risk(state, bank, teacher, 1000, 0)
        self.assertLess(risk, 1e-12)

    def test_seeds_agree(self):
        teacher = make_teacher(LinkSpec.hermite_monomial(2), 4, 0)
        bank = sample_bank(10, 2.0, 0)
        state = ModelState(np.ones(10), teacher.theta_star)
        first, se_first = excess_risk(state, bank, teacher, 20000, 1)
        second, se_second = excess_risk(state, bank, teacher, 20000, 2)
        self.assertLess(abs(first - second),
                        3 * math.hypot(se_first, se_second))


if __name__ == '__main__':
    tf.test.main()
