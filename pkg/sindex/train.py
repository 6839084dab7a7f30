"""Two-phase gradient descent on (c, theta) and ridge fine-tuning of c."""
import dataclasses
import logging
import math
from dataclasses import dataclass

import numpy as np
import pandas as pd
import tensorflow as tf
from scipy import stats
from sklearn.linear_model import Ridge

from sindex.callbacks import DivergenceMonitor, TraceRecorder
from sindex.data_utils import stream_rng, uniform_direction
from sindex.exceptions import DivergenceError, IllConditionedError
from sindex.features import phi_matrix
from sindex.model import ModelState, SingleIndexNetwork, check_unit, predict

logger = logging.getLogger(__name__)

MAX_CONDITION = 1e12


def default_n0(delta=0.1):
    """Initial support size, of order log(1 / delta)."""
    return max(3, math.ceil(math.log(1.0 / delta)))


def default_rho_init(N, N0, s, tau, lam):
    """sqrt(N) N0^{-(2+s)/2} / (tau^2 + lam N / N0), constant taken as 1."""
    return math.sqrt(N) * N0 ** (-(2.0 + s) / 2.0) \
        / (tau ** 2 + lam * N / N0)


@dataclass(frozen=True)
class TrainConfig:
    lam: float = 1e-3
    step_theta: float = 1.0
    step_c: float = None
    step_ratio: float = 100.0
    T0_steps: int = 500
    T1_steps: int = 9500
    rho_init: float = None
    N0: int = None
    seed: int = 0
    record_every: int = 100
    schedule: str = "two_phase"
    backoff: bool = True
    max_halvings: int = 30

    def __post_init__(self):
        if not self.lam > 0:
            raise ValueError(f"lambda must be positive, got {self.lam}")
        if not self.step_theta > 0:
            raise ValueError(
                f"step_theta must be positive, got {self.step_theta}"
            )
        if self.step_c is not None and self.step_c < 0:
            raise ValueError(f"step_c must be non-negative, got {self.step_c}")
        if not self.step_ratio > 0:
            raise ValueError(
                f"step_ratio must be positive, got {self.step_ratio}"
            )
        if self.T0_steps < 0 or self.T1_steps < 0:
            raise ValueError("step counts must be non-negative")
        if self.N0 is not None and self.N0 < 1:
            raise ValueError(f"N0 must be at least 1, got {self.N0}")
        if self.rho_init is not None and not self.rho_init > 0:
            raise ValueError(
                f"rho_init must be positive, got {self.rho_init}"
            )
        if self.record_every < 1:
            raise ValueError("record_every must be at least 1")
        if self.schedule not in ("two_phase", "vanilla"):
            raise ValueError(f"Unknown schedule {self.schedule!r}")

    @property
    def total_steps(self):
        return self.T0_steps + self.T1_steps

    @property
    def resolved_step_c(self):
        if self.step_c is not None:
            return self.step_c
        return self.step_theta / self.step_ratio

    @property
    def resolved_n0(self):
        return default_n0() if self.N0 is None else self.N0

    def resolved_rho_init(self, bank, s=1):
        if self.rho_init is not None:
            return self.rho_init
        return default_rho_init(bank.N, self.resolved_n0, s, bank.tau,
                                self.lam)

    def replace(self, **changes):
        return dataclasses.replace(self, **changes)

    def to_dict(self):
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, payload):
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = set(payload) - names
        if unknown:
            raise ValueError(f"Unknown train options {sorted(unknown)}")
        return cls(**payload)


@dataclass(frozen=True)
class TrainTrace:
    records: pd.DataFrame
    final_state: ModelState
    rejected_steps: int = 0

    def __len__(self):
        return len(self.records)

    @property
    def final_m(self):
        return float(self.records["m"].iloc[-1])

    @property
    def final_loss(self):
        return float(self.records["loss"].iloc[-1])

    def to_csv(self, path):
        self.records.to_csv(path, index=False)


def init_state(config, bank, d, seed, s=1):
    """theta uniform on the sphere; c uniform on the N0-sparse sphere of
    radius rho_init."""
    N0 = config.resolved_n0
    if N0 > bank.N:
        raise ValueError(f"N0 = {N0} exceeds the bank size {bank.N}")
    rng = stream_rng(seed, "init")
    theta = uniform_direction(rng, d)
    support = rng.choice(bank.N, size=N0, replace=False)
    c = np.zeros(bank.N)
    c[support] = config.resolved_rho_init(bank, s) \
        * uniform_direction(rng, N0)
    return ModelState(c, theta)


def _network(config, bank, d):
    return SingleIndexNetwork(
        bank,
        d,
        config.lam,
        step_theta=config.step_theta,
        step_c=config.resolved_step_c,
        warmup_steps=config.T0_steps,
        schedule=config.schedule,
        backoff=config.backoff,
        max_halvings=config.max_halvings
    )


def run_two_phase(state0, config, bank, data, teacher=None):
    """Run T0 + T1 Euler steps, recording every `record_every` steps.

    Raises DivergenceError carrying the partial trace when the loss exceeds
    1e6 or stops being finite.
    """
    check_unit(state0.theta)
    model = _network(config, bank, state0.d)
    model.set_state(state0)
    recorder = TraceRecorder(
        data.xs,
        data.ys,
        None if teacher is None else teacher.theta_star,
        record_every=config.record_every,
        warmup_steps=config.T0_steps,
        schedule=config.schedule
    )
    if config.total_steps == 0:
        recorder.set_model(model)
        recorder.on_train_begin()
        return TrainTrace(recorder.frame(), model.get_state())
    model.compile(jit_compile=False)
    dataset = tf.data.Dataset.from_tensors(
        (tf.constant(data.xs, dtype=tf.float64),
         tf.constant(data.ys, dtype=tf.float64))
    ).repeat()
    try:
        model.fit(
            dataset,
            epochs=1,
            steps_per_epoch=config.total_steps,
            callbacks=[recorder, DivergenceMonitor()],
            verbose=0
        )
    except DivergenceError as e:
        e.trace = TrainTrace(recorder.frame(), model.get_state(),
                             model.rejected_steps)
        raise
    if model.rejected_steps:
        logger.info("%d of %d steps rejected after step-size backoff",
                    model.rejected_steps, config.total_steps)
    return TrainTrace(recorder.frame(), model.get_state(),
                      model.rejected_steps)


def fine_tune_ridge(theta_hat, bank, fresh_data, lam_prime):
    """Refit c by ridge regression on a sample not used for training.

    Solves ((1/n') sum Phi_i Phi_i^T + lam' I) c = (1/n') sum y_i Phi_i.
    """
    if not lam_prime > 0:
        raise ValueError(f"lambda' must be positive, got {lam_prime}")
    if fresh_data.stream == "train":
        raise ValueError("fine-tuning needs a sample outside the training "
                         "stream")
    check_unit(theta_hat)
    features = phi_matrix(bank, fresh_data.xs @ theta_hat)
    n = fresh_data.n
    system = features.T @ features / n + lam_prime * np.eye(bank.N)
    condition = float(np.linalg.cond(system))
    if not condition <= MAX_CONDITION:
        raise IllConditionedError(
            f"ridge system has condition number {condition:.3g}",
            condition_number=condition
        )
    ridge = Ridge(alpha=n * lam_prime, fit_intercept=False,
                  solver="cholesky")
    ridge.fit(features, fresh_data.ys)
    return np.asarray(ridge.coef_, dtype=np.float64)


def excess_risk(state, bank, teacher, n_test, seed):
    """Monte-Carlo estimate of E_x[(G(x) - f*(<theta*, x>))^2] and its
    standard error."""
    if n_test < 1:
        raise ValueError(f"n_test must be at least 1, got {n_test}")
    xs = stream_rng(seed, "test").standard_normal((n_test, teacher.d))
    errors = np.square(predict(state, bank, xs)
                       - teacher(xs @ teacher.theta_star))
    se = float(stats.sem(errors)) if n_test > 1 else math.inf
    return float(errors.mean()), se
