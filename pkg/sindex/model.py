import json
import math
from dataclasses import dataclass

import numpy as np
import tensorflow as tf

from sindex.exceptions import DivergenceError
from sindex.features import FeatureBank, phi_matrix, phi_prime_matrix


UNIT_TOL = 1e-9
DESCENT_TOL = 1e-10
DIVERGENCE_LOSS = 1e6


@dataclass(frozen=True)
class ModelState:
    """Second-layer weights c and the shared unit direction theta."""
    c: np.ndarray
    theta: np.ndarray

    def __post_init__(self):
        c = np.array(self.c, dtype=np.float64)
        theta = np.array(self.theta, dtype=np.float64)
        if c.ndim != 1 or theta.ndim != 1:
            raise ValueError("c and theta must be vectors")
        c.setflags(write=False)
        theta.setflags(write=False)
        object.__setattr__(self, "c", c)
        object.__setattr__(self, "theta", theta)

    @property
    def N(self):
        return self.c.size

    @property
    def d(self):
        return self.theta.size

    def overlap(self, theta_star):
        """m = <theta, theta*>, clipped to [-1, 1]."""
        return float(np.clip(self.theta @ theta_star, -1.0, 1.0))

    def to_dict(self):
        return {"c": self.c.tolist(), "theta": self.theta.tolist()}

    def to_json(self):
        return json.dumps(self.to_dict())

    @classmethod
    def from_dict(cls, payload):
        return cls(np.asarray(payload["c"]), np.asarray(payload["theta"]))

    @classmethod
    def from_json(cls, text):
        return cls.from_dict(json.loads(text))


def _check(state, bank, xs):
    if state.N != bank.N:
        raise ValueError(
            f"state has {state.N} output weights but the bank has {bank.N} "
            "features"
        )
    if xs.shape[-1] != state.d:
        raise ValueError(
            f"inputs have dimension {xs.shape[-1]}, theta has {state.d}"
        )


def _check_data(data):
    if len(data.ys) == 0:
        raise ValueError("empty dataset")


def check_unit(theta):
    norm = float(np.linalg.norm(theta))
    if abs(norm - 1.0) > UNIT_TOL:
        raise ValueError(f"theta must be a unit vector, has norm {norm!r}")


def project_tangent(theta, v):
    """P_{theta perp} v = v - <theta, v> theta."""
    return v - (v @ theta) * theta


def predict(state, bank, xs):
    xs = np.asarray(xs, dtype=np.float64)
    _check(state, bank, xs)
    return phi_matrix(bank, xs @ state.theta) @ state.c


def forward(state, bank, x):
    return float(predict(state, bank, np.asarray(x)[None, :])[0])


def _residuals(state, bank, data):
    _check_data(data)
    xs = np.asarray(data.xs, dtype=np.float64)
    _check(state, bank, xs)
    u = xs @ state.theta
    features = phi_matrix(bank, u)
    return xs, u, features, features @ state.c - data.ys


def empirical_loss(state, bank, data, lam):
    if lam < 0:
        raise ValueError(f"lambda must be non-negative, got {lam}")
    *_, r = _residuals(state, bank, data)
    return float(np.mean(np.square(r)) + lam * state.c @ state.c)


def grad_c(state, bank, data, lam):
    _, _, features, r = _residuals(state, bank, data)
    return 2.0 * features.T @ r / r.size + 2.0 * lam * state.c


def grad_theta_spherical(state, bank, data, lam):
    check_unit(state.theta)
    xs, u, _, r = _residuals(state, bank, data)
    slopes = phi_prime_matrix(bank, u) @ state.c
    euclidean = 2.0 * xs.T @ (r * slopes) / r.size
    return project_tangent(state.theta, euclidean)


def kink_margin(state, bank, data):
    """Smallest |eps_i <theta, x> - b_i| over samples and features."""
    u = np.asarray(data.xs, dtype=np.float64) @ state.theta
    return float(np.min(np.abs(np.multiply.outer(u, bank.signs)
                               - bank.biases)))


def check_divergence(loss, step):
    """Raise DivergenceError when the loss is non-finite or above 1e6."""
    value = float(loss)
    if not math.isfinite(value) or value > DIVERGENCE_LOSS:
        raise DivergenceError(
            f"training diverged at step {step}: loss {value!r}"
        )
    return value


@tf.keras.utils.register_keras_serializable(package="SingleIndex")
class SingleIndexNetwork(tf.keras.Model):
    """G(x; c, theta) = c^T Phi(<theta, x>) trained by discretized gradient
    flow.

    Every call to `train_step` is one explicit Euler step on the full-batch
    loss: theta moves along the negative spherical gradient and is
    renormalized, c moves along its negative gradient once the step index
    passes `warmup_steps` (or from the start when schedule is "vanilla").
    With `backoff` both step sizes are halved until the loss does not
    increase by more than 1e-10; a step that still fails after
    `max_halvings` halvings is rejected.

    `train_step` is pure tensor code so `fit` compiles it into a graph.
    Divergence is checked outside the step by `check_divergence`.
    """
    def __init__(
            self,
            bank,
            d,
            lam,
            step_theta=1.0,
            step_c=0.01,
            warmup_steps=0,
            schedule="two_phase",
            backoff=True,
            max_halvings=30,
            **kwargs
    ):
        kwargs.setdefault("dtype", "float64")
        super().__init__(**kwargs)
        if isinstance(bank, dict):
            bank = FeatureBank.from_dict(bank)
        if schedule not in ("two_phase", "vanilla"):
            raise ValueError(f"Unknown schedule {schedule!r}")
        self.bank = bank
        self.d = int(d)
        self.lam = float(lam)
        self.step_theta = float(step_theta)
        self.step_c = float(step_c)
        self.warmup_steps = int(warmup_steps)
        self.schedule = schedule
        self.backoff = bool(backoff)
        self.max_halvings = int(max_halvings)
        self.signs = tf.constant(bank.signs, dtype=tf.float64)
        self.biases = tf.constant(bank.biases, dtype=tf.float64)
        self.c = self.add_weight(
            shape=(bank.N,),
            initializer="zeros",
            dtype="float64",
            trainable=True,
            name="c"
        )
        self.theta = self.add_weight(
            shape=(self.d,),
            initializer="zeros",
            dtype="float64",
            trainable=True,
            name="theta"
        )
        self.step_count = self.add_weight(
            shape=(),
            initializer="zeros",
            dtype="int64",
            trainable=False,
            name="step_count"
        )
        self.rejected_count = self.add_weight(
            shape=(),
            initializer="zeros",
            dtype="int64",
            trainable=False,
            name="rejected_count"
        )
        self.built = True

    @property
    def steps_taken(self):
        return int(self.step_count.numpy())

    @property
    def rejected_steps(self):
        return int(self.rejected_count.numpy())

    def set_state(self, state):
        if state.N != self.bank.N or state.d != self.d:
            raise ValueError("state does not match the network shape")
        self.c.assign(state.c)
        self.theta.assign(state.theta)

    def get_state(self):
        return ModelState(self.c.numpy(), self.theta.numpy())

    def _features(self, xs, theta):
        u = tf.linalg.matvec(xs, theta)
        pre = u[:, None] * self.signs - self.biases
        return self.bank.activation.tf_value(pre) / math.sqrt(self.bank.N)

    def _loss(self, xs, ys, c, theta):
        r = tf.linalg.matvec(self._features(xs, theta), c) - ys
        return tf.reduce_mean(tf.square(r)) \
            + self.lam * tf.reduce_sum(tf.square(c))

    def call(self, inputs):
        xs = tf.cast(inputs, tf.float64)
        return tf.linalg.matvec(self._features(xs, self.theta), self.c)

    def gradients(self, xs, ys):
        """Loss, c-gradient and spherical theta-gradient at the current
        weights."""
        xs = tf.convert_to_tensor(xs, dtype=tf.float64)
        ys = tf.convert_to_tensor(ys, dtype=tf.float64)
        with tf.GradientTape() as tape:
            loss = self._loss(xs, ys, self.c, self.theta)
        g_c, g_theta = tape.gradient(loss, [self.c, self.theta])
        g_theta = g_theta - tf.reduce_sum(g_theta * self.theta) * self.theta
        return loss, g_c, g_theta

    def c_active(self, step):
        if self.schedule == "vanilla":
            return tf.constant(True)
        return step > self.warmup_steps

    def _candidate(self, xs, ys, scale, eta_c, g_c, g_theta):
        theta_new = self.theta - scale * self.step_theta * g_theta
        theta_new = theta_new / tf.norm(theta_new)
        c_new = self.c - scale * eta_c * g_c
        return c_new, theta_new, self._loss(xs, ys, c_new, theta_new)

    def train_step(self, data):
        xs, ys = data
        xs = tf.cast(xs, tf.float64)
        ys = tf.cast(ys, tf.float64)
        step = self.step_count + 1
        loss, g_c, g_theta = self.gradients(xs, ys)
        eta_c = tf.where(self.c_active(step),
                         tf.constant(self.step_c, tf.float64),
                         tf.constant(0.0, tf.float64))
        scale = tf.constant(1.0, tf.float64)
        c_new, theta_new, new_loss = self._candidate(
            xs, ys, scale, eta_c, g_c, g_theta)
        if self.backoff:
            def fails(k, scale, c_new, theta_new, new_loss):
                # NaN compares false, so it keeps halving
                return tf.logical_and(
                    k < self.max_halvings,
                    tf.logical_not(new_loss <= loss + DESCENT_TOL)
                )

            def halve(k, scale, c_new, theta_new, new_loss):
                scale = 0.5 * scale
                return (k + 1, scale) + self._candidate(
                    xs, ys, scale, eta_c, g_c, g_theta)

            _, scale, c_new, theta_new, new_loss = tf.while_loop(
                fails, halve,
                (tf.constant(0), scale, c_new, theta_new, new_loss)
            )
            accepted = new_loss <= loss + DESCENT_TOL
        else:
            accepted = tf.constant(True)
        self.theta.assign(tf.where(accepted, theta_new, self.theta))
        self.c.assign(tf.where(accepted, c_new, self.c))
        self.rejected_count.assign_add(
            tf.cast(tf.logical_not(accepted), tf.int64))
        self.step_count.assign(step)
        loss = tf.where(accepted, new_loss, loss)
        return {"loss": loss, "step_scale": scale}

    def get_config(self):
        base_config = super().get_config()
        config = {
            "bank": self.bank.to_dict(explicit=True),
            "d": self.d,
            "lam": self.lam,
            "step_theta": self.step_theta,
            "step_c": self.step_c,
            "warmup_steps": self.warmup_steps,
            "schedule": self.schedule,
            "backoff": self.backoff,
            "max_halvings": self.max_halvings
        }
        return {**base_config, **config}
