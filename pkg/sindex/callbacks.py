import math

import numpy as np
import pandas as pd
import tensorflow as tf

from sindex.model import check_divergence

TRACE_COLUMNS = [
    "step",
    "m",
    "loss",
    "grad_c_norm",
    "grad_theta_norm",
    "c_norm",
    "phase"
]


class TraceRecorder(tf.keras.callbacks.Callback):
    """Records the diagnostics of a SingleIndexNetwork every
    `record_every` steps, plus the initial state."""
    def __init__(
        self,
        xs,
        ys,
        theta_star=None,
        record_every=1,
        warmup_steps=0,
        schedule="two_phase"
    ):
        super().__init__()
        self.xs = tf.constant(xs, dtype=tf.float64)
        self.ys = tf.constant(ys, dtype=tf.float64)
        self.theta_star = theta_star
        self.record_every = int(record_every)
        self.warmup_steps = int(warmup_steps)
        self.schedule = schedule
        self.rows = []

    def _phase(self, step):
        if self.schedule == "two_phase" and step <= self.warmup_steps:
            return "warmup"
        return "joint"

    def record(self, step):
        loss, g_c, g_theta = self.model.gradients(self.xs, self.ys)
        theta = self.model.theta.numpy()
        if self.theta_star is None:
            m = math.nan
        else:
            m = float(np.clip(theta @ self.theta_star, -1.0, 1.0))
        self.rows.append({
            "step": int(step),
            "m": m,
            "loss": float(loss),
            "grad_c_norm": float(tf.norm(g_c)),
            "grad_theta_norm": float(tf.norm(g_theta)),
            "c_norm": float(tf.norm(self.model.c)),
            "phase": self._phase(step)
        })

    def frame(self):
        return pd.DataFrame(self.rows, columns=TRACE_COLUMNS)

    def on_train_begin(self, logs=None):
        self.rows = []
        self.record(0)
        return super().on_train_begin(logs)

    def on_train_batch_end(self, batch, logs=None):
        # one batch is one Euler step
        step = batch + 1
        if step % self.record_every == 0:
            self.record(step)
        return super().on_train_batch_end(batch, logs)


class DivergenceMonitor(tf.keras.callbacks.Callback):
    """Stops `fit` with DivergenceError once the step loss blows up."""
    def on_train_batch_end(self, batch, logs=None):
        if logs and "loss" in logs:
            check_divergence(logs["loss"], batch + 1)
        return super().on_train_batch_end(batch, logs)
