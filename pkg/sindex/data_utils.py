"""Teachers and synthetic single-index datasets.

Every random draw comes from a named stream of one integer seed, so the
training sample, the fine-tuning sample and the test sample of a run never
share randomness.
"""
import hashlib
import json
from dataclasses import dataclass, field

import numpy as np
import pandas as pd

from sindex.exceptions import DegenerateSeriesError
from sindex.hermite import (
    DEFAULT_ORDER, HermiteSeries, QuadratureRule, check_truncation,
    eval_hermite, hermite_table, project_to_series, strip_low_order
)

STREAMS = {
    "teacher": 0,
    "train": 1,
    "finetune": 2,
    "test": 3,
    "probe": 4,
    "init": 5
}
DEFAULT_KNOTS = (-2.0, -0.5, 1.0, 2.0)
DEFAULT_VALUES = (0.0, 1.0, -0.6, 0.0)
DEFAULT_NOISE = 0.001


def stream_rng(seed, stream, *substream):
    if stream not in STREAMS:
        raise ValueError(f"Unknown seed stream {stream!r}")
    sequence = np.random.SeedSequence(
        seed, spawn_key=(STREAMS[stream], *substream)
    )
    return np.random.default_rng(sequence)


def uniform_direction(rng, d):
    g = rng.standard_normal(d)
    return g / np.linalg.norm(g)


@dataclass(frozen=True)
class LinkSpec:
    kind: str = "piecewise_linear"
    knots: tuple = DEFAULT_KNOTS
    values: tuple = DEFAULT_VALUES
    s: int = 1
    base: "LinkSpec" = None
    coeffs: tuple = ()

    def __post_init__(self):
        kinds = ("piecewise_linear", "hermite_monomial", "stripped",
                 "custom_series", "relu")
        if self.kind not in kinds:
            raise ValueError(f"Unknown link kind {self.kind!r}")
        if self.kind == "piecewise_linear":
            knots = np.asarray(self.knots, dtype=np.float64)
            if knots.size < 2 or knots.size != len(self.values):
                raise ValueError("need matching knots and values, at least 2")
            if np.any(np.diff(knots) <= 0):
                raise ValueError("knots must be strictly increasing")
        if self.kind in ("hermite_monomial", "stripped") and self.s < 1:
            raise ValueError(f"s must be at least 1, got {self.s}")
        if self.kind == "stripped" and self.base is None:
            raise ValueError("a stripped link needs a base link")
        if self.kind == "custom_series" and len(self.coeffs) == 0:
            raise ValueError("custom_series needs coefficients")

    @classmethod
    def piecewise_linear(cls, knots=DEFAULT_KNOTS, values=DEFAULT_VALUES):
        return cls("piecewise_linear", tuple(knots), tuple(values))

    @classmethod
    def hermite_monomial(cls, s):
        return cls("hermite_monomial", s=int(s))

    @classmethod
    def stripped(cls, base, s):
        return cls("stripped", s=int(s), base=base)

    @classmethod
    def custom_series(cls, coeffs):
        return cls("custom_series", coeffs=tuple(float(a) for a in coeffs))

    @classmethod
    def relu(cls):
        return cls("relu")

    def to_dict(self):
        payload = {"kind": self.kind}
        if self.kind == "piecewise_linear":
            payload["knots"] = list(self.knots)
            payload["values"] = list(self.values)
        elif self.kind == "hermite_monomial":
            payload["s"] = self.s
        elif self.kind == "stripped":
            payload["s"] = self.s
            payload["base"] = self.base.to_dict()
        elif self.kind == "custom_series":
            payload["coeffs"] = list(self.coeffs)
        return payload

    @classmethod
    def from_dict(cls, payload):
        kind = payload.get("kind", "piecewise_linear")
        if kind == "piecewise_linear":
            return cls.piecewise_linear(payload.get("knots", DEFAULT_KNOTS),
                                        payload.get("values", DEFAULT_VALUES))
        if kind == "hermite_monomial":
            return cls.hermite_monomial(payload["s"])
        if kind == "stripped":
            base = cls.from_dict(payload.get("base",
                                             {"kind": "piecewise_linear"}))
            return cls.stripped(base, payload["s"])
        if kind == "custom_series":
            return cls.custom_series(payload["coeffs"])
        return cls(kind)

    @property
    def strip_order(self):
        return self.s if self.kind == "stripped" else 1

    @property
    def root(self):
        return self.base.root if self.kind == "stripped" else self

    def raw(self, z):
        """The link before centering and normalization."""
        link = self.root
        z = np.asarray(z, dtype=np.float64)
        if link.kind == "piecewise_linear":
            return np.interp(z, link.knots, link.values, left=0.0, right=0.0)
        if link.kind == "hermite_monomial":
            return eval_hermite(link.s, z)
        if link.kind == "relu":
            return np.maximum(z, 0.0)
        return HermiteSeries(np.asarray(link.coeffs)).evaluate(z)

    def quadrature(self):
        link = self.root
        if link.kind == "piecewise_linear":
            return QuadratureRule.piecewise(link.knots, spacing=2.0)
        if link.kind == "relu":
            return QuadratureRule.piecewise((0.0,), spacing=2.0)
        return QuadratureRule.gauss_hermite()


@dataclass(frozen=True)
class TeacherSpec:
    """Centered, unit-normalized link f* with direction theta* and noise
    level sigma.

    `series` is the truncated Hermite expansion; `__call__` evaluates the
    link itself, which for kinked links differs from the series beyond
    the truncation order.
    """
    link: LinkSpec
    series: HermiteSeries
    theta_star: np.ndarray
    sigma: float
    low_order: np.ndarray = field(repr=False)
    scale: float = 1.0

    def __call__(self, z):
        z = np.asarray(z, dtype=np.float64)
        k = self.low_order.size
        removed = np.tensordot(self.low_order, hermite_table(k - 1, z),
                               axes=1)
        return (self.link.raw(z) - removed) / self.scale

    @property
    def d(self):
        return self.theta_star.size

    @property
    def truncation_order(self):
        return self.series.truncation_order

    def digest(self):
        payload = json.dumps({
            "link": self.link.to_dict(),
            "theta_star": self.theta_star.tolist(),
            "sigma": self.sigma,
            "J": self.truncation_order
        })
        return hashlib.sha256(payload.encode()).hexdigest()[:16]


def make_teacher(link, d, seed, sigma=DEFAULT_NOISE, J=DEFAULT_ORDER,
                 fixed_direction=False):
    """Project `link` on h_0..h_J, strip orders below s (1 unless the link
    is stripped), renormalize, and draw theta* from the teacher stream."""
    if d < 2:
        raise ValueError(f"d must be at least 2, got {d}")
    if sigma < 0:
        raise ValueError(f"sigma must be non-negative, got {sigma}")
    if isinstance(link, dict):
        link = LinkSpec.from_dict(link)
    raw = project_to_series(link.raw, J, link.quadrature())
    s = link.strip_order
    try:
        series = strip_low_order(raw, s)
    except DegenerateSeriesError as e:
        raise DegenerateSeriesError(
            f"link {link.kind} vanishes after removing orders below {s}"
        ) from e
    check_truncation(series)
    low_order = np.array(raw.coeffs[:s])
    scale = float(np.linalg.norm(raw.coeffs[s:]))
    if fixed_direction:
        theta_star = np.eye(d)[0]
    else:
        theta_star = uniform_direction(stream_rng(seed, "teacher"), d)
    return TeacherSpec(link, series, theta_star, float(sigma), low_order,
                       scale)


@dataclass(frozen=True)
class Dataset:
    xs: np.ndarray
    ys: np.ndarray
    seed: int
    teacher_hash: str
    stream: str = "train"

    @property
    def n(self):
        return self.ys.size

    @property
    def d(self):
        return self.xs.shape[1]

    def to_frame(self):
        frame = pd.DataFrame(
            self.xs,
            columns=[f"x_{i + 1}" for i in range(self.d)]
        )
        frame["y"] = self.ys
        return frame

    def to_csv(self, path):
        self.to_frame().to_csv(path, index=False)

    def save(self, path):
        np.savez(path, xs=self.xs, ys=self.ys, seed=self.seed,
                 teacher_hash=self.teacher_hash, stream=self.stream)

    @classmethod
    def load(cls, path):
        with np.load(path) as cached:
            return cls(cached["xs"], cached["ys"], int(cached["seed"]),
                       str(cached["teacher_hash"]), str(cached["stream"]))


def sample_dataset(teacher, n, d, seed, stream="train"):
    """y_i = f*(<theta*, x_i>) + xi_i with x_i ~ N(0, I_d)."""
    if n < 1:
        raise ValueError(f"n must be at least 1, got {n}")
    if d != teacher.d:
        raise ValueError(f"teacher lives in dimension {teacher.d}, got {d}")
    rng = stream_rng(seed, stream)
    xs = rng.standard_normal((n, d))
    noise = rng.standard_normal(n)
    ys = teacher(xs @ teacher.theta_star) + teacher.sigma * noise
    return Dataset(xs, ys, seed, teacher.digest(), stream)
