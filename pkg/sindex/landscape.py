"""Population landscape of the single-index network in (c, m).

With m = <theta, theta*> the population loss only sees theta through m:

    L(c, m) = |alpha|^2 + sigma^2 - 2 c^T v_m + c^T Q_lambda c,
    v_m = sum_j alpha_j m^j T_j,

so minimizing over c gives the projected loss
L_bar(m) = |alpha|^2 + sigma^2 - v_m^T Q_lambda^{-1} v_m.
"""
import enum
import logging
import math
from dataclasses import dataclass

import numpy as np
import pandas as pd
from scipy import optimize

from sindex.data_utils import (
    Dataset, sample_dataset, stream_rng, uniform_direction
)
from sindex.exceptions import TheoryViolationError
from sindex.features import build_operator
from sindex.hermite import HermiteSeries, information_exponent, ou_transform
from sindex.model import ModelState, grad_c, grad_theta_spherical

logger = logging.getLogger(__name__)

DEFAULT_GRID_POINTS = 201


class Region(str, enum.Enum):
    EQUATOR = "equator"
    POLE = "pole"
    INTERIOR = "interior"


def _check_overlap(m):
    if not -1.0 <= m <= 1.0:
        raise ValueError(f"m must lie in [-1, 1], got {m}")
    return float(m)


def reweighted_series(series, m):
    """g_m = U_m f*: alpha_j -> alpha_j m^j."""
    return ou_transform(series, _check_overlap(m))


def reweighted_derivative(series, m):
    """g_bar_m = d g_m / dm: alpha_j -> j alpha_j m^{j-1}."""
    m = _check_overlap(m)
    j = np.arange(1, len(series))
    coeffs = np.zeros(len(series))
    coeffs[1:] = j * series.coeffs[1:] * np.power(m, j - 1)
    return HermiteSeries(coeffs)


@dataclass(frozen=True)
class PopulationOracle:
    teacher_series: HermiteSeries
    op: object
    sigma: float = 0.0

    def __post_init__(self):
        if self.teacher_series.truncation_order != self.op.truncation_order:
            raise ValueError(
                f"teacher is truncated at order "
                f"{self.teacher_series.truncation_order}, the operator at "
                f"{self.op.truncation_order}"
            )
        if self.sigma < 0:
            raise ValueError(f"sigma must be non-negative, got {self.sigma}")

    @property
    def lam(self):
        return self.op.lam

    @property
    def sigma_sq(self):
        return self.sigma ** 2

    @property
    def constant(self):
        """E[y^2] = |alpha|^2 + sigma^2 at truncation."""
        return self.teacher_series.norm_sq() + self.sigma_sq

    def with_lam(self, lam):
        return PopulationOracle(self.teacher_series, self.op.with_lam(lam),
                                self.sigma)

    def v(self, m):
        return self.op.apply(reweighted_series(self.teacher_series, m))

    def w(self, m):
        return self.op.apply(reweighted_derivative(self.teacher_series, m))


def build_oracle(teacher, bank, lam, backend="quadrature"):
    """PopulationOracle of `teacher` on `bank`, truncated where the teacher
    series is."""
    op = build_operator(bank, teacher.truncation_order, lam, backend=backend)
    return PopulationOracle(teacher.series, op, teacher.sigma)


def population_loss(oracle, c, m):
    v = oracle.v(m)
    c = np.asarray(c, dtype=np.float64)
    return float(oracle.constant - 2.0 * c @ v
                 + c @ oracle.op.reg_gram @ c)


def projected_population_loss(oracle, m):
    """min_c L(c, m) and its minimizer c_opt = Q_lambda^{-1} v_m."""
    v = oracle.v(m)
    c_opt = oracle.op.solve(v)
    return float(oracle.constant - v @ c_opt), c_opt


def critical_residual(oracle, m):
    """-sum_j j alpha_j^2 m^{2j-1} + <(I - P_lambda) g_m, g_bar_m>.

    Half the derivative of L_bar in m; its zeros (with m = +-1) are the
    critical directions of the projected loss.
    """
    g = reweighted_series(oracle.teacher_series, m)
    g_bar = reweighted_derivative(oracle.teacher_series, m)
    direct = g.inner(g_bar)
    c_opt = oracle.op.solve(oracle.op.apply(g))
    projected = direct - c_opt @ oracle.op.apply(g_bar)
    return float(projected - direct)


def population_grads(oracle, c, m):
    """grad_c L and the coefficient k with grad_theta L = k theta*.

    The spherical gradient at theta has norm |k| sqrt(1 - m^2).
    """
    c = np.asarray(c, dtype=np.float64)
    g_c = 2.0 * (oracle.op.reg_gram @ c - oracle.v(m))
    coefficient = -2.0 * float(c @ oracle.w(m))
    return g_c, coefficient


def spherical_grad_norm(coefficient, m):
    return abs(coefficient) * math.sqrt(max(0.0, 1.0 - m * m))


def classify_near_critical(oracle, c, m, eps):
    """Place an eps-critical point at the equator or at a pole.

    Raises TheoryViolationError when both gradients are below eps but |m|
    meets neither threshold.
    """
    if not eps > 0:
        raise ValueError(f"eps must be positive, got {eps}")
    m = _check_overlap(m)
    g_c, coefficient = population_grads(oracle, c, m)
    grad_c_norm = float(np.linalg.norm(g_c))
    grad_theta_norm = spherical_grad_norm(coefficient, m)
    if grad_c_norm > eps or grad_theta_norm > eps:
        return Region.INTERIOR
    s = information_exponent(oracle.teacher_series)
    alpha_sq = oracle.teacher_series.coeffs[s] ** 2
    equator = (2.0 * eps / (s * alpha_sq)) ** (1.0 / (2 * s - 1))
    pole = (2.0 ** (2 * s - 1) / (s * alpha_sq)) ** 2 * eps ** 2
    if abs(m) <= equator:
        return Region.EQUATOR
    if 1.0 - abs(m) <= pole:
        return Region.POLE
    raise TheoryViolationError(
        f"eps-critical point at m = {m:.6g} is neither within {equator:.3g} "
        f"of the equator nor within {pole:.3g} of a pole",
        diagnostics={
            "m": m,
            "eps": eps,
            "grad_c_norm": grad_c_norm,
            "grad_theta_norm": grad_theta_norm,
            "equator_threshold": equator,
            "pole_threshold": pole,
            "s": s
        }
    )


def m_grid(points=DEFAULT_GRID_POINTS):
    if points < 2:
        raise ValueError(f"an m-grid needs at least 2 points, got {points}")
    return np.linspace(-1.0, 1.0, int(points))


def _as_grid(grid):
    if grid is None:
        return m_grid()
    if np.isscalar(grid):
        return m_grid(int(grid))
    return np.asarray(grid, dtype=np.float64)


def scan(oracle, grid=None):
    """Projected loss, residual and gradient norms at c_opt(m) on a grid."""
    rows = []
    for m in _as_grid(grid):
        loss, c_opt = projected_population_loss(oracle, m)
        g_c, coefficient = population_grads(oracle, c_opt, m)
        rows.append({
            "m": float(m),
            "loss": loss,
            "residual": critical_residual(oracle, m),
            "grad_c_norm": float(np.linalg.norm(g_c)),
            "grad_theta_sph": spherical_grad_norm(coefficient, m)
        })
    return pd.DataFrame(
        rows,
        columns=["m", "loss", "residual", "grad_c_norm", "grad_theta_sph"]
    )


def find_critical_points(oracle, grid=None, include_poles=False, xtol=1e-12):
    """Zeros of the critical residual, bracketed by sign changes on `grid`
    and refined by bisection."""
    ms = _as_grid(grid)
    values = np.array([critical_residual(oracle, m) for m in ms])
    roots = list(ms[values == 0.0])
    for i in np.flatnonzero(values[:-1] * values[1:] < 0):
        roots.append(optimize.bisect(
            lambda m: critical_residual(oracle, m), ms[i], ms[i + 1],
            xtol=xtol
        ))
    if include_poles:
        roots.extend([-1.0, 1.0])
    return np.unique(np.round(roots, 12))


def is_monotone(oracle, grid=101):
    """Whether L_bar strictly decreases in |m| on the grid."""
    ms = _as_grid(grid)
    losses = np.array([projected_population_loss(oracle, m)[0] for m in ms])
    right = losses[ms >= 0]
    left = losses[ms <= 0]
    return bool(np.all(np.diff(right) < 0) and np.all(np.diff(left) > 0))


def monotonicity_break(oracle, lams, grid=101):
    """Smallest lambda in `lams` at which L_bar stops decreasing in |m|.

    Returns (threshold or None, table of lambda against monotone).
    """
    lams = sorted(float(lam) for lam in lams)
    rows = [{"lam": lam, "monotone": is_monotone(oracle.with_lam(lam), grid)}
            for lam in lams]
    table = pd.DataFrame(rows, columns=["lam", "monotone"])
    broken = table.loc[~table["monotone"], "lam"]
    threshold = float(broken.iloc[0]) if len(broken) else None
    if threshold is not None:
        logger.info("L_bar stops decreasing in |m| at lambda = %g", threshold)
    return threshold, table


@dataclass(frozen=True)
class DeviationSummary:
    """Largest empirical-vs-population gradient gaps per sample size."""
    table: pd.DataFrame
    slope_c: float
    slope_theta: float


def _slope(ns, values):
    if len(ns) < 2 or np.any(np.asarray(values) <= 0):
        return math.nan
    return float(np.polyfit(np.log(ns), np.log(values), 1)[0])


def _overlap(theta_star, theta):
    return float(np.clip(theta @ theta_star, -1.0, 1.0))


def deviation_probe(bank, teacher, n, sample_count, r, seed):
    """Max over `sample_count` random (c, theta) with |c| <= r of
    |grad L_n - grad L| for both blocks, for each sample size in `n`.

    Samples of different sizes are nested prefixes of one probe-stream
    draw; the probe points are shared across sizes.
    """
    if sample_count < 1:
        raise ValueError(f"sample_count must be at least 1, got "
                         f"{sample_count}")
    if r < 0:
        raise ValueError(f"r must be non-negative, got {r}")
    ns = sorted(int(k) for k in np.atleast_1d(n))
    oracle = PopulationOracle(
        teacher.series,
        build_operator(bank, teacher.truncation_order),
        teacher.sigma
    )
    data = sample_dataset(teacher, ns[-1], teacher.d, seed, stream="probe")
    rng = stream_rng(seed, "probe", 1)
    points = []
    for _ in range(sample_count):
        radius = r * rng.uniform() ** (1.0 / bank.N)
        c = radius * uniform_direction(rng, bank.N)
        points.append(ModelState(c, uniform_direction(rng, teacher.d)))
    rows = []
    for size in ns:
        subset = Dataset(data.xs[:size], data.ys[:size], data.seed,
                         data.teacher_hash, data.stream)
        dev_c = dev_theta = 0.0
        for state in points:
            m = _overlap(teacher.theta_star, state.theta)
            pop_c, coefficient = population_grads(oracle, state.c, m)
            pop_theta = coefficient * (teacher.theta_star - m * state.theta)
            dev_c = max(dev_c, float(np.linalg.norm(
                grad_c(state, bank, subset, 0.0) - pop_c
            )))
            dev_theta = max(dev_theta, float(np.linalg.norm(
                grad_theta_spherical(state, bank, subset, 0.0) - pop_theta
            )))
        rows.append({"n": size, "max_grad_c_dev": dev_c,
                     "max_grad_theta_dev": dev_theta})
    table = pd.DataFrame(rows,
                         columns=["n", "max_grad_c_dev", "max_grad_theta_dev"])
    return DeviationSummary(
        table,
        _slope(table["n"], table["max_grad_c_dev"]),
        _slope(table["n"], table["max_grad_theta_dev"])
    )
