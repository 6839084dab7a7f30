"""Frozen random-feature bank and the Gaussian integrals built on it.

A bank holds N biases b_i ~ N(0, tau^2) and Rademacher signs eps_i. Feature
i is phi_i(u) = phi(eps_i u - b_i) / sqrt(N); T maps a function f to the
vector of inner products <f, phi_i>_gamma and Q = T T^*.
"""
import hashlib
import json
import logging
import math
import os
import re
from dataclasses import dataclass
from functools import cached_property

import numpy as np
import tensorflow as tf
from scipy import linalg, special

from sindex.exceptions import IntegralDivergenceError, QuadratureError
from sindex.hermite import (
    DEFAULT_ORDER, GAUSS_HERMITE_NODES, HermiteSeries, QuadratureRule,
    gaussian_pdf, hermite_table, relu_coeffs_closed_form
)

logger = logging.getLogger(__name__)

NEGATIVE_EIGEN_TOL = 1e-10
BANK_NODES_PER_PIECE = 16


def smoothed_relu(rho, t):
    """Gaussian-smoothed ReLU U_rho(max(0, .)) evaluated at t.

    >>> smoothed_relu(0.0, 3.0)
    0.3989422804014327
    """
    values = Activation.smoothed(rho).value(t)
    return float(values) if np.ndim(values) == 0 else values


@dataclass(frozen=True)
class Activation:
    kind: str = "relu"
    rho: float = 1.0

    def __post_init__(self):
        if self.kind not in ("relu", "smoothed_relu"):
            raise ValueError(f"Unknown activation {self.kind!r}")
        if not 0.0 <= self.rho <= 1.0:
            raise ValueError(f"rho must lie in [0, 1], got {self.rho}")
        if self.kind == "relu" and self.rho != 1.0:
            raise ValueError("plain relu has rho = 1")

    @classmethod
    def smoothed(cls, rho):
        if not 0.0 <= rho <= 1.0:
            raise ValueError(f"rho must lie in [0, 1], got {rho}")
        return cls("smoothed_relu", float(rho))

    @classmethod
    def parse(cls, text):
        """Accept 'relu', 'smoothed_relu(0.9)' or an Activation."""
        if isinstance(text, Activation):
            return text
        text = str(text).strip()
        if text == "relu":
            return cls()
        match = re.fullmatch(r"smoothed_relu\(\s*([0-9.eE+-]+)\s*\)", text)
        if match is None:
            raise ValueError(f"Unknown activation {text!r}")
        return cls.smoothed(float(match.group(1)))

    def __str__(self):
        if self.kind == "relu":
            return "relu"
        return f"smoothed_relu({self.rho!r})"

    @property
    def is_relu(self):
        return self.kind == "relu" or self.rho == 1.0

    @property
    def _scale(self):
        return math.sqrt(1.0 - self.rho ** 2)

    def value(self, t):
        t = np.asarray(t, dtype=np.float64)
        if self.is_relu:
            return np.maximum(t, 0.0)
        s = self._scale
        x = self.rho * t / s
        return self.rho * t * special.ndtr(x) + s * gaussian_pdf(x)

    def first(self, t):
        t = np.asarray(t, dtype=np.float64)
        if self.is_relu:
            # ReLU'(0) = 0
            return (t > 0).astype(np.float64)
        return self.rho * special.ndtr(self.rho * t / self._scale)

    def second(self, t):
        t = np.asarray(t, dtype=np.float64)
        if self.is_relu:
            return np.zeros_like(t)
        s = self._scale
        return self.rho ** 2 / s * gaussian_pdf(self.rho * t / s)

    def tf_value(self, t):
        if self.is_relu:
            return tf.nn.relu(t)
        s = self._scale
        x = self.rho * t / s
        cdf = 0.5 * tf.math.erfc(-x / math.sqrt(2.0))
        pdf = tf.exp(-0.5 * tf.square(x)) / math.sqrt(2.0 * math.pi)
        return self.rho * t * cdf + s * pdf

    def hermite_coeffs(self, J):
        """Coefficients of phi itself; smoothing multiplies by rho^j."""
        coeffs = relu_coeffs_closed_form(J).coeffs
        if not self.is_relu:
            coeffs = coeffs * np.power(self.rho, np.arange(J + 1))
        return HermiteSeries(coeffs)

    def second_derivative_bound(self):
        if self.is_relu:
            return math.inf
        return 4.0 * self.rho ** 2 / self._scale


RELU = Activation()


@dataclass(frozen=True)
class FeatureBank:
    biases: np.ndarray
    signs: np.ndarray
    tau: float
    activation: Activation = RELU
    seed: int = None

    def __post_init__(self):
        biases = np.array(self.biases, dtype=np.float64)
        signs = np.array(self.signs, dtype=np.float64)
        if biases.ndim != 1 or biases.size < 1:
            raise ValueError("a feature bank needs at least one bias")
        if signs.shape != biases.shape:
            raise ValueError(
                f"{signs.size} signs given for {biases.size} biases"
            )
        if not np.all(np.abs(signs) == 1.0):
            raise ValueError("signs must be +1 or -1")
        if not self.tau > 1.0:
            raise ValueError(f"tau must exceed 1, got {self.tau}")
        biases.setflags(write=False)
        signs.setflags(write=False)
        object.__setattr__(self, "biases", biases)
        object.__setattr__(self, "signs", signs)
        object.__setattr__(self, "activation",
                           Activation.parse(self.activation))

    @property
    def N(self):
        return int(self.biases.size)

    @property
    def kinks(self):
        """Points u where eps_i u - b_i = 0."""
        return self.signs * self.biases

    def to_dict(self, explicit=None):
        payload = {
            "seed": self.seed,
            "N": self.N,
            "tau": self.tau,
            "activation": str(self.activation)
        }
        if explicit or (explicit is None and self.seed is None):
            payload["biases"] = self.biases.tolist()
            payload["signs"] = self.signs.tolist()
        return payload

    def to_json(self):
        return json.dumps(self.to_dict(explicit=True))

    @classmethod
    def from_dict(cls, payload):
        activation = Activation.parse(payload.get("activation", "relu"))
        if "biases" in payload:
            return cls(np.asarray(payload["biases"]),
                       np.asarray(payload["signs"]),
                       float(payload["tau"]),
                       activation,
                       payload.get("seed"))
        return sample_bank(int(payload["N"]), float(payload["tau"]),
                           int(payload["seed"]), activation)

    @classmethod
    def from_json(cls, text):
        return cls.from_dict(json.loads(text))

    def digest(self):
        return hashlib.sha256(self.to_json().encode()).hexdigest()[:16]


def sample_bank(N, tau, seed, activation=RELU):
    if N < 1:
        raise ValueError(f"N must be at least 1, got {N}")
    if not tau > 1.0:
        raise ValueError(f"tau must exceed 1, got {tau}")
    rng = np.random.default_rng(seed)
    biases = tau * rng.standard_normal(N)
    signs = 2.0 * rng.integers(0, 2, size=N) - 1.0
    return FeatureBank(
        biases,
        signs,
        float(tau),
        Activation.parse(activation),
        seed
    )


def _preactivation(bank, us):
    us = np.asarray(us, dtype=np.float64)
    return us[..., None] * bank.signs - bank.biases


def phi_matrix(bank, us):
    """Rows Phi(u) for every u; shape us.shape + (N,)."""
    values = bank.activation.value(_preactivation(bank, us))
    return values / math.sqrt(bank.N)


def phi_prime_matrix(bank, us):
    pre = _preactivation(bank, us)
    return bank.signs * bank.activation.first(pre) / math.sqrt(bank.N)


def phi(bank, u):
    return phi_matrix(bank, np.float64(u))


def phi_prime(bank, u):
    return phi_prime_matrix(bank, np.float64(u))


def empirical_kernel(bank, u, v):
    return float(phi(bank, u) @ phi(bank, v))


def kernel(tau, activation, u, v, quad=None):
    """Population kernel E_{b, eps}[phi(eps u - b) phi(eps v - b)].

    The expectation over b ~ N(0, tau^2) uses a composite rule in z = b / tau
    split at the kinks +-u/tau and +-v/tau; eps is averaged exactly.
    """
    activation = Activation.parse(activation)
    if quad is None:
        kinks = np.array([u, -u, v, -v], dtype=np.float64) / tau
        quad = QuadratureRule.piecewise(kinks)
    lo, hi = quad.span
    reach = max(abs(u), abs(v)) / tau
    if reach > min(-lo, hi):
        raise QuadratureError(
            f"kernel arguments ({u}, {v}) exceed the quadrature range "
            f"[{lo * tau:.3g}, {hi * tau:.3g}]"
        )
    b = tau * quad.nodes
    total = 0.0
    for eps in (1.0, -1.0):
        total += quad.expect(activation.value(eps * u - b)
                             * activation.value(eps * v - b))
    return float(0.5 * total)


def _x_pdf(x):
    return np.where(np.isfinite(x), x * gaussian_pdf(np.where(
        np.isfinite(x), x, 0.0)), 0.0)


def _interval_moments(lo, hi):
    """E[z^k 1(lo < z < hi)] for k = 0, 1, 2; zero on empty intervals."""
    hi = np.maximum(hi, lo)
    m0 = special.ndtr(hi) - special.ndtr(lo)
    m1 = gaussian_pdf(lo) - gaussian_pdf(hi)
    m2 = m0 + _x_pdf(lo) - _x_pdf(hi)
    return m0, m1, m2


def relu_kernel_exact(tau, u, v):
    """Closed form of the ReLU kernel via truncated Gaussian moments."""
    total = 0.0
    for eps in (1.0, -1.0):
        p, q = eps * u, eps * v
        h = min(p, q) / tau
        m0, m1, m2 = _interval_moments(-np.inf, h)
        total += p * q * m0 - tau * (p + q) * m1 + tau ** 2 * m2
    return float(0.5 * total)


def feature_hermite_coeffs_exact(biases, signs, J):
    """<h_j, max(0, eps z - b)>_gamma for every (b, eps); shape (len, J+1).

    For eps = +1 and j >= 2 the coefficient is phi(b) h_{j-2}(b) /
    sqrt(j (j-1)); eps = -1 flips the sign of odd orders.
    """
    b = np.asarray(biases, dtype=np.float64)
    eps = np.asarray(signs, dtype=np.float64)
    coeffs = np.empty(b.shape + (J + 1,))
    tail = special.ndtr(-b)
    coeffs[..., 0] = gaussian_pdf(b) - b * tail
    if J >= 1:
        coeffs[..., 1] = tail
    if J >= 2:
        j = np.arange(2, J + 1)
        table = hermite_table(J - 2, b)
        coeffs[..., 2:] = (gaussian_pdf(b)[..., None]
                           * np.moveaxis(table, 0, -1)
                           / np.sqrt(j * (j - 1.0)))
    parity = np.where(np.arange(J + 1) % 2 == 0, 1.0, -1.0)
    return np.where((eps < 0)[..., None], coeffs * parity, coeffs)


def relu_gram_exact(biases, signs):
    """Matrix of <max(0, eps_i z - b_i), max(0, eps_k z - b_k)>_gamma."""
    b = np.asarray(biases, dtype=np.float64)
    eps = np.asarray(signs, dtype=np.float64)
    # support of max(0, eps z - b) is (b, inf) for eps = 1, (-inf, -b) else
    lo = np.where(eps > 0, b, -np.inf)
    hi = np.where(eps > 0, np.inf, -b)
    m0, m1, m2 = _interval_moments(np.maximum.outer(lo, lo),
                                   np.minimum.outer(hi, hi))
    return (np.outer(eps, eps) * m2
            - (np.outer(eps, b) + np.outer(b, eps)) * m1
            + np.outer(b, b) * m0)


def bank_quadrature(bank, nodes_per_piece=BANK_NODES_PER_PIECE):
    return QuadratureRule.piecewise(bank.kinks, nodes_per_piece, spacing=1.0)


@dataclass(frozen=True)
class FeatureOperator:
    """T (as an N x (J+1) matrix with column j = T_j) and Q = T T^*."""
    t_vectors: np.ndarray
    gram: np.ndarray
    lam: float

    @property
    def N(self):
        return self.gram.shape[0]

    @property
    def truncation_order(self):
        return self.t_vectors.shape[1] - 1

    @cached_property
    def reg_gram(self):
        return self.gram + self.lam * np.eye(self.N)

    @cached_property
    def _factor(self):
        if self.lam <= 0:
            raise ValueError(
                f"Q_lambda is only positive definite for lambda > 0, got "
                f"{self.lam}"
            )
        return linalg.cho_factor(self.reg_gram, lower=True)

    def solve(self, rhs):
        """Q_lambda^{-1} rhs."""
        return linalg.cho_solve(self._factor, rhs)

    def apply(self, series):
        """T f = sum_j alpha_j T_j for a series truncated at J."""
        return self.t_vectors @ series.padded(self.truncation_order).coeffs

    def sigma_hat(self):
        """Sigma_hat = T^* T in the truncated Hermite basis."""
        return self.t_vectors.T @ self.t_vectors

    def trace_q(self):
        return float(np.trace(self.gram))

    def with_lam(self, lam):
        return FeatureOperator(self.t_vectors, self.gram, float(lam))


def build_operator(bank, J=DEFAULT_ORDER, lam=0.0, quad=None,
                   backend="quadrature"):
    if lam < 0:
        raise ValueError(f"lambda must be non-negative, got {lam}")
    if backend == "exact":
        if not bank.activation.is_relu:
            raise ValueError("the exact backend only covers plain relu")
        t_vectors = feature_hermite_coeffs_exact(bank.biases, bank.signs, J)
        gram = relu_gram_exact(bank.biases, bank.signs)
    elif backend == "quadrature":
        quad = bank_quadrature(bank) if quad is None else quad
        if quad.node_count < J + 1:
            raise QuadratureError(
                f"{quad.node_count} quadrature nodes cannot resolve Hermite "
                f"order {J}"
            )
        values = bank.activation.value(np.outer(bank.signs, quad.nodes)
                                       - bank.biases[:, None])
        weighted = values * quad.weights
        t_vectors = weighted @ hermite_table(J, quad.nodes).T
        gram = weighted @ values.T
        gram = 0.5 * (gram + gram.T)
    else:
        raise ValueError(f"Unknown operator backend {backend!r}")
    t_vectors = t_vectors / math.sqrt(bank.N)
    gram = gram / bank.N
    smallest = float(linalg.eigvalsh(gram, subset_by_index=[0, 0])[0])
    if smallest < -NEGATIVE_EIGEN_TOL:
        raise QuadratureError(
            f"Gram matrix has eigenvalue {smallest:.3g} below "
            f"{-NEGATIVE_EIGEN_TOL:g}"
        )
    return FeatureOperator(t_vectors, gram, float(lam))


def cached_operator(bank, J=DEFAULT_ORDER, lam=0.0, quad=None,
                    cache_dir=None, backend="quadrature"):
    """build_operator with an on-disk .npz cache."""
    if cache_dir is None:
        return build_operator(bank, J, lam, quad, backend)
    quad_id = "default" if quad is None else quad.digest()
    key = hashlib.sha256(
        f"{bank.to_json()}|{J}|{lam!r}|{quad_id}|{backend}".encode()
    ).hexdigest()[:24]
    path = os.path.join(cache_dir, f"operator-{key}.npz")
    if os.path.exists(path):
        logger.debug("operator cache hit %s", path)
        with np.load(path) as cached:
            return FeatureOperator(cached["t_vectors"], cached["gram"],
                                   float(cached["lam"]))
    op = build_operator(bank, J, lam, quad, backend)
    os.makedirs(cache_dir, exist_ok=True)
    np.savez(path, t_vectors=op.t_vectors, gram=op.gram, lam=op.lam)
    logger.debug("operator cached to %s", path)
    return op


def regularized_projection(op, series):
    """Solve min_c ||f - c^T Phi||^2 + lambda ||c||^2.

    Returns:
        c*: the minimizer Q_lambda^{-1} T f.
        residual_sq: ||(I - P_lambda) f||^2 = ||f||^2 - 2 <c*, Tf> + c*^T Q c*
    """
    if op.lam <= 0:
        raise ValueError(f"lambda must be positive, got {op.lam}")
    tf_vec = op.apply(series)
    c = op.solve(tf_vec)
    residual_sq = series.norm_sq() - 2.0 * c @ tf_vec + c @ op.gram @ c
    return c, float(residual_sq)


def feature_hermite_coeffs(biases, signs, J, activation=RELU, quad=None):
    """<h_j, phi(eps z - b)>_gamma, exact for relu, quadrature otherwise."""
    activation = Activation.parse(activation)
    biases = np.asarray(biases, dtype=np.float64)
    signs = np.asarray(signs, dtype=np.float64)
    if activation.is_relu and quad is None:
        return feature_hermite_coeffs_exact(biases, signs, J)
    if quad is None:
        quad = QuadratureRule.piecewise(np.ravel(signs * biases),
                                        BANK_NODES_PER_PIECE, spacing=1.0)
    values = activation.value(np.multiply.outer(signs, quad.nodes)
                              - biases[..., None])
    return (values * quad.weights) @ hermite_table(J, quad.nodes).T


def _bias_rule(tau):
    quad = QuadratureRule.gauss_hermite(GAUSS_HERMITE_NODES)
    return tau * quad.nodes, quad.weights


def population_covariance(tau, activation=RELU, J=DEFAULT_ORDER):
    """Sigma = E_{b, eps}[<h_i, phi_b^eps> <h_j, phi_b^eps>] on h_0..h_J."""
    b, w = _bias_rule(tau)
    coeffs = feature_hermite_coeffs(b, np.ones_like(b), J, activation)
    cov = (coeffs * w[:, None]).T @ coeffs
    # eps = -1 contributes (-1)^{i+j} times the eps = +1 term
    parity = np.add.outer(np.arange(J + 1), np.arange(J + 1)) % 2 == 0
    return np.where(parity, cov, 0.0)


def approximation_error(series, tau, lam, activation=RELU, J=DEFAULT_ORDER):
    """A(f, lambda) = lambda <f, (Sigma + lambda I)^{-1} f>."""
    if lam <= 0:
        raise ValueError(f"lambda must be positive, got {lam}")
    f = series.padded(J).coeffs
    system = population_covariance(tau, activation, J) + lam * np.eye(J + 1)
    return float(lam * f @ linalg.solve(system, f, assume_a="pos"))


def degrees_of_freedom(tau, lam, activation=RELU, J=DEFAULT_ORDER,
                       b_grid=None):
    """d_max(lambda) = sup_{b, eps} <P phi_b, (P Sigma P + lambda)^{-1}
    P phi_b>, with P removing the constant component."""
    if lam <= 0:
        raise ValueError(f"lambda must be positive, got {lam}")
    if b_grid is None:
        b_grid = tau * np.linspace(-4.0, 4.0, 81)
    b_grid = np.asarray(b_grid, dtype=np.float64)
    cov = population_covariance(tau, activation, J)
    cov[0, :] = 0.0
    cov[:, 0] = 0.0
    system = cov + lam * np.eye(J + 1)
    best = 0.0
    for eps in (1.0, -1.0):
        v = feature_hermite_coeffs(b_grid, np.full_like(b_grid, eps), J,
                                   activation)
        v[:, 0] = 0.0
        quad_forms = np.einsum("kj,jk->k", v, linalg.solve(system, v.T,
                                                            assume_a="pos"))
        best = max(best, float(quad_forms.max()))
    return best


def _tail_decays(integrand, nodes, half_width):
    peak = float(np.max(integrand))
    if peak == 0.0:
        return True
    outer = np.abs(nodes) >= 0.9 * half_width
    return float(np.max(integrand[outer], initial=0.0)) <= 1e-8 * peak


def rkhs_norm_bound(series, f_second, tau, quad=None):
    """Upper bound on ||f||_H^2:

    6 tau (int |f''|^2 / gamma_tau + ||f||^2 + 6 ||f'||^2 + 2 <f, f''>).

    The first integral is over the real line; it diverges unless f'' decays
    faster than the N(0, tau^2) density grows in reciprocal.
    """
    if quad is None:
        quad = QuadratureRule.piecewise((-1.0, 1.0), 64)
    nodes = quad.nodes
    second = np.asarray(f_second(nodes), dtype=np.float64)
    gamma_tau = gaussian_pdf(nodes / tau) / tau
    integrand = np.square(second) / gamma_tau
    lo, hi = quad.span
    if not np.all(np.isfinite(integrand)) or \
            not _tail_decays(integrand, nodes, min(-lo, hi)):
        raise IntegralDivergenceError(
            "weighted integral of |f''|^2 / gamma_tau does not decay at the "
            "edge of the quadrature range"
        )
    weighted = float(integrand @ quad.lebesgue_weights)
    norms = (series.norm_sq(), series.derivative().norm_sq(),
             series.inner(series.second_derivative()))
    return 6.0 * tau * (weighted + norms[0] + 6.0 * norms[1] + 2.0 * norms[2])
