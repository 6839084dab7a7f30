"""Normalized Hermite series on L2(gamma) and the quadrature rules used to
compute Gaussian inner products.

>>> eval_hermite(2, 1.0)
0.0
>>> relu_coeffs_closed_form(1).coeffs
array([0.39894228, 0.5       ])
"""
import json
import math
import warnings
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
from scipy import special

from sindex.exceptions import DegenerateSeriesError, QuadratureError

DEFAULT_ORDER = 64
GAUSS_HERMITE_NODES = 128
NONZERO_TOL = 1e-8
TAIL_MASS_TOL = 1e-6
HALF_WIDTH = 12.0


def _frozen(values):
    values = np.array(values, dtype=np.float64)
    values.setflags(write=False)
    return values


def gaussian_pdf(z):
    return np.exp(-0.5 * np.square(z)) / math.sqrt(2.0 * math.pi)


def hermite_table(J, z):
    """Evaluate h_0..h_J at every point of `z`.

    Args:
        J: highest order, J >= 0.
        z: array of evaluation points.
    Returns:
        array of shape (J + 1,) + z.shape with row j holding h_j(z).
    """
    if J < 0:
        raise ValueError(f"Hermite order must be non-negative, got {J}")
    z = np.asarray(z, dtype=np.float64)
    table = np.empty((J + 1,) + z.shape, dtype=np.float64)
    table[0] = 1.0
    if J >= 1:
        table[1] = z
    # orthonormal recurrence: sqrt(k+1) h_{k+1} = z h_k - sqrt(k) h_{k-1}
    for k in range(1, J):
        table[k + 1] = (z * table[k] - math.sqrt(k) * table[k - 1]) \
            / math.sqrt(k + 1)
    return table


def eval_hermite(j, z):
    if j < 0:
        raise ValueError(f"Hermite index must be non-negative, got {j}")
    values = hermite_table(j, z)[j]
    if np.ndim(values) == 0:
        return float(values)
    return values


@dataclass(frozen=True)
class QuadratureRule:
    """Nodes and weights integrating against the standard Gaussian measure.

    Weights already include the Gaussian density, so
    E_gamma[f] ~= sum_k weights[k] * f(nodes[k]).
    """
    nodes: np.ndarray
    weights: np.ndarray
    kind: str = "gauss_hermite"

    def __post_init__(self):
        nodes = _frozen(self.nodes)
        weights = _frozen(self.weights)
        if nodes.ndim != 1 or nodes.shape != weights.shape:
            raise ValueError("nodes and weights must be 1-d arrays of equal "
                             "length")
        if nodes.size == 0:
            raise ValueError("a quadrature rule needs at least one node")
        if np.any(weights <= 0):
            raise ValueError("quadrature weights must be positive")
        object.__setattr__(self, "nodes", nodes)
        object.__setattr__(self, "weights", weights)

    @property
    def node_count(self):
        return int(self.nodes.size)

    @property
    def lebesgue_weights(self):
        """Weights for plain integrals over the real line."""
        return self.weights / gaussian_pdf(self.nodes)

    @property
    def span(self):
        return float(self.nodes.min()), float(self.nodes.max())

    def expect(self, values):
        """E_gamma of sampled values; the last axis runs over nodes."""
        return np.asarray(values) @ self.weights

    def digest(self):
        import hashlib
        h = hashlib.sha256()
        h.update(self.kind.encode())
        h.update(self.nodes.tobytes())
        h.update(self.weights.tobytes())
        return h.hexdigest()[:16]

    @classmethod
    def gauss_hermite(cls, node_count=GAUSS_HERMITE_NODES):
        # physicists' rule for e^{-x^2}, mapped onto N(0, 1)
        x, w = special.roots_hermite(node_count)
        return cls(math.sqrt(2.0) * x, w / math.sqrt(math.pi),
                   kind="gauss_hermite")

    @classmethod
    def piecewise(cls, breakpoints=(), nodes_per_piece=64,
                  half_width=HALF_WIDTH, spacing=None):
        """Composite Gauss-Legendre rule split at `breakpoints`.

        Integrands with kinks (ReLU features, piecewise-linear links) are
        smooth on every piece, so each piece is resolved to machine
        precision. `spacing` adds a uniform grid of extra breakpoints. Mass
        beyond +-half_width is dropped.
        """
        inner = np.asarray(breakpoints, dtype=np.float64).ravel()
        if spacing is not None:
            inner = np.concatenate(
                [inner, np.arange(-half_width, half_width, spacing)]
            )
        inner = inner[np.abs(inner) < half_width]
        edges = np.unique(np.concatenate([[-half_width, half_width], inner]))
        x, w = np.polynomial.legendre.leggauss(nodes_per_piece)
        lo, hi = edges[:-1], edges[1:]
        keep = hi > lo
        lo, hi = lo[keep], hi[keep]
        mid = 0.5 * (hi + lo)[:, None]
        rad = 0.5 * (hi - lo)[:, None]
        nodes = (mid + rad * x[None, :]).ravel()
        weights = (rad * w[None, :]).ravel() * gaussian_pdf(nodes)
        positive = weights > 0
        return cls(nodes[positive], weights[positive], kind="piecewise")


@dataclass(frozen=True)
class HermiteSeries:
    """Truncated expansion f = sum_j coeffs[j] h_j in L2(gamma)."""
    coeffs: np.ndarray

    def __post_init__(self):
        coeffs = _frozen(np.atleast_1d(self.coeffs))
        if coeffs.ndim != 1 or coeffs.size == 0:
            raise ValueError("coefficients must be a non-empty vector")
        if not np.all(np.isfinite(coeffs)):
            raise ValueError("Hermite coefficients must be finite")
        object.__setattr__(self, "coeffs", coeffs)

    @property
    def truncation_order(self):
        return self.coeffs.size - 1

    def __len__(self):
        return self.coeffs.size

    @classmethod
    def zeros(cls, J):
        return cls(np.zeros(J + 1))

    @classmethod
    def basis(cls, j, J=None):
        J = j if J is None else J
        coeffs = np.zeros(J + 1)
        coeffs[j] = 1.0
        return cls(coeffs)

    def norm_sq(self):
        return float(np.dot(self.coeffs, self.coeffs))

    def norm(self):
        return math.sqrt(self.norm_sq())

    def inner(self, other):
        k = min(len(self), len(other))
        return float(np.dot(self.coeffs[:k], other.coeffs[:k]))

    def scaled(self, factor):
        return HermiteSeries(self.coeffs * factor)

    def padded(self, J):
        """Return the series re-truncated (or zero-padded) at order J."""
        coeffs = np.zeros(J + 1)
        k = min(J + 1, len(self))
        coeffs[:k] = self.coeffs[:k]
        return HermiteSeries(coeffs)

    def evaluate(self, z):
        return np.tensordot(self.coeffs,
                            hermite_table(self.truncation_order, z), axes=1)

    def derivative(self):
        """Coefficients of f' via alpha_j -> sqrt(j+1) alpha_{j+1}."""
        if self.truncation_order == 0:
            return HermiteSeries(np.zeros(1))
        j = np.arange(1, len(self))
        return HermiteSeries(np.sqrt(j) * self.coeffs[1:])

    def second_derivative(self):
        return self.derivative().derivative()

    def tail_mass_estimate(self):
        """Estimate sum_{j > J} alpha_j^2 from the decay of the last
        quarter of the nonzero coefficients."""
        J = self.truncation_order
        j = np.arange(max(2, J - J // 4), J + 1)
        a = np.abs(self.coeffs[j])
        nonzero = a > NONZERO_TOL * self.norm()
        if not np.any(nonzero) or J < 8:
            return 0.0
        if np.count_nonzero(nonzero) < 2:
            return float(a[nonzero].max() ** 2)
        slope, intercept = np.polyfit(np.log(j[nonzero]), np.log(a[nonzero]),
                                      deg=1)
        if slope >= -0.5:
            return math.inf
        # sum_{j>J} C^2 j^{2p} ~ C^2 J^{2p+1} / (-2p - 1)
        return float(math.exp(2 * intercept) * J ** (2 * slope + 1)
                     / (-2 * slope - 1))

    def to_dict(self):
        return {"coeffs": self.coeffs.tolist(),
                "truncation_order": self.truncation_order}

    def to_json(self):
        return json.dumps(self.to_dict())

    @classmethod
    def from_dict(cls, payload):
        series = cls(np.asarray(payload["coeffs"], dtype=np.float64))
        order = payload.get("truncation_order", series.truncation_order)
        if order != series.truncation_order:
            raise ValueError(f"truncation_order {order} does not match "
                             f"{len(series)} coefficients")
        return series

    @classmethod
    def from_json(cls, text):
        return cls.from_dict(json.loads(text))


def check_truncation(series, tol=TAIL_MASS_TOL):
    tail = series.tail_mass_estimate()
    if tail >= tol:
        warnings.warn(
            f"estimated Hermite tail mass {tail:.3g} beyond order "
            f"{series.truncation_order} exceeds {tol:g}",
            RuntimeWarning,
            stacklevel=2
        )
    return tail


def _sample(f, nodes):
    values = np.asarray(f(nodes), dtype=np.float64)
    if values.shape != nodes.shape:
        values = np.vectorize(f, otypes=[np.float64])(nodes)
    return values


def project_to_series(f, J, quad):
    """alpha_j = <f, h_j>_gamma for j = 0..J by quadrature."""
    if quad.node_count < J + 1:
        raise QuadratureError(
            f"{quad.node_count} quadrature nodes cannot resolve Hermite "
            f"order {J} (need at least {J + 1})"
        )
    values = _sample(f, quad.nodes)
    coeffs = hermite_table(J, quad.nodes) @ (quad.weights * values)
    return HermiteSeries(coeffs)


def relu(z):
    return np.maximum(z, 0.0)


def relu_coeffs_closed_form(J):
    """Exact Hermite coefficients of max(0, z).

    For even j >= 2, (H_j(0) + j H_{j-2}(0)) / sqrt(2 pi j!) simplifies to
    (-1)^{(j-2)/2} sqrt(j (j-2)!) / (sqrt(j-1) (j/2)! 2^{j/2} sqrt(2 pi)),
    evaluated in log space so large orders do not overflow. Odd j >= 3
    vanish.
    """
    if J < 0:
        raise ValueError(f"Hermite order must be non-negative, got {J}")
    coeffs = np.zeros(J + 1)
    coeffs[0] = 1.0 / math.sqrt(2.0 * math.pi)
    if J >= 1:
        coeffs[1] = 0.5
    for j in range(2, J + 1, 2):
        log_abs = (0.5 * math.log(j) + 0.5 * special.gammaln(j - 1)
                   - 0.5 * math.log(j - 1) - special.gammaln(j // 2 + 1)
                   - 0.5 * j * math.log(2.0)
                   - 0.5 * math.log(2.0 * math.pi))
        sign = -1.0 if (j // 2) % 2 == 0 else 1.0
        coeffs[j] = sign * math.exp(log_abs)
    return HermiteSeries(coeffs)


def relu_decay_bound(j):
    """Upper bound on |alpha_j(ReLU)| for j >= 2; of order j^{-5/4}."""
    j = np.asarray(j, dtype=np.float64)
    return (2.0 / math.pi) ** 0.25 / (math.sqrt(2.0 * math.pi)
                                      * (j - 1.0) * j ** 0.25)


def ou_transform(series, rho):
    """Ornstein-Uhlenbeck smoothing U_rho: alpha_j -> alpha_j rho^j."""
    if not -1.0 <= rho <= 1.0:
        raise ValueError(f"rho must lie in [-1, 1], got {rho}")
    j = np.arange(len(series))
    return HermiteSeries(series.coeffs * np.power(float(rho), j))


def information_exponent(series, tol=NONZERO_TOL):
    """Smallest j >= 1 with |alpha_j| > tol.

    `tol` is absolute. Rescaling leaves the answer unchanged as long as the
    leading coefficient stays above it.
    """
    if tol <= 0:
        raise ValueError(f"tol must be positive, got {tol}")
    above = np.flatnonzero(np.abs(series.coeffs[1:]) > tol)
    if above.size == 0:
        raise DegenerateSeriesError(
            f"no nonzero coefficient beyond order 0 (all |alpha_j| <= {tol:g})"
        )
    return int(above[0]) + 1


def strip_low_order(series, s):
    """Remove h_0..h_{s-1} and rescale to unit L2(gamma) norm."""
    if s < 1:
        raise ValueError(f"s must be at least 1, got {s}")
    coeffs = np.array(series.coeffs)
    coeffs[:min(s, coeffs.size)] = 0.0
    norm = float(np.linalg.norm(coeffs))
    if norm <= NONZERO_TOL * series.norm():
        raise DegenerateSeriesError(
            f"series has no mass at orders >= {s}"
        )
    return HermiteSeries(coeffs / norm)


class DerivativeNorms(NamedTuple):
    value: float
    first: float
    second: float


def derivative_norms(series):
    """(||f||, ||f'||, ||f''||) in L2(gamma) from coefficient sums."""
    j = np.arange(len(series))
    a2 = np.square(series.coeffs)
    return DerivativeNorms(
        math.sqrt(a2.sum()),
        math.sqrt(float(np.dot(j, a2))),
        math.sqrt(float(np.dot(j * (j - 1), a2)))
    )


def mixed_derivative_sum(series):
    """sum_j j^2 (j-1)^2 alpha_j^2 = ||f''''||^2 + 4||f'''||^2 + 2||f''||^2."""
    j = np.arange(len(series))
    return float(np.dot(np.square(j * (j - 1)), np.square(series.coeffs)))
