"""End-to-end checks behind `sindex check`.

Suites:
    invariants   closed forms, orthonormality, gradients, trace of Sigma_hat
    oracles      Monte-Carlo agreement of the population oracle, landscape
                 shape, approximation rate, concentration scaling
    recovery     direction recovery and excess-risk decay from training
    determinism  byte-identical sweep output
"""
import filecmp
import logging
import math
import os
import tempfile
import warnings
from dataclasses import dataclass

import numpy as np

from sindex.data_utils import (
    Dataset, LinkSpec, make_teacher, sample_dataset
)
from sindex.features import (
    Activation, build_operator, phi_matrix, phi_prime_matrix,
    regularized_projection, sample_bank
)
from sindex.harness import ExperimentConfig, Grid, run_experiment
from sindex.hermite import (
    HermiteSeries, QuadratureRule, eval_hermite, hermite_table,
    project_to_series, relu, relu_coeffs_closed_form, relu_decay_bound
)
from sindex.landscape import (
    build_oracle, critical_residual, deviation_probe, is_monotone,
    population_grads, population_loss
)
from sindex.model import (
    ModelState, empirical_loss, grad_c, grad_theta_spherical, kink_margin,
    project_tangent
)
from sindex.train import TrainConfig

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class CheckResult:
    name: str
    passed: bool
    detail: str


def _quiet_teacher(link, d, seed, **kwargs):
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        return make_teacher(link, d, seed, **kwargs)


def _centered_relu(J=64):
    coeffs = np.array(relu_coeffs_closed_form(J).coeffs)
    coeffs[0] = 0.0
    series = HermiteSeries(coeffs)
    return series.scaled(1.0 / series.norm())


def check_hermite_exactness():
    closed = relu_coeffs_closed_form(20).coeffs
    projected = project_to_series(
        relu, 20, QuadratureRule.piecewise((0.0,))
    ).coeffs
    gap = float(np.max(np.abs(closed - projected)))
    bound_ok = all(abs(closed[j]) <= relu_decay_bound(j)
                   for j in range(2, 21))
    return CheckResult(
        "hermite_exactness",
        gap <= 1e-8 and bound_ok,
        f"max |closed - quadrature| = {gap:.2e}, decay bound "
        f"{'holds' if bound_ok else 'violated'}"
    )


def check_orthonormality():
    quad = QuadratureRule.gauss_hermite(64)
    table = hermite_table(10, quad.nodes)
    gram = (table * quad.weights) @ table.T
    ortho = float(np.max(np.abs(gram - np.eye(11))))
    z = np.linspace(-3.0, 3.0, 61)
    h = 1e-5
    derivative = max(
        float(np.max(np.abs(
            (eval_hermite(j, z + h) - eval_hermite(j, z - h)) / (2 * h)
            - math.sqrt(j) * eval_hermite(j - 1, z)
        )))
        for j in range(1, 11)
    )
    return CheckResult(
        "orthonormality",
        ortho <= 1e-8 and derivative <= 1e-7,
        f"max Gram error {ortho:.2e}, max derivative error {derivative:.2e}"
    )


def _gradient_instance(seed, activation, n=20, d=4, N=6):
    rng = np.random.default_rng(seed)
    bank = sample_bank(N, 2.0, seed, activation)
    theta = rng.normal(size=d)
    state = ModelState(rng.normal(size=N), theta / np.linalg.norm(theta))
    data = Dataset(rng.normal(size=(n, d)), rng.normal(size=n), seed,
                   "synthetic")
    return state, bank, data


def _relative_gap(analytic, numeric):
    scale = max(float(np.linalg.norm(numeric)), 1e-8)
    return float(np.linalg.norm(analytic - numeric)) / scale


def _finite_difference_gap(state, bank, data, lam=0.05):
    h_c, h_theta = 1e-5, 1e-6
    fd_c = np.array([
        (empirical_loss(ModelState(state.c + h_c * e, state.theta), bank,
                        data, lam)
         - empirical_loss(ModelState(state.c - h_c * e, state.theta), bank,
                          data, lam)) / (2 * h_c)
        for e in np.eye(state.N)
    ])
    basis = np.linalg.qr(np.column_stack([state.theta,
                                          np.eye(state.d)]))[0][:, 1:]
    fd_theta = np.zeros(state.d)
    for v in basis.T:
        up, down = state.theta + h_theta * v, state.theta - h_theta * v
        fd_theta += v * (
            empirical_loss(ModelState(state.c, up / np.linalg.norm(up)),
                           bank, data, lam)
            - empirical_loss(ModelState(state.c, down / np.linalg.norm(down)),
                             bank, data, lam)
        ) / (2 * h_theta)
    return max(
        _relative_gap(grad_c(state, bank, data, lam), fd_c),
        _relative_gap(grad_theta_spherical(state, bank, data, lam), fd_theta)
    )


def check_gradients():
    gaps = [_finite_difference_gap(*_gradient_instance(
                seed, Activation.smoothed(0.9)))
            for seed in range(20)]
    seed = 1000
    while len(gaps) < 40:
        instance = _gradient_instance(seed, Activation())
        seed += 1
        if kink_margin(*instance) >= 1e-4:
            gaps.append(_finite_difference_gap(*instance))
    worst = max(gaps)
    return CheckResult("gradients", worst <= 1e-5,
                       f"worst relative gap {worst:.2e} over 40 instances")


def check_sigma_hat_trace(banks=200, N=512, tau=2.0):
    traces = np.array([
        build_operator(sample_bank(N, tau, seed), J=8,
                       backend="exact").trace_q()
        for seed in range(banks)
    ])
    expected = (1 + tau ** 2) / 2
    mean_gap = abs(traces.mean() / expected - 1.0)
    below = float(np.mean(traces <= tau ** 2 + 0.5))
    return CheckResult(
        "sigma_hat_trace",
        mean_gap <= 0.02 and below >= 0.99,
        f"mean trace {traces.mean():.4f} (expected {expected}), "
        f"{below:.1%} of banks below {tau ** 2 + 0.5}"
    )


def _planted(theta_star, m, rng):
    other = project_tangent(theta_star, rng.normal(size=theta_star.size))
    other /= np.linalg.norm(other)
    return m * theta_star + math.sqrt(1.0 - m * m) * other


def _accumulate(total, values):
    s, sq, count = total
    return (s + values.sum(axis=0), sq + np.square(values).sum(axis=0),
            count + values.shape[0])


def _z_scores(total, expected):
    s, sq, count = total
    mean = s / count
    se = np.sqrt(np.maximum(sq / count - mean ** 2, 0.0) / (count - 1))
    return np.abs(mean - expected) / np.maximum(se, 1e-12)


def check_population_oracle(probes=10, n=1_000_000, d=10, N=20,
                            chunk=100_000):
    teacher = make_teacher(LinkSpec.custom_series((0.0, 0.6, 0.3, 0.74)), d,
                           0, sigma=0.1)
    bank = sample_bank(N, 2.0, 0)
    oracle = build_oracle(teacher, bank, 0.01)
    rng = np.random.default_rng(0)
    worst_loss = worst_grad = 0.0
    for probe in range(probes):
        m = float(rng.uniform(-1.0, 1.0))
        c = rng.normal(size=N)
        theta = _planted(teacher.theta_star, m, rng)
        g_c, coefficient = population_grads(oracle, c, m)
        g_theta = coefficient * (teacher.theta_star - m * theta)
        totals = [(0.0, 0.0, 0), (0.0, 0.0, 0), (0.0, 0.0, 0)]
        for start in range(0, n, chunk):
            data = sample_dataset(teacher, chunk, d,
                                  1000 * probe + start // chunk)
            u = data.xs @ theta
            features = phi_matrix(bank, u)
            r = features @ c - data.ys
            slopes = phi_prime_matrix(bank, u) @ c
            theta_terms = 2 * (r * slopes)[:, None] * data.xs
            theta_terms -= np.outer(theta_terms @ theta, theta)
            totals[0] = _accumulate(totals[0],
                                    (r ** 2 + oracle.lam * c @ c)[:, None])
            totals[1] = _accumulate(totals[1], 2 * r[:, None] * features
                                    + 2 * oracle.lam * c)
            totals[2] = _accumulate(totals[2], theta_terms)
        worst_loss = max(worst_loss, float(
            _z_scores(totals[0], population_loss(oracle, c, m)).max()
        ))
        worst_grad = max(worst_grad,
                         float(_z_scores(totals[1], g_c).max()),
                         float(_z_scores(totals[2], g_theta).max()))
    # max over all gradient components
    return CheckResult(
        "population_oracle",
        worst_loss <= 3.0 and worst_grad <= 4.5,
        f"largest z-score: loss {worst_loss:.2f}, gradients "
        f"{worst_grad:.2f} over {probes} probes"
    )


def check_landscape_shape(N=512, lam=1e-3):
    teacher = _quiet_teacher(LinkSpec.relu(), 5, 0)
    oracle = build_oracle(teacher, sample_bank(N, 2.0, 0), lam)
    monotone = is_monotone(oracle, 101)
    inner = np.linspace(0.05, 0.95, 91)
    residuals = np.array([critical_residual(oracle, m) for m in inner])
    no_roots = bool(np.all(residuals < 0) or np.all(residuals > 0))
    return CheckResult(
        "landscape_shape",
        monotone and no_roots,
        f"monotone in |m|: {monotone}, residual sign-definite on "
        f"(0.05, 0.95): {no_roots}"
    )


def check_approximation_rate(N=2048, lams=(0.1, 0.03, 0.01, 0.003)):
    op = build_operator(sample_bank(N, 2.0, 0), J=64, backend="exact")
    target = _centered_relu()
    residuals = [regularized_projection(op.with_lam(lam), target)[1]
                 for lam in lams]
    slope = float(np.polyfit(np.log(lams), np.log(residuals), 1)[0])
    return CheckResult("approximation_rate", slope >= 0.6,
                       f"log-log slope {slope:.3f}")


def check_concentration(d=10, N=100, r=5.0, sample_count=20):
    teacher = _quiet_teacher(LinkSpec(), d, 0)
    bank = sample_bank(N, 2.0, 0)
    summary = deviation_probe(bank, teacher, [2 ** k for k in range(10, 15)],
                              sample_count, r, 0)
    slope = summary.slope_theta
    return CheckResult("concentration", abs(slope + 0.5) <= 0.2,
                       f"theta-gradient deviation slope {slope:.3f}")


def _sweep(grid, seeds, out_dir, report_mode="mean_std", train=None):
    config = ExperimentConfig(grid=grid, seeds=seeds, sigma=0.001,
                              report_mode=report_mode,
                              train=train or TrainConfig())
    table = run_experiment(config, out_dir=out_dir)
    return table[table["kind"] == "raw"]


def check_recovery(n=8192, seeds=10):
    with tempfile.TemporaryDirectory() as tmp:
        raw = _sweep(Grid(d=(10,), s=(1, 3), n=(n,), N=(100,)), seeds, tmp)
    abs_m = {s: raw.loc[raw["s"] == s, "abs_m"].fillna(0.0).to_numpy()
             for s in (1, 3)}
    rate_1 = float(np.mean(abs_m[1] >= 0.95))
    rate_3 = float(np.mean(abs_m[3] >= 0.95))
    best_3 = float(abs_m[3].max())
    return CheckResult(
        "recovery",
        rate_1 >= 0.7 and best_3 >= 0.9 and rate_3 < rate_1,
        f"s=1 success {rate_1:.0%}, s=3 success {rate_3:.0%}, "
        f"s=3 best |m| {best_3:.3f}"
    )


def check_risk_decay(seeds=10):
    ns = (2 ** 10, 2 ** 12, 2 ** 14)
    with tempfile.TemporaryDirectory() as tmp:
        raw = _sweep(Grid(d=(10,), s=(1,), n=ns, N=(100,)), seeds, tmp)
    means = raw.groupby("n")[["risk_pre", "risk_post"]].mean()
    post = means["risk_post"].to_numpy()
    decreasing = bool(np.all(np.diff(post) < 0))
    improved = bool(np.all(means["risk_post"] <= means["risk_pre"]))
    return CheckResult(
        "risk_decay",
        decreasing and improved,
        "post fine-tune risk by n: "
        + ", ".join(f"{n}: {risk:.3g}" for n, risk in zip(ns, post))
    )


def determinism_config():
    return ExperimentConfig(
        grid=Grid(d=(10,), s=(1,), n=(512,), N=(20,)),
        seeds=2,
        n_test=2000,
        train=TrainConfig(T0_steps=50, T1_steps=150, record_every=50)
    )


def check_determinism(config=None):
    config = config or determinism_config()
    with tempfile.TemporaryDirectory() as tmp:
        first, second = os.path.join(tmp, "a"), os.path.join(tmp, "b")
        run_experiment(config, out_dir=first)
        run_experiment(config, out_dir=second)
        same = filecmp.cmp(os.path.join(first, "results.csv"),
                           os.path.join(second, "results.csv"),
                           shallow=False)
    return CheckResult("determinism", same,
                       "results.csv identical" if same
                       else "results.csv differs between runs")


SUITES = {
    "invariants": [check_hermite_exactness, check_orthonormality,
                   check_gradients, check_sigma_hat_trace],
    "oracles": [check_population_oracle, check_landscape_shape,
                check_approximation_rate, check_concentration],
    "recovery": [check_recovery, check_risk_decay],
    "determinism": [check_determinism]
}


def run_suite(suite, progress=None):
    """Run every check of `suite` ("all" runs them all); a check that
    raises counts as failed."""
    if suite == "all":
        checks = [check for name in SUITES for check in SUITES[name]]
    elif suite in SUITES:
        checks = SUITES[suite]
    else:
        raise ValueError(f"Unknown suite {suite!r}")
    results = []
    for check in checks:
        try:
            result = check()
        except Exception as e:
            logger.exception("check %s raised", check.__name__)
            result = CheckResult(check.__name__.removeprefix("check_"),
                                 False, f"{type(e).__name__}: {e}")
        results.append(result)
        if progress is not None:
            status = "PASS" if result.passed else "FAIL"
            progress(f"{status} {result.name}: {result.detail}")
    return results
