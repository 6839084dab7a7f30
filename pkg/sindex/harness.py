"""Config-driven sweeps over (d, s, n, N, lambda, lambda', step) cells.

Each cell is trained for every seed, fine-tuned on a fresh sample and scored
on a test sample. `results.csv` holds one raw row per (cell, seed) plus one
aggregate row per cell and is a pure function of the config; wall times go
to `timings.csv`.
"""
import dataclasses
import itertools
import json
import logging
import os
import time
try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib
from concurrent.futures import ThreadPoolExecutor, as_completed
from dataclasses import dataclass, field

import numpy as np
import pandas as pd
import tensorflow as tf

from sindex.data_utils import (
    DEFAULT_NOISE, LinkSpec, make_teacher, sample_dataset
)
from sindex.exceptions import NumericalError
from sindex.features import Activation, sample_bank
from sindex.hermite import DEFAULT_ORDER
from sindex.train import (
    TrainConfig, excess_risk, fine_tune_ridge, init_state, run_two_phase
)

logger = logging.getLogger(__name__)

REPORT_MODES = ("mean_std", "best_of")
CELL_KEYS = ["d", "s", "n", "N", "lam", "lam_prime", "step_theta"]
METRICS = ["abs_m", "risk_pre", "risk_post", "train_loss"]
RESULT_COLUMNS = [
    "kind",
    *CELL_KEYS,
    "seed",
    "status",
    "n_ok",
    "abs_m",
    "abs_m_std",
    "risk_pre",
    "risk_pre_std",
    "risk_pre_se",
    "risk_post",
    "risk_post_std",
    "risk_post_se",
    "train_loss",
    "train_loss_std",
    "rejected_steps",
    "error"
]
TIMING_COLUMNS = [*CELL_KEYS, "seed", "wall_time"]
SELECTION_COLUMNS = ["d", "s", "n", "N", "criterion", "lam", "lam_prime",
                     "step_theta", "train_loss", "risk_post"]


def _dyadic(lo, hi):
    return tuple(2 ** k for k in range(lo, hi + 1))


@dataclass(frozen=True)
class Grid:
    d: tuple = (10, 20, 50)
    s: tuple = (1, 2, 3)
    n: tuple = _dyadic(9, 15)
    N: tuple = (100,)
    lam: tuple = (1e-3,)
    lam_prime: tuple = (1e-3,)
    step_theta: tuple = (1.0,)

    def __post_init__(self):
        for name in CELL_KEYS:
            values = getattr(self, name)
            if np.isscalar(values):
                values = (values,)
            values = tuple(values)
            if not values:
                raise ValueError(f"grid axis {name!r} is empty")
            object.__setattr__(self, name, values)

    def cells(self):
        axes = [getattr(self, name) for name in CELL_KEYS]
        return [dict(zip(CELL_KEYS, values))
                for values in itertools.product(*axes)]


@dataclass(frozen=True)
class ExperimentConfig:
    grid: Grid = field(default_factory=Grid)
    seeds: int = 10
    base_seed: int = 0
    link: LinkSpec = field(default_factory=LinkSpec)
    sigma: float = DEFAULT_NOISE
    tau: float = 2.0
    activation: str = "relu"
    J: int = DEFAULT_ORDER
    n_test: int = 10000
    n_finetune: int = None
    train: TrainConfig = field(default_factory=TrainConfig)
    report_mode: str = "mean_std"
    out_dir: str = "results"

    def __post_init__(self):
        if self.seeds < 1:
            raise ValueError(f"need at least one seed, got {self.seeds}")
        if self.report_mode not in REPORT_MODES:
            raise ValueError(f"Unknown report mode {self.report_mode!r}")
        if self.n_test < 2:
            raise ValueError(f"n_test must be at least 2, got {self.n_test}")
        Activation.parse(self.activation)

    @property
    def seed_values(self):
        return list(range(self.base_seed, self.base_seed + self.seeds))

    def cells(self):
        return self.grid.cells()

    def replace(self, **changes):
        return dataclasses.replace(self, **changes)

    def link_for(self, s):
        """The base link with Hermite orders below s removed."""
        if s == 1:
            return self.link
        return LinkSpec.stripped(self.link.root, s)

    def to_dict(self):
        return {
            "grid": {name: list(getattr(self.grid, name))
                     for name in CELL_KEYS},
            "seeds": self.seeds,
            "base_seed": self.base_seed,
            "teacher": {**self.link.to_dict(), "sigma": self.sigma},
            "tau": self.tau,
            "activation": self.activation,
            "J": self.J,
            "n_test": self.n_test,
            "n_finetune": self.n_finetune,
            "train": self.train.to_dict(),
            "report_mode": self.report_mode,
            "out_dir": self.out_dir
        }

    @classmethod
    def from_dict(cls, payload):
        payload = dict(payload)
        known = {"grid", "seeds", "base_seed", "teacher", "tau",
                 "activation", "J", "n_test", "n_finetune", "train",
                 "report_mode", "out_dir"}
        unknown = set(payload) - known
        if unknown:
            raise ValueError(f"Unknown config keys {sorted(unknown)}")
        grid_payload = payload.pop("grid", {})
        unknown = set(grid_payload) - set(CELL_KEYS)
        if unknown:
            raise ValueError(f"Unknown grid axes {sorted(unknown)}")
        teacher = dict(payload.pop("teacher", {}))
        sigma = teacher.pop("sigma", DEFAULT_NOISE)
        train = TrainConfig.from_dict(payload.pop("train", {}))
        return cls(
            grid=Grid(**grid_payload),
            link=LinkSpec.from_dict(teacher) if teacher else LinkSpec(),
            sigma=float(sigma),
            train=train,
            **payload
        )


def default_config():
    return ExperimentConfig()


def load_config(path):
    """Read an ExperimentConfig from a .toml or .json file."""
    _, ext = os.path.splitext(path)
    if ext == ".toml":
        with open(path, "rb") as f:
            payload = tomllib.load(f)
    elif ext == ".json":
        with open(path) as f:
            payload = json.load(f)
    else:
        raise ValueError(f"config must be .toml or .json, got {path!r}")
    return ExperimentConfig.from_dict(payload)


def run_cell(config, cell, seed):
    """Train, fine-tune and score one (cell, seed); returns the raw row."""
    d, s, n, N = cell["d"], cell["s"], cell["n"], cell["N"]
    teacher = make_teacher(config.link_for(s), d, seed, sigma=config.sigma,
                           J=config.J)
    bank = sample_bank(N, config.tau, seed,
                       Activation.parse(config.activation))
    data = sample_dataset(teacher, n, d, seed)
    train_config = config.train.replace(lam=cell["lam"],
                                        step_theta=cell["step_theta"],
                                        seed=seed)
    state0 = init_state(train_config, bank, d, seed, s)
    trace = run_two_phase(state0, train_config, bank, data, teacher)
    state = trace.final_state
    risk_pre, se_pre = excess_risk(state, bank, teacher, config.n_test, seed)
    fresh = sample_dataset(teacher, config.n_finetune or n, d, seed,
                           stream="finetune")
    c = fine_tune_ridge(state.theta, bank, fresh, cell["lam_prime"])
    tuned = dataclasses.replace(state, c=c)
    risk_post, se_post = excess_risk(tuned, bank, teacher, config.n_test,
                                     seed)
    return {
        "abs_m": abs(state.overlap(teacher.theta_star)),
        "risk_pre": risk_pre,
        "risk_pre_se": se_pre,
        "risk_post": risk_post,
        "risk_post_se": se_post,
        "train_loss": trace.final_loss,
        "rejected_steps": trace.rejected_steps
    }


def _run_one(config, cell, seed):
    start = time.perf_counter()
    row = {"kind": "raw", **cell, "seed": seed}
    try:
        row.update(run_cell(config, cell, seed), status="ok", n_ok=1,
                   error="")
    except (NumericalError, ValueError) as e:
        logger.warning("cell %s seed %d failed: %s", cell, seed, e)
        row.update(status="failed", n_ok=0, error=f"{type(e).__name__}: {e}")
    elapsed = time.perf_counter() - start
    return row, {**cell, "seed": seed, "wall_time": elapsed}


def _thread_count(threads):
    """Worker count; SINDEX_THREADS caps it when set."""
    cap = os.environ.get("SINDEX_THREADS")
    if threads is None:
        threads = 1 if cap is None else int(cap)
    elif cap is not None:
        threads = min(int(threads), int(cap))
    return max(1, int(threads))


def _aggregate(raw, report_mode):
    rows = []
    for key, group in raw.groupby(CELL_KEYS, sort=True):
        row = {"kind": "aggregate", **dict(zip(CELL_KEYS, key))}
        ok = group[group["status"] == "ok"]
        row["n_ok"] = len(ok)
        if ok.empty:
            row.update(status="failed", error="no successful seed")
            rows.append(row)
            continue
        row.update(status="ok", error="")
        if report_mode == "best_of":
            best = ok.loc[ok["risk_post"].idxmin()]
            row["seed"] = best["seed"]
            for name in METRICS + ["risk_pre_se", "risk_post_se",
                                   "rejected_steps"]:
                row[name] = best[name]
        else:
            for name in METRICS:
                row[name] = ok[name].mean()
                row[f"{name}_std"] = ok[name].std(ddof=0)
            row["rejected_steps"] = ok["rejected_steps"].sum()
        rows.append(row)
    return pd.DataFrame(rows)


def select_hyperparameters(table):
    """Best (lambda, lambda', step) per (d, s, n, N) under the in-sample
    criterion (train loss) and the held-out one (post fine-tune risk)."""
    raw = table[(table["kind"] == "raw") & (table["status"] == "ok")]
    if raw.empty:
        return pd.DataFrame(columns=SELECTION_COLUMNS)
    hyper = ["lam", "lam_prime", "step_theta"]
    means = raw.groupby(["d", "s", "n", "N", *hyper], as_index=False)[
        ["train_loss", "risk_post"]
    ].mean()
    rows = []
    for key, group in means.groupby(["d", "s", "n", "N"], sort=True):
        for criterion, column in (("in_sample", "train_loss"),
                                  ("held_out", "risk_post")):
            best = group.loc[group[column].idxmin()]
            rows.append({**dict(zip(["d", "s", "n", "N"], key)),
                         "criterion": criterion,
                         **{name: best[name] for name in hyper},
                         "train_loss": best["train_loss"],
                         "risk_post": best["risk_post"]})
    return pd.DataFrame(rows, columns=SELECTION_COLUMNS)


def run_experiment(config, out_dir=None, threads=None, progress=None):
    """Run every (cell, seed) of `config` on a bounded thread pool.

    Writes results.csv, timings.csv and selection.csv to `out_dir`
    (config.out_dir when omitted) and returns the results table. A failing
    cell becomes a row with status "failed"; the sweep carries on.
    """
    tf.config.experimental.enable_op_determinism()
    out_dir = out_dir or config.out_dir
    os.makedirs(out_dir, exist_ok=True)
    jobs = [(cell, seed) for cell in config.cells()
            for seed in config.seed_values]
    raw_rows, timings = [], []
    with ThreadPoolExecutor(_thread_count(threads)) as executor:
        futures = {executor.submit(_run_one, config, cell, seed): (cell, seed)
                   for cell, seed in jobs}
        for done, future in enumerate(as_completed(futures), start=1):
            row, timing = future.result()
            raw_rows.append(row)
            timings.append(timing)
            if progress is not None:
                progress(f"[{done}/{len(jobs)}] d={row['d']} s={row['s']} "
                         f"n={row['n']} seed={row['seed']}: {row['status']}")
    raw = pd.DataFrame(raw_rows).sort_values(CELL_KEYS + ["seed"])
    aggregate = _aggregate(raw, config.report_mode)
    table = pd.concat([raw, aggregate], ignore_index=True)
    table = table.reindex(columns=RESULT_COLUMNS)
    for name in ("seed", "n_ok", "rejected_steps"):
        table[name] = table[name].astype("Int64")
    table.to_csv(os.path.join(out_dir, "results.csv"), index=False)
    pd.DataFrame(timings, columns=TIMING_COLUMNS).sort_values(
        CELL_KEYS + ["seed"]
    ).to_csv(os.path.join(out_dir, "timings.csv"), index=False)
    select_hyperparameters(table).to_csv(
        os.path.join(out_dir, "selection.csv"), index=False
    )
    logger.info("%d runs written to %s", len(jobs), out_dir)
    return table
