"""Privacy sweep: step-one and two-step predictors across epsilon and trials.

Each (epsilon, trial) cell derives its own seeds from the config seed, so
cells can run in any order or in parallel and still give identical output.
The true group column is kept only for evaluation (the oracle arm) and is
never passed to training.
"""
from __future__ import annotations

import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from privfair.audit import joint_stats_from_predictions, realize, recover_cells, report_from_stats
from privfair.core import PrivatizedDataset
from privfair.errors import PrivFairError
from privfair.harness.config import ExperimentConfig
from privfair.harness.ingest import EncodedTable, encode_rows, read_csv, standardize
from privfair.harness.synthetic import HEADER, surrogate_rows
from privfair.mechanism import make_mechanism, randomize_groups
from privfair.posthoc import TwoStepConfig, base_rates_from_stats, derived_gamma, two_step_train
from privfair.reduction import LearnerConfig, alpha_n_step1, exp_gradient_train

log = logging.getLogger(__name__)

METRICS = (
    "err_step1",
    "acc_step1",
    "disc_step1",
    "disc_step1_corrected",
    "naive_disc",
    "err_step2",
    "acc_step2",
    "disc_step2",
    "disc_step2_corrected",
    "alpha_n",
    "alpha_tilde",
    "lp_inflation",
    "lemma1_bound",
    "oracle_within_bound",
)


@dataclass
class SweepResult:
    config: ExperimentConfig
    cells: list = field(default_factory=list)  # (epsilon, trial, metrics dict or failure code)

    def values(self, epsilon: float, metric: str) -> np.ndarray:
        return np.array([m[metric] for e, _, m in self.cells if e == epsilon and isinstance(m, dict)])

    @property
    def failures(self) -> list:
        return [(e, t, m) for e, t, m in self.cells if not isinstance(m, dict)]


def load_table(config: ExperimentConfig) -> EncodedTable:
    """Encoded but unscaled table; scaling happens per trial on the training rows."""
    if config.dataset is None:
        header, rows = HEADER, surrogate_rows(config.synthetic_rows, config.seed)
    else:
        header, rows = read_csv(config.dataset)
    return encode_rows(header, rows, config.group_column, config.label_column, config.positive_label,
                       config.drop_columns)


def cell_seeds(seed: int, trial: int, epsilon: float) -> dict:
    state = np.random.SeedSequence([seed, trial, int(round(epsilon * 1e6))]).generate_state(4)
    return dict(zip(("train_z", "test_z", "split", "realize"), (int(s) for s in state)))


def train_test_split(n: int, train_fraction: float, seed: int, trial: int):
    perm = np.random.default_rng(np.random.SeedSequence([seed, trial, 0x5350])).permutation(n)
    cut = int(round(train_fraction * n))
    return np.sort(perm[:cut]), np.sort(perm[cut:])


def eo_gap(prob, labels, groups, group_count) -> float:
    """Max equalized-odds gap of acceptance probabilities against the given groups."""
    rates = np.empty((2, group_count))
    for y in range(2):
        for g in range(group_count):
            sel = (labels == y) & (groups == g)
            rates[y, g] = prob[sel].mean() if sel.any() else np.nan
    return float(np.nanmax(np.abs(rates - rates[:, :1])))


def lp_inflation(status: str) -> float:
    """Slack multiplier encoded in an LP status such as ``optimal_inflated_x4``."""
    return float(status.rsplit("_x", 1)[1]) if "_inflated_x" in status else 1.0


def expected_error(prob, labels) -> float:
    return float(np.mean(np.where(labels == 1, 1.0 - prob, prob)))


def run_cell(table: EncodedTable, config: ExperimentConfig, epsilon: float, trial: int) -> dict:
    k = table.group_count
    seeds = cell_seeds(config.seed, trial, epsilon)
    train_idx, test_idx = train_test_split(len(table), config.train_fraction, config.seed, trial)
    scaled = standardize(table, train_idx)
    X, y, a = scaled.features, scaled.labels, scaled.groups
    mech = make_mechanism(epsilon, k)
    z_train = randomize_groups(a[train_idx], mech, seeds["train_z"])
    z_test = randomize_groups(a[test_idx], mech, seeds["test_z"])
    train = PrivatizedDataset(X[train_idx], y[train_idx], z_train, k)
    Xt, yt, at = X[test_idx], y[test_idx], a[test_idx]
    learner = LearnerConfig(config.learner_steps, config.learner_step_size, config.learner_l2)

    def theory_alpha_n(data):
        Q = np.zeros((2, k))
        np.add.at(Q, (data.labels, data.private_groups), 1.0)
        return alpha_n_step1(len(data), config.delta, float(recover_cells(Q / len(data), mech).min()), k)

    alpha_n = theory_alpha_n(train) if config.alpha_n == "theory" else float(config.alpha_n)
    step1 = exp_gradient_train(train, config.B, config.effective_eta, config.T, alpha_n, learner, config.mixture)
    two = two_step_train(
        train,
        mech,
        TwoStepConfig(
            B=config.B,
            eta=config.effective_eta,
            T=config.T,
            alpha_n=None if config.alpha_n == "theory" else float(config.alpha_n),
            alpha_tilde=None if config.alpha_tilde == "theory" else float(config.alpha_tilde),
            delta=config.delta,
            learner=learner,
            realize_seed=seeds["realize"],
            split_seed=seeds["split"],
            s1_fraction=config.split_fraction_s1,
            mixture=config.mixture,
        ),
    )

    p1 = step1.classifier.accept_probability(Xt)
    yhat1 = realize(p1, seeds["realize"])
    audit1 = report_from_stats(joint_stats_from_predictions(yhat1, yt, z_test, k), mech, config.delta)
    p2 = two.predictor.accept_probability(Xt, z_test)
    base2 = realize(two.predictor.base.accept_probability(Xt), seeds["realize"])
    rates2 = base_rates_from_stats(joint_stats_from_predictions(base2, yt, z_test, k), mech)
    gamma2 = derived_gamma(two.predictor.table, rates2.rates, mech)

    disc1 = eo_gap(p1, yt, at, k)
    err1, err2 = expected_error(p1, yt), expected_error(p2, yt)
    return {
        "err_step1": err1,
        "acc_step1": 1.0 - err1,
        "disc_step1": disc1,
        "disc_step1_corrected": audit1.max_violation,
        "naive_disc": audit1.naive_max_violation,
        "err_step2": err2,
        "acc_step2": 1.0 - err2,
        "disc_step2": eo_gap(p2, yt, at, k),
        "disc_step2_corrected": float(np.abs(gamma2 - gamma2[:, :1]).max()),
        "alpha_n": alpha_n,
        "alpha_tilde": two.report["alpha_tilde_used"],
        "lp_inflation": lp_inflation(two.report["lp_status"]),
        "lemma1_bound": audit1.lemma1_bound,
        "oracle_within_bound": float(abs(eo_gap(yhat1.astype(float), yt, at, k) - audit1.max_violation)
                                     <= audit1.lemma1_bound),
    }


def _run_cell_safe(args):
    table, config, epsilon, trial = args
    try:
        return run_cell(table, config, epsilon, trial)
    except PrivFairError as exc:
        log.warning("cell epsilon=%s trial=%d failed: %s", epsilon, trial, exc)
        return exc.exit_code


def run_sweep(config: ExperimentConfig, table: EncodedTable | None = None) -> SweepResult:
    """Run every (epsilon, trial) cell; failures are recorded and the sweep continues."""
    if table is None:
        table = load_table(config)
    jobs = [(table, config, e, t) for e in config.epsilon_grid for t in range(config.trials)]
    if config.workers > 1:
        with ProcessPoolExecutor(max_workers=config.workers) as pool:
            outputs = list(pool.map(_run_cell_safe, jobs))
    else:
        outputs = [_run_cell_safe(job) for job in jobs]
    return SweepResult(config, [(job[2], job[3], out) for job, out in zip(jobs, outputs)])
