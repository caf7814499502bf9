"""Step two: post-processing that targets the true attribute through the channel.

The derived predictor is a table ``p[yhat, z] = P(Ytilde=1 | Yhat=yhat, Z=z)``.
Because ``Z`` is randomized response of ``A``, the table seen from ``A`` is
the mixed table ``ptilde[yhat, a] = sum_z Pi[z, a] p[yhat, z]``, and both the
error and the equalized-odds rates of the derived predictor are linear in
``ptilde``. The base predictor's rates given ``A`` are estimated with the
corrected estimator, so the program constrains discrimination w.r.t. ``A``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from privfair.audit import (
    JointStats,
    estimate_gamma,
    joint_stats_from_predictions,
    audit_sample_threshold,
    population_joint_stats,
    project_simplex,
    realize,
    recover_cells,
    report_from_stats,
)
from privfair.core import FinitePopulation, PrivatizedDataset
from privfair.errors import ConfigError, Infeasible, PredictorUsesZ, Unbounded
from privfair.lp import LPResult, simplex
from privfair.mechanism import RRMechanism, channel_inverse, record_uniforms
from privfair.reduction import (
    LearnerConfig,
    RandomizedClassifier,
    TrainingResult,
    alpha_n_step1,
    exp_gradient_train,
)

DERIVED_STREAM = 0x5459


@dataclass(frozen=True)
class BaseRates:
    """Estimated behaviour of the base predictor given the true attribute.

    ``rates[y, a]`` estimates ``P(Yhat=1 | Y=y, A=a)`` and
    ``joint[yhat, y, a]`` estimates ``P(Yhat=yhat, Y=y, A=a)``.
    """

    rates: np.ndarray
    joint: np.ndarray
    clamped: bool = False

    @property
    def group_count(self) -> int:
        return self.rates.shape[1]


def base_rates_from_stats(stats: JointStats, mechanism: RRMechanism | None) -> BaseRates:
    """Corrected rates and joint masses from ``(y, z)`` statistics.

    With ``mechanism=None`` no correction is applied and ``Z`` is treated as
    ``A`` (the naive estimates).
    """
    q, Q = stats.q_hat, stats.Q_hat
    joint_z = np.stack([(1.0 - q) * Q, q * Q])
    if mechanism is None:
        return BaseRates(np.clip(q, 0.0, 1.0), joint_z)
    raw_rates = estimate_gamma(stats, mechanism)
    rates = np.clip(raw_rates, 0.0, 1.0)
    inv = channel_inverse(mechanism).inverse
    joint = project_simplex((joint_z @ inv.T).ravel()).reshape(joint_z.shape)
    return BaseRates(rates, joint, clamped=bool((rates != raw_rates).any()))


def estimate_base_rates(
    data: PrivatizedDataset,
    base,
    mechanism: RRMechanism,
    realize_seed: int = 0,
) -> tuple[BaseRates, np.ndarray]:
    """Realize the base predictor once on ``data`` and estimate its A-rates.

    Returns:
        The estimates and the realized predictions, which the caller reuses
        for reporting.
    """
    if getattr(base, "uses_private_group", False):
        raise PredictorUsesZ("the base predictor must not read Z")
    yhat = realize(base.accept_probability(data.features), realize_seed)
    stats = joint_stats_from_predictions(yhat, data.labels, data.private_groups, data.group_count)
    return base_rates_from_stats(stats, mechanism), yhat


def population_base_rates(population: FinitePopulation, base, mechanism: RRMechanism | None, naive_mechanism=None):
    """Base rates from exact channel-marginalized statistics.

    For the naive variant pass ``mechanism=None`` and the channel that
    generated ``Z`` as ``naive_mechanism``.
    """
    stats = population_joint_stats(population, base, mechanism or naive_mechanism)
    return base_rates_from_stats(stats, mechanism)


@dataclass(frozen=True)
class PosthocLP:
    """``min c.p + constant`` over fairness rows ``A p <= b`` and the box ``0 <= p <= 1``.

    Variables are ``p[yhat, z]`` flattened as ``yhat * k + z``.
    """

    c: np.ndarray
    A_fair: np.ndarray
    b_fair: np.ndarray
    mixing: np.ndarray
    constant: float
    alpha_tilde: float
    group_count: int

    @property
    def box_rows(self) -> tuple[np.ndarray, np.ndarray]:
        """Both sides of the box as explicit ``<=`` rows (4k of them)."""
        J = 2 * self.group_count
        return np.vstack([np.eye(J), -np.eye(J)]), np.concatenate([np.ones(J), np.zeros(J)])

    def solve(self) -> LPResult:
        J = 2 * self.group_count
        A = np.vstack([self.A_fair, np.eye(J)])
        b = np.concatenate([self.b_fair, np.ones(J)])
        return simplex(self.c, A, b)


def _lp_from_rates(rates: BaseRates, mixing: np.ndarray, alpha_tilde: float) -> PosthocLP:
    if alpha_tilde < 0:
        raise ConfigError("alpha_tilde must be nonnegative")
    k = rates.group_count
    J = 2 * k
    # fairness rates of the derived predictor as rows over the mixed table
    g = np.zeros((2, k, J))
    for y in range(2):
        for a in range(k):
            g[y, a, a] = 1.0 - rates.rates[y, a]
            g[y, a, k + a] = rates.rates[y, a]
    rows = []
    for y in range(2):
        for a in range(1, k):
            diff = (g[y, a] - g[y, 0]) @ mixing
            rows += [diff, -diff]
    A_fair = np.array(rows).reshape(-1, J)
    w = (rates.joint[:, 0, :] - rates.joint[:, 1, :]).ravel()
    return PosthocLP(
        c=mixing.T @ w,
        A_fair=A_fair,
        b_fair=np.full(A_fair.shape[0], float(alpha_tilde)),
        mixing=mixing,
        constant=float(rates.joint[:, 1, :].sum()),
        alpha_tilde=float(alpha_tilde),
        group_count=k,
    )


def mixing_matrix(mechanism: RRMechanism) -> np.ndarray:
    """Linear map ``p -> ptilde``, block-diagonal over ``yhat``."""
    return np.kron(np.eye(2), mechanism.matrix.T)


def build_lp(rates: BaseRates, mechanism: RRMechanism, alpha_tilde: float) -> PosthocLP:
    """Post-processing program enforcing approximate equalized odds w.r.t. ``A``."""
    return _lp_from_rates(rates, mixing_matrix(mechanism), alpha_tilde)


def build_naive_lp(rates_z: BaseRates, alpha_tilde: float) -> PosthocLP:
    """The usual post-processing program with ``Z`` standing in for ``A``."""
    return _lp_from_rates(rates_z, np.eye(2 * rates_z.group_count), alpha_tilde)


def solve_lp(lp: PosthocLP) -> tuple[np.ndarray, float]:
    """Optimal table and estimated error ``c.p + constant``.

    Raises:
        Infeasible: no table meets the fairness rows at this slack.
        Unbounded: cannot happen with the box; signals an internal error.
    """
    result = lp.solve()
    if result.status == "infeasible":
        raise Infeasible(f"post-processing program infeasible at alpha_tilde={lp.alpha_tilde}")
    if result.status == "unbounded":
        raise Unbounded("post-processing program reported unbounded")
    table = np.clip(result.x, 0.0, 1.0).reshape(2, lp.group_count)
    return table, result.objective + lp.constant


def solve_with_fallback(rates: BaseRates, mechanism: RRMechanism, alpha_tilde: float, max_doublings: int = 4):
    """Solve, doubling the slack on infeasibility.

    Returns:
        ``(table, estimated_error, alpha_used, status)``; ``status`` is
        ``"optimal"`` or ``"optimal_inflated_x<factor>"``.
    """
    alpha = float(alpha_tilde)
    for attempt in range(max_doublings + 1):
        try:
            table, err = solve_lp(build_lp(rates, mechanism, alpha))
        except Infeasible:
            if attempt == max_doublings:
                raise
            alpha = 2.0 * max(alpha, 1e-6)
            continue
        status = "optimal" if attempt == 0 else f"optimal_inflated_x{2 ** attempt}"
        return table, err, alpha, status
    raise AssertionError("unreachable")


def derived_gamma(table: np.ndarray, rates: np.ndarray, mechanism: RRMechanism) -> np.ndarray:
    """``P(Ytilde=1 | Y=y, A=a)`` implied by ``table`` and base rates ``rates[y, a]``."""
    table = np.asarray(table, dtype=float)
    mixed = table @ mechanism.matrix  # mixed[yhat, a] = sum_z p[yhat, z] Pi[z, a]
    rates = np.asarray(rates, dtype=float)
    return mixed[0][None, :] * (1.0 - rates) + mixed[1][None, :] * rates


class DerivedPredictor:
    """``Ytilde = f(Yhat, Z)``: realize the base classifier, then flip per the table."""

    uses_private_group = True

    def __init__(self, base, table, epsilon: float):
        table = np.asarray(table, dtype=float)
        if table.ndim != 2 or table.shape[0] != 2 or (table < 0).any() or (table > 1).any():
            raise ValueError("table must be a 2 x k array with entries in [0, 1]")
        self.base = base
        self.table = table
        self.epsilon = float(epsilon)

    @property
    def group_count(self) -> int:
        return self.table.shape[1]

    def accept_probability(self, features, private_group=None) -> np.ndarray:
        if private_group is None:
            raise ValueError("the derived predictor needs the private group")
        z = np.asarray(private_group, dtype=np.int64)
        p1 = self.base.accept_probability(features)
        return p1 * self.table[1, z] + (1.0 - p1) * self.table[0, z]

    def predict(self, features, private_group, seed: int) -> np.ndarray:
        z = np.asarray(private_group, dtype=np.int64)
        yhat = realize(self.base.accept_probability(features), seed)
        u = record_uniforms(seed, DERIVED_STREAM, 0, z.size)
        return (u < self.table[yhat, z]).astype(np.int64)

    def to_dict(self) -> dict:
        return {"p_table": self.table.tolist(), "epsilon": self.epsilon, "base_model_weights": self.base.to_dict()}

    @classmethod
    def from_dict(cls, d) -> "DerivedPredictor":
        return cls(RandomizedClassifier.from_dict(d["base_model_weights"]), d["p_table"], d["epsilon"])


def alpha_tilde_n(n: int, delta: float, mechanism: RRMechanism, min_cell: float) -> float:
    """Step-two slack ``sqrt(log(64/delta) / 2n) * 4 k C^2 / min_P^2``."""
    if n <= 0 or min_cell <= 0:
        raise ConfigError("n and min_cell must be positive")
    C = mechanism.privacy_constant
    return math.sqrt(math.log(64.0 / delta) / (2.0 * n)) * 4.0 * mechanism.group_count * C**2 / min_cell**2


def two_step_bounds(n, delta, B, rademacher, min_cell, mechanism):
    """Guarantees of the two-step predictor: (excess error, discrimination)."""
    k = mechanism.group_count
    C = mechanism.privacy_constant
    err = (5 * C / min_cell**2) * (
        2 / B + 10 * rademacher + 18 * k * math.sqrt(2 * math.log(64 * k / delta) / (n * min_cell))
    )
    disc = 2.0 * alpha_tilde_n(n, delta, mechanism, min_cell)
    return err, disc


@dataclass(frozen=True)
class TwoStepConfig:
    B: float = 100.0
    eta: float = 2.0
    T: int = 50
    alpha_n: float | None = None
    alpha_tilde: float | None = None
    delta: float = 0.1
    learner: LearnerConfig = LearnerConfig()
    realize_seed: int = 0
    split_seed: int = 0
    max_doublings: int = 4
    s1_fraction: float = 0.5
    mixture: str = "uniform"


@dataclass
class TwoStepResult:
    predictor: DerivedPredictor
    step1: TrainingResult
    rates: BaseRates
    report: dict = field(default_factory=dict)


def split_indices(n: int, fraction: float, seed: int) -> tuple[np.ndarray, np.ndarray]:
    """Random partition of ``range(n)``; the first part gets ``int(fraction * n)`` indices."""
    perm = np.random.default_rng(seed).permutation(n)
    cut = int(fraction * n)
    return np.sort(perm[:cut]), np.sort(perm[cut:])


def plugin_min_cell(data: PrivatizedDataset, mechanism: RRMechanism) -> float:
    """Plug-in ``min_ya P(Y=y, A=a)`` recovered from the private cells."""
    Q = np.zeros((2, data.group_count))
    np.add.at(Q, (data.labels, data.private_groups), 1.0)
    return float(recover_cells(Q / len(data), mechanism).min())


def two_step_train(data: PrivatizedDataset, mechanism: RRMechanism, config: TwoStepConfig = TwoStepConfig()) -> TwoStepResult:
    """Reduction on ``S1``, post-processing on ``S2`` (half/half by default)."""
    i1, i2 = split_indices(len(data), config.s1_fraction, config.split_seed)
    s1, s2 = data.subset(i1), data.subset(i2)
    warnings = []

    alpha_n = config.alpha_n
    if alpha_n is None:
        alpha_n = alpha_n_step1(len(s1), config.delta, plugin_min_cell(s1, mechanism), data.group_count)
    step1 = exp_gradient_train(s1, config.B, config.eta, config.T, alpha_n, config.learner, config.mixture)

    rates, yhat = estimate_base_rates(s2, step1.classifier, mechanism, config.realize_seed)
    min_cell = plugin_min_cell(s2, mechanism)
    alpha_tilde = config.alpha_tilde
    if alpha_tilde is None:
        alpha_tilde = alpha_tilde_n(len(s2), config.delta, mechanism, min_cell)
    if len(s2) < audit_sample_threshold(config.delta, data.group_count, min_cell):
        warnings.append("below_sample_threshold")
    if rates.clamped:
        warnings.append("rates_clamped")
    table, est_err, alpha_used, status = solve_with_fallback(rates, mechanism, alpha_tilde, config.max_doublings)
    predictor = DerivedPredictor(step1.classifier, table, mechanism.epsilon)

    stats = joint_stats_from_predictions(yhat, s2.labels, s2.private_groups, s2.group_count)
    step1_audit = report_from_stats(stats, mechanism, config.delta)
    p_tilde = table[yhat, s2.private_groups]
    gamma2 = derived_gamma(table, rates.rates, mechanism)
    report = {
        "err_step1": float(np.mean(yhat != s2.labels)),
        "disc_step1": step1_audit.max_violation,
        "err_step2": float(np.mean(np.where(s2.labels == 1, 1.0 - p_tilde, p_tilde))),
        "disc_step2": float(np.abs(gamma2 - gamma2[:, :1]).max()),
        "alpha_n": float(alpha_n),
        "alpha_tilde_n": float(alpha_tilde),
        "alpha_tilde_used": float(alpha_used),
        "lp_status": status,
        "lp_objective": float(est_err),
        "warnings": warnings,
    }
    return TwoStepResult(predictor, step1, rates, report)
