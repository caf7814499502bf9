"""Step one: exponentiated-gradient reduction to cost-sensitive learning.

The auditor keeps log-weights ``theta`` over the equalized-odds constraint
rows; the learner answers each multiplier vector with a best response,
found by weighted logistic regression. Constraint statistics are computed
with whatever group column the caller supplies, which is the private
attribute ``Z`` in the private setting.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from privfair.core import PrivatizedDataset
from privfair.errors import ConfigError, EmptyCell, OptimizerDiverged
from privfair.lp import simplex


def cell_index(y, group, group_count):
    """Column of ``(y, a)`` in the constraint matrix: ``y * k + a``."""
    return np.asarray(y) * group_count + np.asarray(group)


@dataclass(frozen=True)
class ConstraintMatrix:
    M: np.ndarray
    rows: tuple
    cols: tuple
    group_count: int

    def row(self, y: int, a: int, sign: str) -> int:
        return self.rows.index((y, a, sign))


def build_constraint_matrix(group_count: int) -> ConstraintMatrix:
    """Signed incidence matrix with rows ``(y, a, +/-)`` for ``a != 0``.

    Row ``(y, a, +)`` reads ``gamma[y, a] - gamma[y, 0]``; the ``-`` row is
    its negation. Columns are ordered ``(0,0), (0,1), ..., (1,k-1)``.
    """
    if group_count < 2:
        raise ConfigError("group_count must be at least 2")
    k = group_count
    cols = tuple((y, a) for y in (0, 1) for a in range(k))
    rows = tuple((y, a, s) for y in (0, 1) for a in range(1, k) for s in ("+", "-"))
    M = np.zeros((len(rows), len(cols)))
    for r, (y, a, s) in enumerate(rows):
        sign = 1.0 if s == "+" else -1.0
        M[r, y * k + a] = sign
        M[r, y * k] = -sign
    M.setflags(write=False)
    return ConstraintMatrix(M, rows, cols, k)


@dataclass(frozen=True)
class BaseHypothesis:
    """Linear threshold rule: predict 1 iff ``x . weights + bias >= 0``."""

    weights: np.ndarray
    bias: float
    uses_private_group = False

    def predict(self, features) -> np.ndarray:
        X = np.atleast_2d(np.asarray(features, dtype=float))
        return (X @ self.weights + self.bias >= 0).astype(np.int64)

    def accept_probability(self, features, private_group=None) -> np.ndarray:
        return self.predict(features).astype(float)

    def to_dict(self) -> dict:
        return {"weights": self.weights.tolist(), "bias": self.bias}

    @classmethod
    def from_dict(cls, d) -> "BaseHypothesis":
        return cls(np.asarray(d["weights"], dtype=float), float(d["bias"]))

    @classmethod
    def constant(cls, value: int, dim: int) -> "BaseHypothesis":
        return cls(np.zeros(dim), 1.0 if value else -1.0)


@dataclass(frozen=True)
class RandomizedClassifier:
    """Mixture over base hypotheses; accepts with the mixture-averaged vote."""

    hypotheses: tuple
    weights: np.ndarray
    uses_private_group = False

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=float)
        if len(w) != len(self.hypotheses) or abs(w.sum() - 1) > 1e-12 or (w < 0).any():
            raise ValueError("mixture weights must be a probability vector over the hypotheses")
        object.__setattr__(self, "weights", w)

    @classmethod
    def uniform(cls, hypotheses) -> "RandomizedClassifier":
        hypotheses = tuple(hypotheses)
        return cls(hypotheses, np.full(len(hypotheses), 1.0 / len(hypotheses)))

    def accept_probability(self, features, private_group=None) -> np.ndarray:
        X = np.atleast_2d(np.asarray(features, dtype=float))
        votes = np.stack([h.predict(X) for h in self.hypotheses])
        return self.weights @ votes

    def to_dict(self) -> dict:
        return {
            "type": "randomized",
            "weights": self.weights.tolist(),
            "hypotheses": [h.to_dict() for h in self.hypotheses],
        }

    @classmethod
    def from_dict(cls, d) -> "RandomizedClassifier":
        return cls(tuple(BaseHypothesis.from_dict(h) for h in d["hypotheses"]), np.asarray(d["weights"]))


def group_rates(predictions, labels, groups, group_count, mask=None) -> np.ndarray:
    """Cell means of ``predictions`` over ``(y, a)``, flattened like the matrix columns."""
    predictions = np.asarray(predictions, dtype=float)
    cells = cell_index(labels, groups, group_count)
    if mask is not None:
        cells, predictions = cells[mask], predictions[mask]
    J = 2 * group_count
    counts = np.bincount(cells, minlength=J)
    if (counts == 0).any():
        j = int(np.argmin(counts))
        raise EmptyCell(j // group_count, j % group_count)
    return np.bincount(cells, weights=predictions, minlength=J) / counts


def empirical_error(predictions, labels) -> float:
    p = np.asarray(predictions, dtype=float)
    y = np.asarray(labels)
    return float(np.mean(np.where(y == 1, 1.0 - p, p)))


def lagrangian(Q, lam, data: PrivatizedDataset, alpha: float) -> float:
    """``err(Q) + lam . (M gamma(Q) - alpha)`` with expected (unrealized) predictions."""
    p = Q.accept_probability(data.features)
    M = build_constraint_matrix(data.group_count).M
    gamma = group_rates(p, data.labels, data.private_groups, data.group_count)
    lam = np.asarray(lam, dtype=float)
    return empirical_error(p, data.labels) + float(lam @ (M @ gamma - alpha))


def cell_frequencies(labels, groups, group_count, mask=None, total=None) -> np.ndarray:
    """``p[y, a]``: cell counts (over ``mask``) divided by ``total`` records."""
    labels = np.asarray(labels)
    groups = np.asarray(groups)
    if mask is not None:
        labels, groups = labels[mask], groups[mask]
    n = labels.shape[0] if total is None else total
    counts = np.zeros((2, group_count))
    np.add.at(counts, (labels, groups), 1.0)
    if (counts == 0).any():
        y, a = np.argwhere(counts == 0)[0]
        raise EmptyCell(int(y), int(a))
    return counts / n


def cost_sensitive_costs(lam, labels, groups, cell_freq, mask=None):
    """Per-record costs of predicting 0 and 1 under multipliers ``lam``.

    ``c0 = 1(y != 0)``. ``c1 = 1(y != 1)`` plus the multiplier term: a record
    in cell ``(y, a)`` with ``a != 0`` adds ``(lam[y,a,+] - lam[y,a,-]) / p[y,a]``;
    a record in group 0 subtracts ``sum_a (lam[y,a,+] - lam[y,a,-]) / p[y,0]``.
    Records outside ``mask`` keep the plain misclassification costs.
    """
    labels = np.asarray(labels)
    groups = np.asarray(groups)
    cell_freq = np.asarray(cell_freq, dtype=float)
    k = cell_freq.shape[1]
    lam = np.asarray(lam, dtype=float).reshape(2, k - 1, 2)
    net = lam[..., 0] - lam[..., 1]  # (y, a-1): lam+ minus lam-
    coef = np.zeros((2, k))
    coef[:, 1:] = net / cell_freq[:, 1:]
    coef[:, 0] = -net.sum(axis=1) / cell_freq[:, 0]
    c0 = (labels != 0).astype(float)
    c1 = (labels != 1).astype(float)
    if mask is None:
        c1 = c1 + coef[labels, groups]
    else:
        c1[mask] = c1[mask] + coef[labels[mask], groups[mask]]
    return c0, c1


@dataclass(frozen=True)
class LearnerConfig:
    steps: int = 500
    step_size: float = 0.1
    l2: float = 1e-6


def _sigmoid(s):
    return 0.5 * (1.0 + np.tanh(0.5 * s))


def weighted_cost(h: BaseHypothesis, X, c0, c1) -> float:
    pred = h.predict(X)
    return float(np.sum(np.where(pred == 1, c1, c0)))


def best_response(c0, c1, features, config: LearnerConfig = LearnerConfig()) -> BaseHypothesis:
    """Approximate ``argmin_h sum_i h(x_i) c1_i + (1 - h(x_i)) c0_i``.

    The cost-sensitive problem is turned into weighted binary classification
    (target = cheaper label, weight = |c1 - c0|) and fitted by gradient
    descent on the weighted logistic loss. The result is never worse than
    the better constant hypothesis.
    """
    X = np.atleast_2d(np.asarray(features, dtype=float))
    c0 = np.asarray(c0, dtype=float)
    c1 = np.asarray(c1, dtype=float)
    if not (np.isfinite(c0).all() and np.isfinite(c1).all()):
        raise OptimizerDiverged("non-finite costs")
    n, d = X.shape
    candidates = [BaseHypothesis.constant(0, d), BaseHypothesis.constant(1, d)]
    w = np.abs(c1 - c0)
    total = w.sum()
    if total > 0:
        target = (c1 < c0).astype(float)
        w = w / total
        Xb = np.hstack([X, np.ones((n, 1))])
        theta = np.zeros(d + 1)
        for _ in range(config.steps):
            grad = Xb.T @ (w * (_sigmoid(Xb @ theta) - target)) + config.l2 * theta
            theta -= config.step_size * grad
        if not np.isfinite(theta).all():
            raise OptimizerDiverged("logistic regression produced non-finite weights")
        candidates.append(BaseHypothesis(theta[:d].copy(), float(theta[d])))
    costs = [weighted_cost(h, X, c0, c1) for h in candidates]
    # ties go to the fitted model, then to constant 0
    best = min(range(len(candidates)), key=lambda i: (costs[i], -i if i == 2 else i))
    return candidates[best]


def _lambda_from_theta(theta: np.ndarray, B: float) -> np.ndarray:
    # B exp(theta_k) / (1 + sum exp(theta)), shifted for stability
    m = max(0.0, float(theta.max()))
    e = np.exp(theta - m)
    return B * e / (math.exp(-m) + e.sum())


@dataclass
class TrainingResult:
    classifier: RandomizedClassifier
    lambda_hat: np.ndarray
    lambdas: np.ndarray
    log: list = field(default_factory=list)
    alpha: float = 0.0
    B: float = 0.0
    mixture: str = "uniform"


def exp_gradient(
    features,
    labels,
    groups,
    group_count: int,
    B: float,
    eta: float,
    T: int,
    alpha: float,
    learner: LearnerConfig = LearnerConfig(),
    labeled=None,
    mixture: str = "uniform",
) -> TrainingResult:
    """Exponentiated-gradient loop on raw arrays.

    ``labeled`` (boolean mask) marks records whose group is known; only they
    enter the constraint statistics, while the error term uses every record.
    Without a mask all records are labeled.

    ``mixture="uniform"`` returns the plain average of the best responses.
    ``mixture="lp"`` instead reweights the same hypotheses by
    :func:`best_mixture`, which is what the reference reductions software
    returns and behaves much better for small ``T``.
    """
    if T < 1 or B <= 0 or eta <= 0:
        raise ConfigError("need T >= 1, B > 0 and eta > 0")
    if mixture not in ("uniform", "lp"):
        raise ConfigError("mixture must be 'uniform' or 'lp'")
    X = np.atleast_2d(np.asarray(features, dtype=float))
    y = np.asarray(labels)
    g = np.asarray(groups)
    n = y.shape[0]
    k = group_count
    freq = cell_frequencies(y, g, k, mask=labeled, total=n)
    M = build_constraint_matrix(k).M
    theta = np.zeros(M.shape[0])
    hypotheses, lambdas, log, errs, gammas = [], [], [], [], []
    for t in range(1, T + 1):
        lam = _lambda_from_theta(theta, B)
        c0, c1 = cost_sensitive_costs(lam, y, g, freq, mask=labeled)
        h = best_response(c0, c1, X, learner)
        pred = h.predict(X)
        gamma = group_rates(pred, y, g, k, mask=labeled)
        slack = M @ gamma - alpha
        err = empirical_error(pred, y)
        log.append(
            {
                "t": t,
                "lagrangian": err + float(lam @ slack),
                "err": err,
                "max_violation": float(np.max(M @ gamma)),
                "lambda_l1": float(lam.sum()),
            }
        )
        hypotheses.append(h)
        lambdas.append(lam)
        errs.append(err)
        gammas.append(gamma)
        theta = theta + eta * slack
    lambdas = np.array(lambdas)
    if mixture == "lp":
        weights = best_mixture(np.array(errs), M @ np.array(gammas).T, alpha, B)
        classifier = RandomizedClassifier(tuple(hypotheses), weights)
    else:
        classifier = RandomizedClassifier.uniform(hypotheses)
    return TrainingResult(classifier, lambdas.mean(axis=0), lambdas, log, alpha, B, mixture)


def best_mixture(errors: np.ndarray, violations: np.ndarray, alpha: float, B: float) -> np.ndarray:
    """Lowest-error mixture of fixed hypotheses under softened constraints.

    Solves ``min_w errors.w + B xi`` subject to ``violations @ w <= alpha + xi``,
    ``xi >= 0`` and ``w`` on the simplex; ``violations[r, t]`` is row ``r`` of
    ``M gamma(h_t)``. The slack ``xi`` keeps the program feasible. Weights
    below 1e-12 are zeroed and the rest renormalized.
    """
    R, T = violations.shape
    c = np.concatenate([errors, [B]])
    A_ub = np.hstack([violations, -np.ones((R, 1))])
    b_ub = np.full(R, float(alpha))
    A_eq = np.concatenate([np.ones(T), [0.0]])[None, :]
    result = simplex(c, A_ub, b_ub, A_eq, [1.0])
    if result.status != "optimal":
        raise OptimizerDiverged(f"mixture program ended {result.status}")
    w = np.where(result.x[:T] > 1e-12, result.x[:T], 0.0)
    return w / w.sum()


def exp_gradient_train(
    data: PrivatizedDataset,
    B: float = 100.0,
    eta: float = 2.0,
    T: int = 50,
    alpha_n: float = 0.0,
    learner: LearnerConfig = LearnerConfig(),
    mixture: str = "uniform",
) -> TrainingResult:
    """Train an approximately fair randomized classifier w.r.t. the private groups."""
    return exp_gradient(
        data.features, data.labels, data.private_groups, data.group_count, B, eta, T, alpha_n, learner,
        mixture=mixture,
    )


def saddle_gap(result: TrainingResult, features, labels, groups, group_count, learner=LearnerConfig(), labeled=None):
    """Measured approximation quality of the returned pair ``(Q, lambda_hat)``.

    The learner side minimizes over the collected hypotheses, the two
    constants and a fresh best response to ``lambda_hat``; the auditor side
    maximizes over the vertices of the B-ball (which is exact, as the
    Lagrangian is linear in lambda).
    """
    X = np.atleast_2d(np.asarray(features, dtype=float))
    y = np.asarray(labels)
    g = np.asarray(groups)
    n = y.shape[0]
    k = group_count
    alpha, B = result.alpha, result.B
    M = build_constraint_matrix(k).M
    freq = cell_frequencies(y, g, k, mask=labeled, total=n)
    lam_hat = result.lambda_hat
    c0, c1 = cost_sensitive_costs(lam_hat, y, g, freq, mask=labeled)

    def L(p, lam):
        return empirical_error(p, y) + float(lam @ (M @ group_rates(p, y, g, k, mask=labeled) - alpha))

    p_hat = result.classifier.accept_probability(X)
    value = L(p_hat, lam_hat)
    pool = list(result.classifier.hypotheses)
    pool += [BaseHypothesis.constant(0, X.shape[1]), BaseHypothesis.constant(1, X.shape[1])]
    pool.append(best_response(c0, c1, X, learner))
    learner_best = min(L(h.predict(X).astype(float), lam_hat) for h in pool)
    slack = M @ group_rates(p_hat, y, g, k, mask=labeled) - alpha
    auditor_best = empirical_error(p_hat, y) + max(0.0, B * float(slack.max()))
    return max(value - learner_best, auditor_best - value, 0.0)


def alpha_n_step1(n: int, delta: float, min_cell: float, group_count: int = 2) -> float:
    """Step-one slack ``2 sqrt(log(64 k / delta) / (n min_P))``."""
    if n <= 0 or min_cell <= 0:
        raise ConfigError("n and min_cell must be positive")
    return 2.0 * math.sqrt(math.log(64.0 * group_count / delta) / (n * min_cell))


def alpha_n_private_cells(n: int, delta: float, min_q_cell: float) -> float:
    """Alternative step-one slack ``sqrt(8 log(64/delta) / (n min_Q))``."""
    if n <= 0 or min_q_cell <= 0:
        raise ConfigError("n and min_q_cell must be positive")
    return math.sqrt(8.0 * math.log(64.0 / delta) / (n * min_q_cell))


def default_nu(n: int, delta: float) -> float:
    """Saddle accuracy with the complexity term dropped: sqrt(log(8/delta) / n)."""
    return math.sqrt(math.log(8.0 / delta) / n)


def step1_bounds(n, delta, B, rademacher, min_cell, mechanism, rademacher_small=None):
    """Step-one guarantees: (excess error, discrimination w.r.t. A).

    ``rademacher`` stands in for the complexity at ``n/2`` samples and
    ``rademacher_small`` (default: same value) for the one at
    ``min_P n / 4`` samples.
    """
    if rademacher_small is None:
        rademacher_small = rademacher
    k = mechanism.group_count
    C = mechanism.privacy_constant
    err = 4 * rademacher + 4 * math.sqrt(math.log(8 / delta) / n)
    disc = (5 * C / min_cell**2) * (
        2 / B + 6 * rademacher_small + 10 * math.sqrt(2 * math.log(64 * k / delta) / (n * min_cell))
    )
    return err, disc


def training_log_json_lines(result: TrainingResult) -> str:
    return "".join(json.dumps(entry) + "\n" for entry in result.log)

