"""Bias-corrected discrimination estimates from privatized data.

The naive approach treats ``Z`` as if it were ``A``. Here the empirical
``(y, z)`` statistics are instead pushed back through the channel: the joint
cell masses ``P(Y=y, A=a)`` are recovered with the inverse channel matrix,
and the group-conditional rates with the inverse of the per-label mixing
matrix ``G``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from privfair.core import (
    FairnessCriterion,
    FinitePopulation,
    PrivatizedDataset,
    exact_statistics,
)
from privfair.errors import ConfigError, EmptyCell, NotBinaryGroups, PredictorUsesZ
from privfair.mechanism import RRMechanism, channel_inverse, record_uniforms

JOINT_FLOOR = 1e-9
REALIZE_STREAM = 0x5245

_CORRECTABLE = (
    FairnessCriterion.EQUALIZED_ODDS,
    FairnessCriterion.DEMOGRAPHIC_PARITY,
    FairnessCriterion.ACCURACY_PARITY,
)


def realize(probabilities: np.ndarray, seed: int) -> np.ndarray:
    """One Bernoulli draw per record; exact 0/1 probabilities stay put."""
    p = np.asarray(probabilities, dtype=float)
    u = record_uniforms(seed, REALIZE_STREAM, 0, p.size)
    return (u < p).astype(np.int64)


@dataclass(frozen=True)
class JointStats:
    """Empirical statistics per (stratum, private group).

    For equalized odds the stratum is the label ``y``, so ``q_hat[y, z]`` is
    the empirical ``P(Yhat=1 | Y=y, Z=z)`` and ``Q_hat[y, z]`` the empirical
    ``P(Y=y, Z=z)``.
    """

    q_counts: np.ndarray
    q_hat: np.ndarray
    Q_hat: np.ndarray
    n: int
    criterion: FairnessCriterion = FairnessCriterion.EQUALIZED_ODDS


def joint_stats_from_predictions(
    predictions: np.ndarray,
    labels: np.ndarray,
    private_groups: np.ndarray,
    group_count: int,
    criterion: FairnessCriterion = FairnessCriterion.EQUALIZED_ODDS,
) -> JointStats:
    """Tabulate realized binary predictions against ``(stratum, z)`` cells.

    Raises:
        EmptyCell: a conditioning cell holds no record.
    """
    yhat = np.asarray(predictions, dtype=np.int64)
    y = np.asarray(labels, dtype=np.int64)
    z = np.asarray(private_groups, dtype=np.int64)
    k = group_count
    strata = criterion.strata()
    counts = np.zeros((len(strata), k))
    hits = np.zeros((len(strata), k))
    for s, (_, e1, e2) in enumerate(strata):
        cond = e2(y, yhat)
        counts[s] = np.bincount(z[cond], minlength=k)
        hits[s] = np.bincount(z[cond & e1(y, yhat)], minlength=k)
    if (counts == 0).any():
        s, g = np.argwhere(counts == 0)[0]
        raise EmptyCell(int(s), int(g))
    n = y.shape[0]
    return JointStats(counts, hits / counts, counts / n, n, criterion)


def collect_joint_stats(
    data: PrivatizedDataset,
    predictor,
    realize_seed: int = 0,
    criterion: FairnessCriterion = FairnessCriterion.EQUALIZED_ODDS,
) -> JointStats:
    """Realize the predictor once per record and tabulate its statistics.

    Raises:
        PredictorUsesZ: the predictor reads the private attribute, so the
            inversion identities do not hold and nothing is certified.
    """
    if getattr(predictor, "uses_private_group", False):
        raise PredictorUsesZ("cannot audit a predictor that is a function of Z")
    yhat = realize(predictor.accept_probability(data.features), realize_seed)
    return joint_stats_from_predictions(yhat, data.labels, data.private_groups, data.group_count, criterion)


def recover_cells(Q: np.ndarray, mechanism: RRMechanism, floor: float = JOINT_FLOOR) -> np.ndarray:
    """Recover ``P(stratum, A=a)`` from ``P(stratum, Z=z)`` rows.

    Each row is multiplied by the inverse channel matrix; the whole table is
    then floored and renormalized to its original total, since later steps
    divide by these cells.
    """
    Q = np.asarray(Q, dtype=float)
    inv = channel_inverse(mechanism).inverse
    P = Q @ inv.T
    total = Q.sum()
    P = np.maximum(P, floor)
    return P * (total / P.sum())


def recover_joint_pa(stats: JointStats, mechanism: RRMechanism, floor: float = JOINT_FLOOR) -> np.ndarray:
    """Estimated ``P(Y=y, A=a)`` (shape (2, k) for equalized odds)."""
    return recover_cells(stats.Q_hat, mechanism, floor)


def project_simplex(x) -> np.ndarray:
    """Euclidean projection onto ``{v >= 0, sum(v) = 1}`` by sort and threshold."""
    x = np.asarray(x, dtype=float).ravel()
    if not np.isfinite(x).all():
        raise ValueError("projection input must be finite")
    u = np.sort(x)[::-1]
    css = np.cumsum(u)
    j = np.arange(1, x.size + 1)
    rho = np.nonzero(u - (css - 1.0) / j > 0)[0][-1]
    tau = (css[rho] - 1.0) / (rho + 1)
    return np.maximum(x - tau, 0.0)


@dataclass(frozen=True)
class GMatrix:
    """Per-stratum mixing matrices relating Z-rates to A-rates: ``q = G gamma``."""

    entries: np.ndarray
    inverse: np.ndarray


def g_matrix(P: np.ndarray, Q: np.ndarray, mechanism: RRMechanism) -> GMatrix:
    """Build ``G`` and its closed-form inverse from cell masses.

    ``G[i, i] = pi P_i / Q_i``, ``G[i, j] = pi_bar P_j / Q_i`` and the inverse
    is ``C1 Q_i / P_i`` on the diagonal and ``C2 Q_j / P_i`` off it.
    """
    P = np.atleast_2d(P)
    Q = np.atleast_2d(Q)
    S, k = P.shape
    c1, c2 = mechanism.inverse_coefficients
    G = np.empty((S, k, k))
    Ginv = np.empty((S, k, k))
    for s in range(S):
        G[s] = mechanism.pi_bar * P[s][None, :] / Q[s][:, None]
        G[s][np.diag_indices(k)] = mechanism.pi * P[s] / Q[s]
        Ginv[s] = c2 * Q[s][None, :] / P[s][:, None]
        Ginv[s][np.diag_indices(k)] = c1 * Q[s] / P[s]
    return GMatrix(G, Ginv)


def _check_criterion(stats: JointStats):
    if stats.criterion not in _CORRECTABLE:
        raise ConfigError(f"no corrected estimator for {stats.criterion.name}")


def estimate_gamma_raw(stats: JointStats, mechanism: RRMechanism) -> np.ndarray:
    """Unprojected corrected rates ``G^{-1} q`` per stratum; fine for differences."""
    _check_criterion(stats)
    P = recover_cells(stats.Q_hat, mechanism)
    Ginv = g_matrix(P, stats.Q_hat, mechanism).inverse
    return np.einsum("sij,sj->si", Ginv, stats.q_hat)


def estimate_gamma(stats: JointStats, mechanism: RRMechanism) -> np.ndarray:
    """Corrected rates ``gamma[s, a]``, each projected to a valid probability.

    Because the rows of ``G^{-1}`` sum to one, the raw estimate of the pair
    ``(P(E1 | s, a), P(not E1 | s, a))`` always sums to one; projecting that
    pair onto the simplex keeps the estimate inside [0, 1].
    """
    raw = estimate_gamma_raw(stats, mechanism)
    out = np.empty_like(raw)
    for idx, g in np.ndenumerate(raw):
        out[idx] = project_simplex([g, 1.0 - g])[0]
    return out


def lemma1_bound(n: int, delta: float, mechanism: RRMechanism, min_cell: float, form: str = "appendix") -> float:
    """High-probability bound on the max error of the corrected gap estimates.

    ``form="main"``:     sqrt(log(16/delta) / 2n) * 4 C^2 / min_P^2
    ``form="appendix"``: the same with an extra factor |A| (looser).
    """
    if n <= 0 or min_cell <= 0 or not (0 < delta < 1):
        raise ConfigError("lemma1_bound needs n > 0, min_cell > 0 and delta in (0, 1)")
    C = mechanism.privacy_constant
    base = math.sqrt(math.log(16.0 / delta) / (2.0 * n)) * 4.0 * C**2 / min_cell**2
    if form == "main":
        return base
    if form == "appendix":
        return base * mechanism.group_count
    raise ValueError("form must be 'main' or 'appendix'")


def audit_sample_threshold(delta: float, group_count: int, min_cell: float) -> float:
    """Smallest ``n`` for which the bound is claimed: 8 log(8k/delta) / min_P."""
    return 8.0 * math.log(8.0 * group_count / delta) / min_cell


@dataclass
class DiscriminationReport:
    corrected_gamma: np.ndarray
    corrected_gaps: np.ndarray
    naive_gaps: np.ndarray
    raw_gamma: np.ndarray
    max_violation: float
    naive_max_violation: float
    lemma1_bound: float
    lemma1_bound_main: float
    delta: float
    n: int
    epsilon: float
    min_cell: float
    criterion: FairnessCriterion = FairnessCriterion.EQUALIZED_ODDS
    warnings: list[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "criterion": self.criterion.value,
            "corrected_gamma": self.corrected_gamma.tolist(),
            "corrected_gaps": self.corrected_gaps.tolist(),
            "naive_gaps": self.naive_gaps.tolist(),
            "max_violation": self.max_violation,
            "naive_max_violation": self.naive_max_violation,
            "lemma1_bound": self.lemma1_bound,
            "lemma1_bound_main": self.lemma1_bound_main,
            "min_cell": self.min_cell,
            "delta": self.delta,
            "n": self.n,
            "epsilon": self.epsilon,
            "warnings": list(self.warnings),
        }


def report_from_stats(stats: JointStats, mechanism: RRMechanism, delta: float = 0.1) -> DiscriminationReport:
    raw = estimate_gamma_raw(stats, mechanism)
    gamma = estimate_gamma(stats, mechanism)
    gaps = np.abs(gamma - gamma[:, :1])
    naive = np.abs(stats.q_hat - stats.q_hat[:, :1])
    min_cell = float(recover_cells(stats.Q_hat, mechanism).min())
    warnings = []
    threshold = audit_sample_threshold(delta, mechanism.group_count, min_cell)
    if stats.n < threshold:
        warnings.append(f"below_sample_threshold: n={stats.n} < {threshold:.1f}")
    return DiscriminationReport(
        corrected_gamma=gamma,
        corrected_gaps=gaps,
        naive_gaps=naive,
        raw_gamma=raw,
        max_violation=float(gaps[:, 1:].max()),
        naive_max_violation=float(naive[:, 1:].max()),
        lemma1_bound=lemma1_bound(stats.n, delta, mechanism, min_cell, "appendix"),
        lemma1_bound_main=lemma1_bound(stats.n, delta, mechanism, min_cell, "main"),
        delta=delta,
        n=stats.n,
        epsilon=mechanism.epsilon,
        min_cell=min_cell,
        criterion=stats.criterion,
        warnings=warnings,
    )


def discrimination_report(
    data: PrivatizedDataset,
    predictor,
    mechanism: RRMechanism,
    delta: float = 0.1,
    realize_seed: int = 0,
    criterion: FairnessCriterion = FairnessCriterion.EQUALIZED_ODDS,
) -> DiscriminationReport:
    """Corrected and naive gaps of an X-only predictor, with the confidence bound."""
    stats = collect_joint_stats(data, predictor, realize_seed, criterion)
    return report_from_stats(stats, mechanism, delta)


def binary_gap_identity(population: FinitePopulation, predictor, mechanism: RRMechanism):
    """Both sides of ``q_y1 - q_y0 = (g_y1 - g_y0)(2pi - 1) P_y1 P_y0 / (Q_y1 Q_y0)``.

    Returns:
        ``(lhs, rhs)``, each of shape (2,) indexed by ``y``; the left side
        comes from exact Z-statistics, the right from exact A-statistics.
    """
    if population.group_count != 2:
        raise NotBinaryGroups("the gap identity holds for two groups only")
    eo = FairnessCriterion.EQUALIZED_ODDS
    q = exact_statistics(population, predictor, eo, "Z", mechanism).rates
    gamma = exact_statistics(population, predictor, eo, "A", mechanism).rates
    P = population.joint_ya()
    Q = population.joint_yz(mechanism)
    lhs = q[:, 1] - q[:, 0]
    factor = (2 * mechanism.pi - 1) * P[:, 1] * P[:, 0] / (Q[:, 1] * Q[:, 0])
    rhs = (gamma[:, 1] - gamma[:, 0]) * factor
    return lhs, rhs


def population_joint_stats(
    population: FinitePopulation,
    predictor,
    mechanism: RRMechanism,
    criterion: FairnessCriterion = FairnessCriterion.EQUALIZED_ODDS,
) -> JointStats:
    """Exact population counterpart of :func:`collect_joint_stats` (no sampling).

    ``n`` is reported as 0 since nothing was drawn.
    """
    if getattr(predictor, "uses_private_group", False):
        raise PredictorUsesZ("cannot audit a predictor that is a function of Z")
    z_stats = exact_statistics(population, predictor, criterion, "Z", mechanism)
    return JointStats(z_stats.conditioning_mass, z_stats.rates, z_stats.conditioning_mass, 0, criterion)
