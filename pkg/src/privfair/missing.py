"""Partially reported protected attributes.

Each individual discloses ``a`` with a probability ``t(x, y, a)``. Training
uses every record for the error term and only the disclosed ones for the
fairness statistics. When nobody discloses, a probabilistic proxy
``P(A | X, Y)`` can stand in for the attribute in rate estimates.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from privfair.core import FairnessCriterion, FinitePopulation, LabeledDataset, exact_statistics
from privfair.errors import ConfigError, DataError, MissingColumn, UnparseableRow, ZeroDenominator
from privfair.mechanism import record_uniforms
from privfair.reduction import LearnerConfig, TrainingResult, exp_gradient, saddle_gap

REPORT_STREAM = 0x5254
PROXY_TOL = 1e-12


@dataclass(frozen=True)
class ReportingFunction:
    """Disclosure probability ``t(x, y, a)`` in (0, 1], vectorized over records."""

    fn: Callable
    depends_on: frozenset = frozenset({"X", "Y", "A"})

    def __call__(self, features, labels, groups) -> np.ndarray:
        features = np.atleast_2d(np.asarray(features, dtype=float))
        out = np.broadcast_to(np.asarray(self.fn(features, np.asarray(labels), np.asarray(groups)), dtype=float),
                              (features.shape[0],))
        if (out <= 0).any() or (out > 1).any() or not np.isfinite(out).all():
            raise ConfigError("reporting probabilities must lie in (0, 1]")
        return out

    @classmethod
    def constant(cls, value: float) -> "ReportingFunction":
        return cls(lambda X, y, a: np.full(X.shape[0], float(value)), frozenset())


@dataclass(frozen=True)
class SplitDataset:
    labeled: LabeledDataset
    unlabeled_features: np.ndarray
    unlabeled_labels: np.ndarray
    labeled_index: np.ndarray
    unlabeled_index: np.ndarray

    @property
    def n(self) -> int:
        return len(self.labeled) + self.unlabeled_labels.shape[0]

    @property
    def beta_hat(self) -> float:
        return len(self.labeled) / self.n

    def combined(self):
        """Arrays over ``S_l`` followed by ``S_u``, the mask of labeled rows and a filled group column."""
        X = np.vstack([self.labeled.features, self.unlabeled_features])
        y = np.concatenate([self.labeled.labels, self.unlabeled_labels])
        groups = np.concatenate([self.labeled.groups, np.zeros(self.unlabeled_labels.shape[0], dtype=np.int64)])
        mask = np.zeros(y.shape[0], dtype=bool)
        mask[: len(self.labeled)] = True
        return X, y, groups, mask


def split_by_reporting(dataset: LabeledDataset, t: ReportingFunction, seed: int) -> SplitDataset:
    """Independent Bernoulli(t_i) disclosure per record; undisclosed rows lose their group."""
    prob = t(dataset.features, dataset.labels, dataset.groups)
    u = record_uniforms(seed, REPORT_STREAM, 0, len(dataset))
    reported = u < prob
    li = np.flatnonzero(reported)
    ui = np.flatnonzero(~reported)
    return SplitDataset(
        dataset.subset(li),
        dataset.features[ui],
        dataset.labels[ui],
        li,
        ui,
    )


def two_dataset_train(
    split: SplitDataset,
    B: float = 100.0,
    eta: float = 2.0,
    T: int = 50,
    alpha_n: float = 0.0,
    learner: LearnerConfig = LearnerConfig(),
) -> TrainingResult:
    """Reduction with error over all of ``S`` and constraints over ``S_l`` only.

    Raises:
        EmptyCell: some ``(y, a)`` cell of ``S_l`` is empty.
    """
    X, y, groups, mask = split.combined()
    return exp_gradient(X, y, groups, split.labeled.group_count, B, eta, T, alpha_n, learner, labeled=mask)


def two_dataset_saddle_gap(result: TrainingResult, split: SplitDataset, learner: LearnerConfig = LearnerConfig()) -> float:
    X, y, groups, mask = split.combined()
    return saddle_gap(result, X, y, groups, split.labeled.group_count, learner, labeled=mask)


def check_reporting_independence(
    population: FinitePopulation,
    t: ReportingFunction,
    predictor,
    criterion: FairnessCriterion = FairnessCriterion.EQUALIZED_ODDS,
    tol: float = 1e-10,
) -> tuple[bool, float]:
    """Compare ``P(E1 | E2, A=a, T=1)`` with ``P(E1 | E2, A=a)`` exactly.

    Conditioning on disclosure is a reweighting of the atoms by ``t``.

    Returns:
        ``(independent, residual)`` with the max absolute difference.

    Raises:
        ZeroMassCell: a conditioning event has zero mass.
    """
    if getattr(predictor, "uses_private_group", False):
        raise ConfigError("the independence check is for predictors of X only")
    prob = t(population.features, population.labels, population.groups)
    w = population.masses * prob
    reported = FinitePopulation(population.features, population.labels, population.groups, w / w.sum(),
                                population.group_count)
    full = exact_statistics(population, predictor, criterion, "A")
    cond = exact_statistics(reported, predictor, criterion, "A")
    residual = float(np.abs(cond.rates - full.rates).max())
    return residual <= tol, residual


@dataclass(frozen=True)
class ProbabilisticProxy:
    """Per-record distributions ``P(A = a | x_i, y_i)``, one row per record."""

    probabilities: np.ndarray

    def __post_init__(self):
        p = np.atleast_2d(np.asarray(self.probabilities, dtype=float))
        if p.shape[1] < 2:
            raise DataError("a proxy needs at least two group columns")
        if (p < 0).any() or (np.abs(p.sum(axis=1) - 1.0) > PROXY_TOL).any():
            bad = int(np.flatnonzero((p < 0).any(axis=1) | (np.abs(p.sum(axis=1) - 1.0) > PROXY_TOL))[0])
            raise UnparseableRow(bad, "proxy row is not a probability vector")
        p.setflags(write=False)
        object.__setattr__(self, "probabilities", p)

    @property
    def group_count(self) -> int:
        return self.probabilities.shape[1]

    @classmethod
    def from_csv(cls, path) -> "ProbabilisticProxy":
        """Read ``row_index, p_a0, p_a1, ...``; rows may come in any order but must cover 0..n-1."""
        with open(path, newline="") as fh:
            reader = csv.reader(fh)
            header = [h.strip() for h in next(reader, [])]
            if "row_index" not in header:
                raise MissingColumn("proxy file lacks a row_index column")
            cols = sorted((h for h in header if h.startswith("p_a")), key=lambda h: int(h[3:]))
            if not cols or [int(h[3:]) for h in cols] != list(range(len(cols))):
                raise MissingColumn("proxy file needs columns p_a0, p_a1, ...")
            pos = [header.index(h) for h in cols]
            ri = header.index("row_index")
            rows = {}
            for line, rec in enumerate(reader):
                try:
                    idx = int(rec[ri])
                    rows[idx] = [float(rec[j]) for j in pos]
                except (ValueError, IndexError) as exc:
                    raise UnparseableRow(line, str(exc)) from None
        if sorted(rows) != list(range(len(rows))):
            raise DataError("row_index values must be exactly 0..n-1")
        return cls(np.array([rows[i] for i in range(len(rows))]))


def proxy_gamma(labels, predictions, proxy: ProbabilisticProxy) -> np.ndarray:
    """``sum_i yhat_i 1(y_i=y) P(a|x_i,y_i) / sum_i 1(y_i=y) P(a|x_i,y_i)`` per ``(y, a)``.

    ``predictions`` may be hard labels or acceptance probabilities.

    Raises:
        ZeroDenominator: a ``(y, a)`` weight mass is zero.
    """
    y = np.asarray(labels)
    yhat = np.asarray(predictions, dtype=float)
    P = proxy.probabilities
    if P.shape[0] != y.shape[0] or yhat.shape[0] != y.shape[0]:
        raise ValueError("labels, predictions and proxy rows must align")
    out = np.empty((2, proxy.group_count))
    for label in (0, 1):
        sel = y == label
        den = P[sel].sum(axis=0)
        num = yhat[sel] @ P[sel]
        for a in range(proxy.group_count):
            if den[a] <= 0:
                raise ZeroDenominator(label, a)
        out[label] = num / den
    return out


def lemma3_bounds(n, n_labeled, delta, B, rademacher, min_cell, group_count=2):
    """Guarantees with partially reported groups: (excess error, discrimination)."""
    if min(n, n_labeled, delta, B, min_cell) <= 0:
        raise ConfigError("lemma3_bounds needs positive inputs")
    err = 4 * rademacher + 4 * math.sqrt(math.log(4 / delta) / n)
    disc = 2 / B + 6 * rademacher + 10 * math.sqrt(2 * math.log(32 * group_count / delta) / (n_labeled * min_cell))
    return err, disc
