"""Shared domain types and the exact population oracle.

Datasets are stored column-wise (one feature matrix plus label and group
vectors) so that every estimator can work on numpy arrays directly. The
single-record types exist for construction from, and iteration over,
individual examples.

Group labels are dense integers ``0..k-1``; group 0 is the reference group
for every gap.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import Callable, Iterable, Iterator, NamedTuple, Protocol, runtime_checkable

import numpy as np

from privfair.errors import ConfigError, GroupOutOfRange, ZeroMassCell

MASS_TOL = 1e-12


class LabeledExample(NamedTuple):
    features: np.ndarray
    label: int
    group: int


class PrivatizedExample(NamedTuple):
    features: np.ndarray
    label: int
    private_group: int


def _check_columns(features, labels, groups, group_count, name):
    features = np.atleast_2d(np.asarray(features, dtype=float))
    labels = np.asarray(labels, dtype=np.int64).ravel()
    groups = np.asarray(groups, dtype=np.int64).ravel()
    n = features.shape[0]
    if labels.shape[0] != n or groups.shape[0] != n:
        raise ValueError("features, labels and groups must have the same length")
    if n and not np.isin(labels, (0, 1)).all():
        raise ValueError("labels must be 0 or 1")
    if group_count < 2:
        raise ConfigError("group_count must be at least 2")
    if n and (groups.min() < 0 or groups.max() >= group_count):
        raise GroupOutOfRange(f"{name} outside [0, {group_count})")
    for arr in (features, labels, groups):
        arr.setflags(write=False)
    return features, labels, groups


@dataclass(frozen=True)
class LabeledDataset:
    """Records ``(x, y, a)`` carrying the true protected attribute."""

    features: np.ndarray
    labels: np.ndarray
    groups: np.ndarray
    group_count: int

    def __post_init__(self):
        f, y, a = _check_columns(self.features, self.labels, self.groups, self.group_count, "groups")
        object.__setattr__(self, "features", f)
        object.__setattr__(self, "labels", y)
        object.__setattr__(self, "groups", a)

    def __len__(self):
        return self.labels.shape[0]

    def __iter__(self) -> Iterator[LabeledExample]:
        for x, y, a in zip(self.features, self.labels, self.groups):
            yield LabeledExample(x, int(y), int(a))

    @classmethod
    def from_records(cls, records: Iterable[LabeledExample], group_count: int) -> "LabeledDataset":
        records = list(records)
        if not records:
            raise ValueError("no records")
        return cls(
            np.array([r.features for r in records], dtype=float),
            np.array([r.label for r in records]),
            np.array([r.group for r in records]),
            group_count,
        )

    def subset(self, index) -> "LabeledDataset":
        return LabeledDataset(self.features[index], self.labels[index], self.groups[index], self.group_count)


@dataclass(frozen=True)
class PrivatizedDataset:
    """Records ``(x, y, z)`` where ``z`` is the randomized-response output."""

    features: np.ndarray
    labels: np.ndarray
    private_groups: np.ndarray
    group_count: int

    def __post_init__(self):
        f, y, z = _check_columns(
            self.features, self.labels, self.private_groups, self.group_count, "private groups"
        )
        object.__setattr__(self, "features", f)
        object.__setattr__(self, "labels", y)
        object.__setattr__(self, "private_groups", z)

    def __len__(self):
        return self.labels.shape[0]

    def __iter__(self) -> Iterator[PrivatizedExample]:
        for x, y, z in zip(self.features, self.labels, self.private_groups):
            yield PrivatizedExample(x, int(y), int(z))

    @classmethod
    def from_records(cls, records: Iterable[PrivatizedExample], group_count: int) -> "PrivatizedDataset":
        records = list(records)
        if not records:
            raise ValueError("no records")
        return cls(
            np.array([r.features for r in records], dtype=float),
            np.array([r.label for r in records]),
            np.array([r.private_group for r in records]),
            group_count,
        )

    def subset(self, index) -> "PrivatizedDataset":
        return PrivatizedDataset(
            self.features[index], self.labels[index], self.private_groups[index], self.group_count
        )


@runtime_checkable
class Predictor(Protocol):
    """Anything mapping feature rows to acceptance probabilities in [0, 1].

    Predictors that read the privatized attribute set ``uses_private_group``
    and accept it as the second argument; all other predictors ignore it.
    """

    uses_private_group: bool

    def accept_probability(self, features: np.ndarray, private_group: np.ndarray | None = None) -> np.ndarray:
        ...


class FunctionPredictor:
    """Wraps a plain vectorized function as a :class:`Predictor`."""

    def __init__(self, fn: Callable, uses_private_group: bool = False):
        self.fn = fn
        self.uses_private_group = uses_private_group

    def accept_probability(self, features, private_group=None):
        features = np.atleast_2d(np.asarray(features, dtype=float))
        if self.uses_private_group:
            if private_group is None:
                raise ValueError("this predictor needs the private group")
            out = self.fn(features, np.asarray(private_group))
        else:
            out = self.fn(features)
        out = np.broadcast_to(np.asarray(out, dtype=float), (features.shape[0],))
        return np.clip(out, 0.0, 1.0)


def constant_predictor(value: float) -> FunctionPredictor:
    return FunctionPredictor(lambda X: np.full(X.shape[0], float(value)))


# Each stratum is (E1, E2) as indicator functions of (y, yhat) arrays.
_Event = Callable[[np.ndarray, np.ndarray], np.ndarray]


def _always(y, yhat):
    return np.ones_like(y, dtype=bool)


class FairnessCriterion(enum.Enum):
    EQUALIZED_ODDS = "eo"
    DEMOGRAPHIC_PARITY = "dp"
    ACCURACY_PARITY = "ap"
    FALSE_DISCOVERY_PARITY = "fdr"
    FALSE_OMISSION_PARITY = "for"

    def strata(self) -> list[tuple[str, _Event, _Event]]:
        """The (E1, E2) event pairs whose conditional rates must match across groups."""
        positive = lambda y, yh: yh == 1  # noqa: E731
        wrong = lambda y, yh: yh != y  # noqa: E731
        if self is FairnessCriterion.EQUALIZED_ODDS:
            return [
                ("y=0", positive, lambda y, yh: y == 0),
                ("y=1", positive, lambda y, yh: y == 1),
            ]
        if self is FairnessCriterion.DEMOGRAPHIC_PARITY:
            return [("all", positive, _always)]
        if self is FairnessCriterion.ACCURACY_PARITY:
            return [("all", wrong, _always)]
        if self is FairnessCriterion.FALSE_DISCOVERY_PARITY:
            return [("yhat=1", wrong, lambda y, yh: yh == 1)]
        return [("yhat=0", wrong, lambda y, yh: yh == 0)]


@dataclass(frozen=True)
class FinitePopulation:
    """A finite distribution over atoms ``(x, y, a)`` with probability masses."""

    features: np.ndarray
    labels: np.ndarray
    groups: np.ndarray
    masses: np.ndarray
    group_count: int

    def __post_init__(self):
        f, y, a = _check_columns(self.features, self.labels, self.groups, self.group_count, "groups")
        m = np.asarray(self.masses, dtype=float).ravel()
        if m.shape[0] != y.shape[0]:
            raise ValueError("one mass per atom required")
        if (m < 0).any() or abs(m.sum() - 1.0) > MASS_TOL:
            raise ValueError("masses must be nonnegative and sum to 1")
        m.setflags(write=False)
        object.__setattr__(self, "features", f)
        object.__setattr__(self, "labels", y)
        object.__setattr__(self, "groups", a)
        object.__setattr__(self, "masses", m)

    def __len__(self):
        return self.labels.shape[0]

    def joint_ya(self) -> np.ndarray:
        """``P[y, a] = P(Y=y, A=a)`` as a (2, k) array."""
        out = np.zeros((2, self.group_count))
        np.add.at(out, (self.labels, self.groups), self.masses)
        return out

    def joint_yz(self, mechanism) -> np.ndarray:
        """``Q[y, z] = P(Y=y, Z=z)`` by exact channel marginalization."""
        return self.joint_ya() @ mechanism.matrix.T

    def z_expansion(self, mechanism):
        """Atoms crossed with every private value: (atom index, z, mass * Q(z|a))."""
        k = self.group_count
        atom = np.repeat(np.arange(len(self)), k)
        z = np.tile(np.arange(k), len(self))
        weight = self.masses[atom] * mechanism.matrix[z, self.groups[atom]]
        return atom, z, weight


@dataclass(frozen=True)
class GroupStatistics:
    """Conditional rates ``P(E1 | E2, G=g)`` per stratum and group."""

    criterion: FairnessCriterion
    wrt: str
    strata: tuple[str, ...]
    rates: np.ndarray
    conditioning_mass: np.ndarray

    @property
    def gaps(self) -> np.ndarray:
        return np.abs(self.rates - self.rates[:, :1])

    @property
    def max_gap(self) -> float:
        return float(self.gaps.max())


def exact_statistics(
    population: FinitePopulation,
    predictor: Predictor,
    criterion: FairnessCriterion = FairnessCriterion.EQUALIZED_ODDS,
    wrt: str = "A",
    mechanism=None,
) -> GroupStatistics:
    """Exact group-conditional rates of ``predictor`` on a finite population.

    With ``wrt="Z"`` the private attribute is marginalized exactly through
    ``mechanism``; nothing is sampled. Randomized predictors enter through
    their acceptance probabilities, so events on the prediction are exact
    expectations.

    Raises:
        ZeroMassCell: some conditioning event ``{E2, G=g}`` has probability 0.
    """
    if wrt not in ("A", "Z"):
        raise ValueError("wrt must be 'A' or 'Z'")
    uses_z = getattr(predictor, "uses_private_group", False)
    if (wrt == "Z" or uses_z) and mechanism is None:
        raise ValueError("a mechanism is required for Z statistics or Z-using predictors")
    k = population.group_count
    if wrt == "Z" or uses_z:
        atom, z, weight = population.z_expansion(mechanism)
        X = population.features[atom]
        y = population.labels[atom]
        a = population.groups[atom]
        p1 = predictor.accept_probability(X, z) if uses_z else predictor.accept_probability(X)
        g = z if wrt == "Z" else a
    else:
        X, y, weight, g = population.features, population.labels, population.masses, population.groups
        p1 = predictor.accept_probability(X)
    ones, zeros = np.ones_like(y), np.zeros_like(y)

    strata = criterion.strata()
    rates = np.empty((len(strata), k))
    mass = np.empty((len(strata), k))
    for s, (_, e1, e2) in enumerate(strata):
        # P(E1, E2 | atom) and P(E2 | atom), averaging over the prediction
        both = p1 * (e1(y, ones) & e2(y, ones)) + (1 - p1) * (e1(y, zeros) & e2(y, zeros))
        cond = p1 * e2(y, ones) + (1 - p1) * e2(y, zeros)
        num = np.bincount(g, weights=weight * both, minlength=k)
        den = np.bincount(g, weights=weight * cond, minlength=k)
        if (den <= 0).any():
            bad = int(np.argmin(den))
            raise ZeroMassCell(f"stratum {strata[s][0]}, {wrt}={bad} has zero mass")
        rates[s] = num / den
        mass[s] = den
    return GroupStatistics(criterion, wrt, tuple(s[0] for s in strata), rates, mass)


def sample_dataset(population: FinitePopulation, n: int, seed: int) -> LabeledDataset:
    """Draw ``n`` i.i.d. records from the atom masses."""
    if n < 1:
        raise ValueError("n must be at least 1")
    rng = np.random.default_rng(seed)
    idx = rng.choice(len(population), size=n, p=population.masses)
    return LabeledDataset(
        population.features[idx], population.labels[idx], population.groups[idx], population.group_count
    )
