"""Shared generators and brute-force oracles for the test suite."""
import itertools

import numpy as np

from privfair.core import FairnessCriterion, FinitePopulation, FunctionPredictor, PrivatizedDataset


def random_population(rng, k=2, atoms=24, dim=3, group_in_features=True):
    """Finite population covering every (y, a) cell, with random masses.

    The first feature column holds ``a`` when ``group_in_features`` so that
    X-only predictors can still depend on the group through X.
    """
    cells = list(itertools.product(range(2), range(k)))
    y = np.array([c[0] for c in cells] + list(rng.integers(0, 2, atoms - len(cells))))
    a = np.array([c[1] for c in cells] + list(rng.integers(0, k, atoms - len(cells))))
    X = rng.normal(size=(atoms, dim))
    if group_in_features:
        X[:, 0] = a
    masses = rng.dirichlet(np.ones(atoms))
    masses = np.maximum(masses, 1e-3)
    masses /= masses.sum()
    return FinitePopulation(X, y, a, masses, k)


def random_x_predictor(rng, dim=3, hard=False):
    w = rng.normal(size=dim) * 2
    b = rng.normal()
    if hard:
        return FunctionPredictor(lambda X: (X @ w + b >= 0).astype(float))
    return FunctionPredictor(lambda X: 1.0 / (1.0 + np.exp(-(X @ w + b))))


def brute_force_rates(pop, predictor, mechanism=None, wrt="A", criterion=FairnessCriterion.EQUALIZED_ODDS):
    """Group-conditional rates by explicit enumeration over atoms, z and yhat."""
    k = pop.group_count
    strata = criterion.strata()
    num = np.zeros((len(strata), k))
    den = np.zeros((len(strata), k))
    uses_z = getattr(predictor, "uses_private_group", False)
    for i in range(len(pop)):
        x = pop.features[i:i + 1]
        y, a, m = int(pop.labels[i]), int(pop.groups[i]), float(pop.masses[i])
        zs = range(k) if (wrt == "Z" or uses_z) else [None]
        for z in zs:
            pz = 1.0 if z is None else float(mechanism.matrix[z, a])
            p1 = float(predictor.accept_probability(x, np.array([z]))[0] if uses_z else predictor.accept_probability(x)[0])
            g = a if wrt == "A" else z
            for yhat, py in ((1, p1), (0, 1.0 - p1)):
                yy, yh = np.array([y]), np.array([yhat])
                for s, (_, e1, e2) in enumerate(strata):
                    if e2(yy, yh)[0]:
                        den[s, g] += m * pz * py
                        if e1(yy, yh)[0]:
                            num[s, g] += m * pz * py
    return num / den


def fair_separable_data(rng, n, k=2, margin=0.5):
    """Labels are a margin-separated linear function of features independent of the group."""
    X = rng.normal(size=(n, 2))
    X[:, 0] = np.where(X[:, 0] >= 0, X[:, 0] + margin, X[:, 0] - margin)
    y = (X[:, 0] > 0).astype(int)
    a = rng.integers(0, k, n)
    return X, y, a


def small_private_instance(seed=0, n=500, k=2):
    """Fixed synthetic instance with a group-dependent label rate."""
    rng = np.random.default_rng(seed)
    a = rng.integers(0, k, n)
    X = rng.normal(size=(n, 3))
    X[:, 1] += 0.8 * a
    y = (X[:, 0] + 0.7 * X[:, 1] + 0.5 * rng.normal(size=n) > 0.3).astype(int)
    return PrivatizedDataset(X, y, a, k)


# acceptance results, printed by the terminal-summary hook in conftest.py
ACCEPTANCE = {}


class criterion:
    """Context manager recording a PASS/FAIL line for acceptance criterion ``number``."""

    def __init__(self, number, title):
        self.number, self.title, self.details = number, title, []

    def note(self, text):
        self.details.append(text)

    def __enter__(self):
        return self

    def __exit__(self, exc_type, exc, tb):
        status = "PASS" if exc_type is None else "FAIL"
        detail = "; ".join(self.details)
        if exc is not None:
            detail = (detail + "; " if detail else "") + f"{exc_type.__name__}: {str(exc).splitlines()[0] if str(exc) else ''}"
        ACCEPTANCE[self.number] = f"criterion {self.number:>2} {status}  {self.title}  [{detail}]"
        return False
