import json
import math
from pathlib import Path

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from helpers import fair_separable_data, small_private_instance
from privfair.core import PrivatizedDataset
from privfair.errors import ConfigError, EmptyCell, OptimizerDiverged
from privfair.mechanism import make_mechanism
from privfair.reduction import (
    BaseHypothesis,
    LearnerConfig,
    RandomizedClassifier,
    alpha_n_step1,
    alpha_n_private_cells,
    best_mixture,
    best_response,
    build_constraint_matrix,
    cell_frequencies,
    cost_sensitive_costs,
    empirical_error,
    exp_gradient,
    exp_gradient_train,
    group_rates,
    lagrangian,
    step1_bounds,
    saddle_gap,
    training_log_json_lines,
    weighted_cost,
)

GOLDEN = json.loads((Path(__file__).parent / "golden" / "bounds.json").read_text())
FAST = LearnerConfig(steps=150, step_size=0.5)


def test_constraint_matrix_layout_k2():
    cm = build_constraint_matrix(2)
    # columns (0,0), (0,1), (1,0), (1,1); rows (0,1,+), (0,1,-), (1,1,+), (1,1,-)
    expected = np.array([[-1, 1, 0, 0], [1, -1, 0, 0], [0, 0, -1, 1], [0, 0, 1, -1]], dtype=float)
    np.testing.assert_array_equal(cm.M, expected)
    assert cm.row(1, 1, "-") == 3


@pytest.mark.parametrize("k", [2, 3, 5])
def test_constraint_matrix_structure(k):
    cm = build_constraint_matrix(k)
    assert cm.M.shape == (4 * (k - 1), 2 * k)
    np.testing.assert_array_equal(cm.M.sum(axis=1), 0.0)
    # a gamma that is constant across groups within each label has zero statistics
    gamma = np.repeat([0.3, 0.8], k)
    np.testing.assert_allclose(cm.M @ gamma, 0.0)
    gamma = np.zeros(2 * k)
    gamma[k + k - 1] = 0.5
    assert cm.M[cm.row(1, k - 1, "+")] @ gamma == 0.5
    with pytest.raises(ConfigError):
        build_constraint_matrix(1)


def test_group_rates_and_empty_cell():
    r = group_rates([1, 0, 1, 1], [0, 0, 1, 1], [0, 1, 0, 1], 2)
    np.testing.assert_array_equal(r, [1, 0, 1, 1])
    with pytest.raises(EmptyCell):
        group_rates([1, 0], [0, 0], [0, 1], 2)


def _random_instance(rng, n, k):
    X = rng.normal(size=(n, 3))
    y = rng.integers(0, 2, n)
    g = rng.integers(0, k, n)
    y[: 2 * k] = np.repeat([0, 1], k)
    g[: 2 * k] = np.tile(np.arange(k), 2)
    return X, y, g


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 100_000), k=st.integers(2, 4), alpha=st.floats(0, 0.2), masked=st.booleans())
def test_lagrangian_linearity_identity(seed, k, alpha, masked):
    """L(Q, lam) equals the cost-weighted prediction mass minus alpha * |lam|_1."""
    rng = np.random.default_rng(seed)
    n = 60
    X, y, g = _random_instance(rng, n, k)
    mask = None
    if masked:
        mask = np.ones(n, bool)
        mask[2 * k:] = rng.random(n - 2 * k) < 0.6
    hyps = tuple(BaseHypothesis(rng.normal(size=3), float(rng.normal())) for _ in range(4))
    Q = RandomizedClassifier(hyps, rng.dirichlet(np.ones(4)))
    lam = rng.random(4 * (k - 1)) * 5
    p = Q.accept_probability(X)
    M = build_constraint_matrix(k).M
    L = empirical_error(p, y) + lam @ (M @ group_rates(p, y, g, k, mask) - alpha)
    c0, c1 = cost_sensitive_costs(lam, y, g, cell_frequencies(y, g, k, mask=mask, total=n), mask)
    assert L == pytest.approx(np.mean(p * c1 + (1 - p) * c0) - alpha * lam.sum(), abs=1e-10)
    if mask is None:
        data = PrivatizedDataset(X, y, g, k)
        assert lagrangian(Q, lam, data, alpha) == pytest.approx(L, abs=1e-12)


def test_costs_zero_multiplier_and_hand_values():
    y = np.array([0, 0, 1, 1])
    g = np.array([0, 1, 0, 1])
    freq = cell_frequencies(y, g, 2)
    c0, c1 = cost_sensitive_costs(np.zeros(4), y, g, freq)
    np.testing.assert_array_equal(c0, [0, 0, 1, 1])
    np.testing.assert_array_equal(c1, [1, 1, 0, 0])
    # lam(0,1,+) = 1: group 1 with y=0 pays 1/p, the reference group gets 1/p back
    c0, c1 = cost_sensitive_costs(np.array([1.0, 0, 0, 0]), y, g, freq)
    np.testing.assert_allclose(c1, [1 - 4, 1 + 4, 0, 0])


def test_best_response_separable_zero_error():
    rng = np.random.default_rng(0)
    X, y, _ = fair_separable_data(rng, 400)
    c0, c1 = (y != 0).astype(float), (y != 1).astype(float)
    h = best_response(c0, c1, X, LearnerConfig(steps=500, step_size=1.0))
    assert weighted_cost(h, X, c0, c1) == 0


def test_best_response_equal_costs_and_divergence():
    X = np.random.default_rng(1).normal(size=(20, 2))
    c = np.ones(20)
    h = best_response(c, c, X)
    assert weighted_cost(h, X, c, c) == 20
    with pytest.raises(OptimizerDiverged):
        best_response(np.full(20, np.nan), c, X)


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 100_000))
def test_best_response_never_worse_than_constants(seed):
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(50, 2))
    c0, c1 = rng.normal(size=50), rng.normal(size=50)
    h = best_response(c0, c1, X, FAST)
    assert weighted_cost(h, X, c0, c1) <= min(c0.sum(), c1.sum()) + 1e-9


def test_hypothesis_serialization_round_trip():
    rng = np.random.default_rng(2)
    Q = RandomizedClassifier((BaseHypothesis(rng.normal(size=3), 0.2), BaseHypothesis.constant(1, 3)),
                             np.array([0.25, 0.75]))
    back = RandomizedClassifier.from_dict(json.loads(json.dumps(Q.to_dict())))
    X = rng.normal(size=(30, 3))
    np.testing.assert_array_equal(back.accept_probability(X), Q.accept_probability(X))
    with pytest.raises(ValueError):
        RandomizedClassifier(Q.hypotheses, np.array([0.5, 0.6]))


def test_first_multiplier_is_uniform_over_rows():
    data = small_private_instance()
    res = exp_gradient_train(data, B=10.0, eta=0.1, T=3, alpha_n=0.01, learner=FAST)
    K = 4
    np.testing.assert_allclose(res.lambdas[0], np.full(K, 10.0 / (1 + K)))
    assert (res.lambdas.sum(axis=1) < 10.0).all()


def test_lambda_stays_inside_ball_with_large_steps():
    data = small_private_instance(k=3)
    res = exp_gradient_train(data, B=100.0, eta=50.0, T=20, alpha_n=0.0, learner=FAST)
    assert np.isfinite(res.lambdas).all()
    assert (res.lambdas >= 0).all() and (res.lambdas.sum(axis=1) <= 100.0 + 1e-9).all()


def test_log_entries():
    data = small_private_instance()
    res = exp_gradient_train(data, B=10.0, eta=0.1, T=4, alpha_n=0.05, learner=FAST)
    lines = training_log_json_lines(res).splitlines()
    assert len(lines) == 4
    entry = json.loads(lines[-1])
    assert set(entry) == {"t", "lagrangian", "err", "max_violation", "lambda_l1"}
    assert entry["t"] == 4


def test_fair_separable_data_gives_zero_error_and_violation():
    rng = np.random.default_rng(4)
    X, y, g = fair_separable_data(rng, 600)
    res = exp_gradient(X, y, g, 2, B=100.0, eta=2.0, T=10, alpha=0.0, learner=LearnerConfig(500, 1.0))
    p = res.classifier.accept_probability(X)
    assert empirical_error(p, y) == 0.0
    M = build_constraint_matrix(2).M
    assert (M @ group_rates(p, y, g, 2) <= 1e-12).all()


@pytest.mark.parametrize("mixture", ["uniform", "lp"])
def test_saddle_gap_small_and_shrinking(mixture):
    data = small_private_instance(n=400)
    args = (data.features, data.labels, data.private_groups, 2)
    gaps = []
    for T in (5, 80):
        res = exp_gradient(*args, B=5.0, eta=0.5, T=T, alpha=0.02, learner=FAST, mixture=mixture)
        gaps.append(saddle_gap(res, *args, learner=FAST))
    assert gaps[1] <= gaps[0] + 1e-9
    if mixture == "uniform":
        assert gaps[1] < 0.1


def test_best_mixture_respects_constraints_when_feasible():
    errors = np.array([0.1, 0.3, 0.2])
    viol = np.array([[0.2, -0.1, 0.0], [-0.2, 0.1, 0.0]])
    w = best_mixture(errors, viol, 0.0, 100.0)
    assert w.sum() == pytest.approx(1.0)
    assert (viol @ w <= 1e-9).all()
    # hypothesis 2 and the even mix of 0 and 1 are both fair at error 0.2
    assert errors @ w == pytest.approx(0.2)


def test_config_errors():
    data = small_private_instance()
    with pytest.raises(ConfigError):
        exp_gradient_train(data, T=0)
    with pytest.raises(ConfigError):
        exp_gradient_train(data, mixture="other")


def test_alpha_n_golden_and_scaling():
    gold = GOLDEN["alpha_n_step1"]
    prm = gold["params"]
    assert alpha_n_step1(prm["n"], prm["delta"], prm["min_cell"], prm["k"]) == pytest.approx(gold["value"], rel=1e-12)
    a1 = alpha_n_step1(1000, 0.1, 0.1)
    assert alpha_n_step1(4000, 0.1, 0.1) == pytest.approx(a1 / 2)
    assert alpha_n_private_cells(1000, 0.1, 0.2) == pytest.approx(math.sqrt(8 * math.log(640) / 200))
    with pytest.raises(ConfigError):
        alpha_n_step1(0, 0.1, 0.1)


def test_step1_bounds_formula():
    mech = make_mechanism(1.0, 2)
    C = mech.privacy_constant
    err, disc = step1_bounds(10_000, 0.1, 100.0, 0.0, 0.1, mech)
    assert err == pytest.approx(4 * math.sqrt(math.log(80) / 10_000))
    assert disc == pytest.approx(5 * C / 0.01 * (0.02 + 10 * math.sqrt(2 * math.log(1280) / 1000)))
