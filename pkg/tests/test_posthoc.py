import json
import math
from pathlib import Path

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

import privfair.posthoc as posthoc
from helpers import fair_separable_data, random_population, random_x_predictor, small_private_instance
from privfair.audit import population_joint_stats
from privfair.core import FairnessCriterion, FunctionPredictor, PrivatizedDataset, constant_predictor, exact_statistics
from privfair.errors import ConfigError, Infeasible, PredictorUsesZ
from privfair.mechanism import make_mechanism, randomize_groups
from privfair.posthoc import (
    BaseRates,
    DerivedPredictor,
    TwoStepConfig,
    alpha_tilde_n,
    base_rates_from_stats,
    build_lp,
    build_naive_lp,
    derived_gamma,
    estimate_base_rates,
    mixing_matrix,
    population_base_rates,
    solve_lp,
    solve_with_fallback,
    split_indices,
    two_step_bounds,
    two_step_train,
)
from privfair.reduction import BaseHypothesis, LearnerConfig, RandomizedClassifier

GOLDEN = json.loads((Path(__file__).parent / "golden" / "bounds.json").read_text())
EO = FairnessCriterion.EQUALIZED_ODDS


def population_error(pop, predictor, mech):
    """P(prediction != Y) by enumeration over atoms and private values."""
    atom, z, w = pop.z_expansion(mech)
    p = predictor.accept_probability(pop.features[atom], z)
    y = pop.labels[atom]
    return float(np.sum(w * np.where(y == 1, 1 - p, p)))


def _solved(pop, base, mech, alpha=0.0):
    rates = population_base_rates(pop, base, mech)
    table, est = solve_lp(build_lp(rates, mech, alpha))
    return rates, table, est, DerivedPredictor(base, table, mech.epsilon)


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 100_000), k=st.integers(2, 4), eps=st.floats(0.3, 5.0))
def test_population_base_rates_exact(seed, k, eps):
    rng = np.random.default_rng(seed)
    pop = random_population(rng, k=k)
    base = random_x_predictor(rng)
    mech = make_mechanism(eps, k)
    rates = population_base_rates(pop, base, mech)
    np.testing.assert_allclose(rates.rates, exact_statistics(pop, base).rates, atol=1e-10)
    P = pop.joint_ya()
    np.testing.assert_allclose(rates.joint[1], rates.rates * P, atol=1e-10)
    np.testing.assert_allclose(rates.joint.sum(axis=0), P, atol=1e-10)


def test_lp_shape_and_box_rows():
    for k in (2, 3):
        rates = BaseRates(np.full((2, k), 0.5), np.full((2, 2, k), 1 / (4 * k)))
        lp = build_lp(rates, make_mechanism(1.0, k), 0.01)
        assert lp.c.shape == (2 * k,)
        assert lp.A_fair.shape == (4 * (k - 1), 2 * k)
        A, b = lp.box_rows
        assert A.shape == (4 * k, 2 * k) and b.shape == (4 * k,)
    with pytest.raises(ConfigError):
        build_lp(rates, make_mechanism(1.0, 3), -0.1)


def test_mixing_is_identity_without_noise():
    np.testing.assert_allclose(mixing_matrix(make_mechanism(60.0, 3)), np.eye(6), atol=1e-12)


def test_identity_table_reproduces_base_rates():
    rng = np.random.default_rng(0)
    rates = rng.random((2, 3))
    table = np.array([[0.0] * 3, [1.0] * 3])
    np.testing.assert_allclose(derived_gamma(table, rates, make_mechanism(0.7, 3)), rates, atol=1e-15)


@pytest.mark.parametrize("k", [2, 3])
def test_mixture_consistency(k):
    """With a constant base prediction the acceptance rate given A is the mixed table entry."""
    rng = np.random.default_rng(k)
    pop = random_population(rng, k=k)
    mech = make_mechanism(0.9, k)
    table = rng.random((2, k))
    mixed = table @ mech.matrix
    for yhat in (0, 1):
        pred = DerivedPredictor(FunctionPredictor(lambda X, v=yhat: np.full(X.shape[0], float(v))), table, 0.9)
        got = exact_statistics(pop, pred, FairnessCriterion.DEMOGRAPHIC_PARITY, "A", mech).rates[0]
        np.testing.assert_allclose(got, mixed[yhat], atol=1e-12)


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 100_000), k=st.integers(2, 4), eps=st.floats(0.3, 5.0))
def test_population_solution_is_fair_and_error_matches(seed, k, eps):
    rng = np.random.default_rng(seed)
    pop = random_population(rng, k=k)
    base = random_x_predictor(rng)
    mech = make_mechanism(eps, k)
    rates, table, est, derived = _solved(pop, base, mech)
    stats = exact_statistics(pop, derived, EO, "A", mech)
    assert stats.max_gap <= 1e-9
    np.testing.assert_allclose(derived_gamma(table, rates.rates, mech), stats.rates, atol=1e-10)
    assert est == pytest.approx(population_error(pop, derived, mech), abs=1e-10)


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 100_000), eps=st.floats(0.3, 5.0))
def test_fair_optimum_not_worse_than_base_plus_gap(seed, eps):
    """err(derived) <= err(base) + disc(base): equalizing toward group 0 costs at most the gaps."""
    rng = np.random.default_rng(seed)
    pop = random_population(rng, k=2)
    base = random_x_predictor(rng)
    mech = make_mechanism(eps, 2)
    _, _, est, _ = _solved(pop, base, mech)
    err_base = population_error(pop, FunctionPredictor(lambda X, z: base.accept_probability(X), True), mech)
    assert est <= err_base + exact_statistics(pop, base).max_gap + 1e-9


def test_naive_program_fails_where_corrected_one_holds():
    rng = np.random.default_rng(2024)
    worst = 0.0
    for _ in range(40):
        pop = random_population(rng, k=2)
        base = random_x_predictor(rng)
        mech = make_mechanism(0.5, 2)
        naive_rates = population_base_rates(pop, base, None, naive_mechanism=mech)
        table, _ = solve_lp(build_naive_lp(naive_rates, 0.0))
        naive_gap = exact_statistics(pop, DerivedPredictor(base, table, 0.5), EO, "A", mech).max_gap
        _, _, _, derived = _solved(pop, base, mech)
        assert exact_statistics(pop, derived, EO, "A", mech).max_gap <= 1e-9
        worst = max(worst, naive_gap)
    assert worst >= 0.02


def test_programs_match_reference_solver():
    """Near-degenerate fairness programs (equal slack rows, mixing close to the identity)."""
    from scipy.optimize import linprog
    from privfair.lp import kkt_residuals

    for seed in range(250):
        rng = np.random.default_rng(seed)
        k = int(rng.integers(2, 6))
        pop = random_population(rng, k=k)
        mech = make_mechanism(float(rng.choice([0.1, 0.5, 2.0, 5.0, 12.0])), k)
        lp = build_lp(population_base_rates(pop, random_x_predictor(rng), mech), mech, float(rng.choice([0.0, 0.01])))
        J = 2 * k
        A = np.vstack([lp.A_fair, np.eye(J)])
        b = np.concatenate([lp.b_fair, np.ones(J)])
        ref = linprog(lp.c, A_ub=A, b_ub=b, bounds=(0, None), method="highs")
        res = lp.solve()
        assert res.objective == pytest.approx(ref.fun, abs=1e-8)
        assert max(kkt_residuals(res, lp.c, A, b).values()) < 1e-8


def test_unconstrained_program_uses_sign_rule():
    rng = np.random.default_rng(7)
    pop = random_population(rng, k=3)
    base = random_x_predictor(rng)
    mech = make_mechanism(1.2, 3)
    rates = population_base_rates(pop, base, mech)
    table, _ = solve_lp(build_lp(rates, mech, 1e6))
    atom, z, w = pop.z_expansion(mech)
    p1 = base.accept_probability(pop.features[atom])
    y = pop.labels[atom]
    for yhat, pw in ((0, 1 - p1), (1, p1)):
        for zz in range(3):
            sel = z == zz
            pos = np.sum((w * pw)[sel & (y == 1)])
            neg = np.sum((w * pw)[sel & (y == 0)])
            if abs(pos - neg) > 1e-9:
                assert table[yhat, zz] == float(pos > neg)


def test_accurate_fair_base_keeps_identity_table():
    rng = np.random.default_rng(3)
    X, y, a = fair_separable_data(rng, 50)
    from privfair.core import FinitePopulation
    pop = FinitePopulation(X, y, a, np.full(50, 1 / 50), 2)
    base = FunctionPredictor(lambda X: (X[:, 0] > 0).astype(float))
    _, table, est, _ = _solved(pop, base, make_mechanism(1.0, 2))
    np.testing.assert_allclose(table, [[0, 0], [1, 1]], atol=1e-9)
    assert est == pytest.approx(0.0, abs=1e-10)


def test_fallback_doubles_slack(monkeypatch):
    rates = BaseRates(np.full((2, 2), 0.5), np.full((2, 2, 2), 0.125))
    mech = make_mechanism(1.0, 2)
    real = posthoc.solve_lp
    calls = {"n": 0}

    def flaky(lp):
        calls["n"] += 1
        if calls["n"] <= 2:
            raise Infeasible("forced")
        return real(lp)

    monkeypatch.setattr(posthoc, "solve_lp", flaky)
    _, _, alpha, status = solve_with_fallback(rates, mech, 0.0)
    assert status == "optimal_inflated_x4" and alpha == pytest.approx(4e-6)
    calls["n"] = -100
    with pytest.raises(Infeasible):
        solve_with_fallback(rates, mech, 0.0, max_doublings=3)


def test_derived_predictor_behaviour_and_round_trip():
    rng = np.random.default_rng(5)
    base = RandomizedClassifier((BaseHypothesis(rng.normal(size=2), 0.1), BaseHypothesis.constant(1, 2)),
                                np.array([0.6, 0.4]))
    pred = DerivedPredictor(base, [[0.1, 0.3], [0.9, 0.7]], 1.5)
    X = rng.normal(size=(40_000, 2))
    z = rng.integers(0, 2, 40_000)
    draws = pred.predict(X, z, seed=9)
    np.testing.assert_array_equal(draws, pred.predict(X, z, seed=9))
    assert abs(draws.mean() - pred.accept_probability(X, z).mean()) < 0.01
    back = DerivedPredictor.from_dict(json.loads(json.dumps(pred.to_dict())))
    np.testing.assert_array_equal(back.accept_probability(X, z), pred.accept_probability(X, z))
    assert back.epsilon == 1.5
    with pytest.raises(ValueError):
        DerivedPredictor(base, [[1.2, 0.0], [0.0, 0.0]], 1.0)
    with pytest.raises(ValueError):
        pred.accept_probability(X)


def test_estimate_base_rates_rejects_z_predictors():
    data = small_private_instance()
    with pytest.raises(PredictorUsesZ):
        estimate_base_rates(data, FunctionPredictor(lambda X, z: z, True), make_mechanism(1.0, 2))


def test_alpha_tilde_golden_and_scaling():
    gold = GOLDEN["alpha_tilde_n"]
    prm = gold["params"]
    mech = make_mechanism(prm["epsilon"], prm["k"])
    assert alpha_tilde_n(prm["n"], prm["delta"], mech, prm["min_cell"]) == pytest.approx(gold["value"], rel=1e-12)
    m1, m2 = make_mechanism(0.5, 2), make_mechanism(3.0, 2)
    ratio = alpha_tilde_n(1000, 0.1, m1, 0.1) / alpha_tilde_n(1000, 0.1, m2, 0.1)
    assert ratio == pytest.approx((m1.privacy_constant / m2.privacy_constant) ** 2)
    assert two_step_bounds(1000, 0.1, 100, 0.0, 0.1, m1)[1] == pytest.approx(2 * alpha_tilde_n(1000, 0.1, m1, 0.1))


def test_split_indices_partition():
    a, b = split_indices(101, 0.5, 3)
    assert len(a) == 50 and len(b) == 51
    np.testing.assert_array_equal(np.sort(np.concatenate([a, b])), np.arange(101))


def test_two_step_on_fair_separable_data():
    rng = np.random.default_rng(8)
    X, y, a = fair_separable_data(rng, 2000)
    mech = make_mechanism(20.0, 2)
    data = PrivatizedDataset(X, y, randomize_groups(a, mech, 1), 2)
    res = two_step_train(data, mech, TwoStepConfig(B=100, eta=2.0, T=5, alpha_n=0.0, alpha_tilde=0.0,
                                                   learner=LearnerConfig(400, 1.0)))
    rep = res.report
    assert set(rep) == {"err_step1", "disc_step1", "err_step2", "disc_step2", "alpha_n", "alpha_tilde_n",
                        "alpha_tilde_used", "lp_status", "lp_objective", "warnings"}
    assert rep["err_step1"] == 0.0 and rep["err_step2"] <= 1e-9
    assert rep["disc_step2"] <= rep["disc_step1"] + 1e-6
    assert rep["lp_status"] == "optimal"
    json.dumps(rep)


def test_two_step_default_slacks_are_theoretical():
    data = small_private_instance(n=300)
    mech = make_mechanism(2.0, 2)
    res = two_step_train(data, mech, TwoStepConfig(B=10, eta=0.1, T=3, learner=LearnerConfig(100, 0.5)))
    s2 = len(data) - int(0.5 * len(data))
    i1, i2 = split_indices(len(data), 0.5, 0)
    expected = alpha_tilde_n(s2, 0.1, mech, posthoc.plugin_min_cell(data.subset(i2), mech))
    assert res.report["alpha_tilde_n"] == pytest.approx(expected)
    assert "below_sample_threshold" in res.report["warnings"]
