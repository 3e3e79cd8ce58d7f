import csv
import itertools

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from reachshield.dynamics import LinearDynamics
from reachshield.theory import (REPORT_FIELDS, BoundViolation, HolderParams, RandomSystemSpec, best_action,
                                performance_bound, random_system, regret_batch, regret_experiment,
                                tracking_oracle, write_regret_csv)


def bound_reference(cost_off, A, A_hat, B, B_hat, G, alpha, W, a_max, s1):
    """Independent evaluation: singular values from a full SVD, terms expanded separately."""
    sA = np.linalg.svd(np.atleast_2d(A - A_hat), compute_uv=False)[0]
    sB = np.linalg.svd(np.atleast_2d(B - B_hat), compute_uv=False)[0]
    s1n = np.sqrt(np.sum(np.square(s1)))
    coeff = pow(2.0, alpha / 2.0) * 2.0 * G * W * pow(sA, alpha)
    inner = pow(sB, alpha) * pow(a_max, alpha) * 2.0 / (alpha + 2.0) + pow(s1n, alpha)
    return cost_off + coeff * inner


def test_exact_model_bound_equals_offline_cost():
    rng = np.random.default_rng(0)
    A, B = rng.standard_normal((3, 3)), rng.standard_normal((3, 2))
    assert performance_bound(1.25, A, A, B, B + 1.0, HolderParams(2.0), 7, 3.0, np.ones(3)) == 1.25


def test_direct_substitution():
    A, A_hat = np.eye(2), np.zeros((2, 2))
    B = np.ones((2, 1))
    got = performance_bound(0.5, A, A_hat, B, B, HolderParams(1.0, 1.0), 1, 2.0, np.array([1.0, 0.0]))
    assert got == pytest.approx(0.5 + 2 ** 1.5, abs=1e-15)


def test_matches_second_implementation():
    rng = np.random.default_rng(1)
    for _ in range(100):
        A, A_hat, B, B_hat = (rng.standard_normal((3, 3)) for _ in range(4))
        G, alpha = rng.uniform(0.1, 3), rng.uniform(0.05, 1.0)
        W, a_max, c = int(rng.integers(1, 60)), rng.uniform(0, 3), rng.uniform(0, 10)
        s1 = rng.standard_normal(3)
        got = performance_bound(c, A, A_hat, B, B_hat, HolderParams(G, alpha), W, a_max, s1)
        ref = bound_reference(c, A, A_hat, B, B_hat, G, alpha, W, a_max, s1)
        assert abs(got - ref) <= 1e-12 * max(1.0, abs(ref))


@pytest.mark.parametrize("kw", [dict(G=0.0), dict(alpha=0.0), dict(alpha=1.5)])
def test_holder_validation(kw):
    with pytest.raises(ValueError):
        HolderParams(**kw)


pos = st.floats(0.01, 10)


@given(pos, pos, pos, pos, pos, pos, st.integers(1, 100), st.floats(0.1, 1.0))
def test_bound_monotone_in_each_input(dA, dB, G, a_max, s1, bump, W, alpha):
    base = dict(dA=dA, dB=dB, G=G, a_max=a_max, s1=s1, W=W)

    def f(dA, dB, G, a_max, s1, W):
        return performance_bound(0.0, [[dA]], [[0.0]], [[dB]], [[0.0]], HolderParams(G, alpha), W, a_max, [s1])

    ref = f(**base)
    assert ref >= 0
    for k in base:
        bigger = dict(base)
        bigger[k] = base[k] + (1 if k == "W" else bump)
        assert f(**bigger) >= ref
        if k in ("dA", "G", "W", "s1"):
            assert f(**bigger) > ref


def test_bound_strictly_increases_with_perturbation_scale():
    rng = np.random.default_rng(2)
    A, B = rng.standard_normal((4, 4)), rng.standard_normal((4, 2))
    DA, DB = rng.standard_normal((4, 4)), rng.standard_normal((4, 2))
    vals = [performance_bound(1.0, A, A + t * DA, B, B + t * DB, HolderParams(2.0), 10, 1.0, np.ones(4))
            for t in (0.01, 0.1, 0.5, 1.0)]
    assert all(b > a for a, b in zip(vals, vals[1:]))


def test_exact_tracking_with_invertible_input():
    rng = np.random.default_rng(3)
    A, B = rng.standard_normal((3, 3)) * 0.5, np.eye(3) + 0.1 * rng.standard_normal((3, 3))
    dyn = LinearDynamics(A, B, augmented=False)
    targets = [rng.standard_normal(3) for _ in range(10)]
    actions, c, _ = tracking_oracle(dyn, rng.standard_normal(3), targets, a_box=None)
    assert c <= 1e-10 and len(actions) == 10


def test_zero_input_matrix():
    rng = np.random.default_rng(4)
    A = rng.standard_normal((3, 3)) * 0.7
    dyn = LinearDynamics(A, np.zeros((3, 2)), augmented=False)
    s1 = rng.standard_normal(3)
    targets = [rng.standard_normal(3) for _ in range(6)]
    actions, c, _ = tracking_oracle(dyn, s1, targets, 1.0)
    assert all(not a.any() for a in actions)
    x, ref = s1, 0.0
    for y in targets:
        x = A @ x
        ref += np.linalg.norm(x - y)
    assert c == pytest.approx(ref, abs=1e-12)


def test_matches_grid_search():
    rng = np.random.default_rng(5)
    A = rng.standard_normal((4, 4))
    A *= 0.9 / np.max(np.abs(np.linalg.eigvals(A)))
    B = rng.standard_normal((4, 2))
    dyn = LinearDynamics(A, B, augmented=False)
    targets = [rng.standard_normal(4) * 0.5 for _ in range(20)]
    actions, cost, states = tracking_oracle(dyn, rng.standard_normal(4), targets, 1.0)
    h = 0.01
    grid = np.array(list(itertools.product(np.arange(-1, 1 + h / 2, h), repeat=2)))
    grid_total = 0.0
    for x, y in zip(states[:-1], targets):
        grid_total += np.min(np.linalg.norm(x @ A.T + grid @ B.T - y, axis=1))
    sB = np.linalg.norm(B, 2)
    assert cost <= grid_total + 1e-12
    assert grid_total - cost <= 20 * sB * h * np.sqrt(2) / 2


@pytest.mark.parametrize("seed", range(10))
def test_greedy_action_beats_random_actions(seed):
    rng = np.random.default_rng(seed)
    n, m = int(rng.integers(2, 7)), int(rng.integers(1, 4))
    dyn = LinearDynamics(rng.standard_normal((n, n)), rng.standard_normal((n, m)) * 3, augmented=False)
    x, y = rng.standard_normal(n), rng.standard_normal(n) * 3
    a = best_action(dyn, x, y, 1.0)
    assert np.all(np.abs(a) <= 1.0)
    best = np.linalg.norm(dyn.A @ x + dyn.B @ a - y)
    rand = rng.uniform(-1, 1, (1000, m))
    others = np.linalg.norm(x @ dyn.A.T + rand @ dyn.B.T - y, axis=1)
    assert best <= others.min() + 1e-10


def test_exact_model_online_equals_offline():
    for seed in range(10):
        T, _, s1, targets, box = random_system(np.random.default_rng(seed))
        on = tracking_oracle(T, s1, targets, box, true_dyn=T)
        off = tracking_oracle(T, s1, targets, box)
        assert all(np.array_equal(a, b) for a, b in zip(on[0], off[0]))
        rep = regret_experiment(T, T, s1, targets, box)
        assert abs(rep.cost_online - rep.cost_offline) <= 1e-9 and rep.bound_value == rep.cost_offline


def test_input_only_error_breaks_bound():
    # A == A_hat makes the additive term vanish, yet planning with the wrong B costs tracking error
    T = LinearDynamics([[1.0]], [[1.0]], augmented=False)
    T_hat = LinearDynamics([[1.0]], [[2.0]], augmented=False)
    rep = regret_experiment(T, T_hat, [0.0], [[1.0]], a_box=None, check=False)
    assert rep.cost_offline == 0.0 and rep.bound_value == 0.0
    assert rep.cost_online == pytest.approx(0.5)
    assert rep.violated
    with pytest.raises(BoundViolation):
        regret_experiment(T, T_hat, [0.0], [[1.0]], a_box=None)


def test_report_records_inputs():
    T, T_hat, s1, targets, box = random_system(np.random.default_rng(7))
    rep = regret_experiment(T, T_hat, s1, targets, box, check=False)
    assert rep.W == len(targets)
    assert rep.s1_norm == pytest.approx(np.linalg.norm(s1))
    assert rep.G == pytest.approx(max(np.linalg.norm(T.B, 2), np.linalg.norm(T_hat.B, 2)))
    assert rep.sigma1_dA == pytest.approx(np.linalg.norm(T.A - T_hat.A, 2))
    assert rep.bound_value >= 0 and 0 <= rep.a_max <= box * np.sqrt(T.m)


def test_pass_through_shield_changes_nothing():
    T, T_hat, s1, targets, box = random_system(np.random.default_rng(8))
    plain = regret_experiment(T, T_hat, s1, targets, box, check=False)
    shielded = regret_experiment(T, T_hat, s1, targets, box, check=False, shield=lambda t, x, a: a)
    assert plain == shielded


def test_random_system_respects_spec():
    spec = RandomSystemSpec()
    for seed in range(20):
        T, T_hat, s1, targets, box = random_system(np.random.default_rng(seed), spec)
        assert 2 <= T.n <= spec.max_n and 1 <= T.m <= spec.max_m
        assert spec.min_W <= len(targets) <= spec.max_W
        assert T_hat.A.shape == T.A.shape


def test_batch_csv(tmp_path):
    rows = regret_batch(5, seed=3)
    p = tmp_path / "r.csv"
    write_regret_csv(p, rows, 3)
    with open(p) as fh:
        data = list(csv.DictReader(fh))
    assert list(data[0]) == ["seed", "system"] + list(REPORT_FIELDS) + ["violated"]
    assert [int(d["system"]) for d in data] == list(range(5))
    assert float(data[2]["bound_value"]) == rows[2][1].bound_value
    assert regret_batch(5, seed=3) == rows
