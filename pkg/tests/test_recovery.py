import logging

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from reachshield.dynamics import LinearDynamics, build_cdm, step
from reachshield.recovery import (REGULATED, RecoveryController, SynthesisError, closed_loop_radius,
                                  recovers, riccati, sample_trigger_states, standing_setpoint, synthesize,
                                  verify_viability)
from reachshield.shield import SetClass, classify, get_trigger_set
from reachshield.statespace import IDX
from reachshield.tasks import TaskSpec, make_env

CTRI1 = get_trigger_set("ctri1")


@pytest.fixture(scope="module")
def env():
    return make_env(TaskSpec())


@pytest.fixture(scope="module")
def ctrl(env):
    return synthesize(env.model, setpoint=standing_setpoint(0.45))


def bisect(f, lo, hi, tol=1e-15):
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if (f(lo) < 0) == (f(mid) < 0):
            lo = mid
        else:
            hi = mid
        if hi - lo < tol:
            break
    return 0.5 * (lo + hi)


def test_scalar_riccati_matches_bisection():
    # s' = s + a, Q = R = 1: stationary P solves P^2/(1+P) = 1
    P_ref = bisect(lambda p: p * p / (1 + p) - 1.0, 0.0, 10.0)
    P, K, it = riccati(1.0, 1.0, 1.0, 1.0)
    assert P[0, 0] == pytest.approx(P_ref, abs=1e-8)
    k = K[0, 0]
    assert k == pytest.approx(P_ref / (1 + P_ref), abs=1e-8)
    assert abs(1 - k) < 1


def test_zero_input_matrix_does_not_converge():
    with pytest.raises(SynthesisError):
        riccati(1.0, 0.0, 1.0, 1.0)
    dyn = LinearDynamics(build_cdm().A, np.zeros((13, 6)))
    with pytest.raises(SynthesisError):
        synthesize(dyn)


def _power_radius_certificate(M, k=400):
    """rho(M) <= sigma1(M^k)^(1/k); sigma1 by power iteration on (M^k)^T M^k."""
    Mk = np.linalg.matrix_power(M, k)
    G = Mk.T @ Mk
    v = np.ones(G.shape[0])
    for _ in range(2000):
        v = G @ v
        nrm = np.linalg.norm(v)
        if nrm == 0:
            return 0.0
        v /= nrm
    return float(np.sqrt(v @ G @ v)) ** (1.0 / k)


def test_default_model_closed_loop_stable(env, ctrl):
    rho = closed_loop_radius(env.model, ctrl.gain)
    assert rho < 1
    Acl = (env.model.core_A - env.model.core_B @ ctrl.gain)[np.ix_(REGULATED, REGULATED)]
    assert _power_radius_certificate(Acl) < 1


def test_act_fixed_point_and_odd_symmetry(ctrl):
    sp = ctrl.setpoint
    assert not ctrl.act(sp).any()
    d = np.random.default_rng(0).normal(0, 1e-3, 12)
    assert np.allclose(ctrl.act(sp + d), -ctrl.act(sp - d))


@given(st.lists(st.floats(-2, 2), min_size=12, max_size=12))
@settings(max_examples=100, deadline=None)
def test_clipping_preserves_sign_and_bound(v):
    ctrl = RecoveryController(np.random.default_rng(1).standard_normal((6, 12)) * 5, standing_setpoint())
    s = np.array(v)
    raw = -ctrl.gain @ (s - ctrl.setpoint)
    u = ctrl.act(s)
    assert np.all(np.abs(u) <= ctrl.action_bound)
    assert np.all(np.sign(u) == np.sign(raw))
    assert np.array_equal(u, ctrl.act(s))


@pytest.mark.parametrize("field,value", [("z", 0.39), ("z", 0.56), ("roll", 0.27), ("pitch", -0.27),
                                         ("ydot", 0.51), ("rolldot", -0.51)])
def test_boundary_states_recover_within_two_seconds(env, ctrl, field, value):
    s = standing_setpoint(0.45)
    s[IDX[field]] = value
    assert classify(s, CTRI1) is SetClass.TRIGGER
    assert recovers(ctrl, env.true_dyn, s, CTRI1, int(round(2.0 / env.true_dyn.dt)))


def test_viability_default(env, ctrl):
    assert verify_viability(ctrl, env.true_dyn, CTRI1, 200, 2.0, np.random.default_rng(0)) >= 0.99


def test_viability_vacuous_when_no_trigger_states(env, ctrl, caplog):
    with caplog.at_level(logging.WARNING):
        frac = verify_viability(ctrl, env.true_dyn, CTRI1, 5, 2.0, np.random.default_rng(0), band=0.0)
    assert frac == 1.0
    assert "vacuous" in caplog.text


def test_viability_without_feedback_is_incomplete(env):
    zero = RecoveryController(np.zeros((6, 12)), standing_setpoint())
    assert verify_viability(zero, env.true_dyn, CTRI1, 100, 2.0, np.random.default_rng(0)) < 1.0


def test_viability_rejects_no_samples(env, ctrl):
    with pytest.raises(ValueError):
        verify_viability(ctrl, env.true_dyn, CTRI1, 0)


def test_sampled_states_are_trigger_not_failure():
    S = sample_trigger_states(CTRI1, 300, np.random.default_rng(2))
    assert S.shape == (300, 12)
    assert all(classify(s, CTRI1) is SetClass.TRIGGER for s in S)
    assert S[:, IDX["z"]].min() >= 0.1 and S[:, IDX["z"]].max() <= 0.55 * 1.2


def test_regulated_error_eventually_decreasing(env, ctrl):
    starts = []
    for field, lim in (("z", None), ("roll", 0.26), ("pitch", 0.26), ("ydot", 0.5), ("rolldot", 0.5)):
        for sign in (-1, 1):
            s = standing_setpoint(0.45)
            if field == "z":
                s[IDX["z"]] = 0.39 if sign < 0 else 0.56
            else:
                s[IDX[field]] = sign * lim * 1.05
            starts.append(s)
    for s in starts:
        errs = []
        for _ in range(400):
            s = step(env.true_dyn, s, ctrl(s))
            errs.append(np.linalg.norm((s - ctrl.setpoint)[REGULATED]))
        tail = np.array(errs[150:])
        assert np.all(np.diff(tail) <= 1e-12)
        assert errs[-1] < 1e-3


def test_json_round_trip(ctrl):
    back = RecoveryController.from_json(ctrl.to_json())
    assert np.array_equal(back.gain, ctrl.gain) and np.array_equal(back.setpoint, ctrl.setpoint)
    assert back.action_bound == ctrl.action_bound


def test_feedforward_holds_setpoint_under_gravity_bias():
    from reachshield.tasks import CdmParams
    env = make_env(TaskSpec(), CdmParams(gravity=2.0))
    ctrl = synthesize(env.model, setpoint=standing_setpoint(0.45))
    assert ctrl.feedforward[2] > 0
    s = ctrl.setpoint
    for _ in range(100):
        s = step(env.true_dyn, s, ctrl(s))
    assert np.allclose(s[REGULATED], ctrl.setpoint[REGULATED], atol=1e-9)
    assert verify_viability(ctrl, env.true_dyn, CTRI1, 100, 2.0, np.random.default_rng(0)) >= 0.99
    back = RecoveryController.from_json(ctrl.to_json())
    assert np.array_equal(back.feedforward, ctrl.feedforward)
