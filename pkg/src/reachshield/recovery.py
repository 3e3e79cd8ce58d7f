"""Model-based recovery controller: saturated LQR regulation to a standing setpoint."""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field

import numpy as np

from . import dynamics as dyn_mod
from .dynamics import LinearDynamics
from .shield import SafetyTriggerSet, SetClass, classify
from .statespace import IDX, STATE_DIM, STATE_FIELDS, as_vec

log = logging.getLogger(__name__)

# x and y are not regulated: the controller stops the body, it does not walk it home
REGULATED = np.array([i for i, name in enumerate(STATE_FIELDS) if name not in ("x", "y")])


class SynthesisError(RuntimeError):
    pass


def default_state_weights() -> np.ndarray:
    q = np.full(STATE_DIM, 10.0)
    q[IDX["x"]] = q[IDX["y"]] = 0.0
    q[IDX["z"]] = 100.0
    return q


def standing_setpoint(height: float = 0.45) -> np.ndarray:
    sp = np.zeros(STATE_DIM)
    sp[IDX["z"]] = height
    return sp


@dataclass(frozen=True)
class RecoveryController:
    gain: np.ndarray
    setpoint: np.ndarray = field(default_factory=standing_setpoint)
    action_bound: float = 1.0
    feedforward: np.ndarray | None = None

    def __post_init__(self):
        object.__setattr__(self, "gain", np.asarray(self.gain, dtype=float))
        object.__setattr__(self, "setpoint", np.asarray(self.setpoint, dtype=float))
        ff = np.zeros(self.gain.shape[0]) if self.feedforward is None else self.feedforward
        object.__setattr__(self, "feedforward", np.asarray(ff, dtype=float))

    def act(self, s) -> np.ndarray:
        u = self.feedforward - self.gain @ (as_vec(s) - self.setpoint)
        return np.clip(u, -self.action_bound, self.action_bound)

    __call__ = act
    mean_action = act

    def to_json(self) -> str:
        return json.dumps({
            "shape": list(self.gain.shape),
            "gain": self.gain.ravel().tolist(),
            "setpoint": self.setpoint.tolist(),
            "action_bound": self.action_bound,
            "feedforward": self.feedforward.tolist(),
        })

    @classmethod
    def from_json(cls, text: str) -> "RecoveryController":
        d = json.loads(text)
        gain = np.asarray(d["gain"], dtype=float).reshape(d["shape"])
        return cls(gain, np.asarray(d["setpoint"], dtype=float), float(d["action_bound"]),
                   d.get("feedforward"))


def riccati(A, B, Q, R, tol: float = 1e-9, max_iter: int = 10_000):
    """Fixed-point iteration of the discrete Riccati equation.

    Returns (P, K, iterations) with u = -K x. Raises SynthesisError if the
    update does not settle below ``tol`` (max-abs entry) within ``max_iter``.
    """
    A = np.atleast_2d(np.asarray(A, dtype=float))
    B = np.atleast_2d(np.asarray(B, dtype=float))
    Q = np.atleast_2d(np.asarray(Q, dtype=float))
    R = np.atleast_2d(np.asarray(R, dtype=float))
    P = Q.copy()
    for it in range(1, max_iter + 1):
        BtP = B.T @ P
        K = np.linalg.solve(R + BtP @ B, BtP @ A)
        P_next = Q + A.T @ P @ (A - B @ K)
        P_next = 0.5 * (P_next + P_next.T)
        if not np.all(np.isfinite(P_next)):
            break
        delta = np.max(np.abs(P_next - P))
        P = P_next
        if delta < tol:
            BtP = B.T @ P
            K = np.linalg.solve(R + BtP @ B, BtP @ A)
            return P, K, it
    raise SynthesisError(f"Riccati iteration did not converge for A{A.shape}, B{B.shape} "
                         f"(sigma1(B)={dyn_mod.sigma_max(B):.3g})")


def closed_loop_radius(model: LinearDynamics, gain) -> float:
    A, B = model.core_A, model.core_B
    Acl = (A - B @ gain)[np.ix_(REGULATED, REGULATED)]
    return float(np.max(np.abs(np.linalg.eigvals(Acl))))


def synthesize(model: LinearDynamics, state_weights=None, action_weights=None, setpoint=None,
               action_bound: float = 1.0) -> RecoveryController:
    q = default_state_weights() if state_weights is None else np.asarray(state_weights, dtype=float)
    r = np.ones(model.m) if action_weights is None else np.asarray(action_weights, dtype=float)
    if np.any(q < 0) or np.any(r <= 0):
        raise ValueError("state weights must be >= 0 and action weights > 0")
    try:
        _, K, _ = riccati(model.core_A, model.core_B, np.diag(q), np.diag(r))
    except SynthesisError as exc:
        raise SynthesisError(f"cannot synthesize recovery for model n={model.n}, m={model.m}: {exc}") from exc
    sp = standing_setpoint() if setpoint is None else as_vec(setpoint)
    # cancel the affine residual at the setpoint so it is an equilibrium of the model
    resid = (model.core_A @ sp - sp + model.affine_bias[:model.state_dim])[REGULATED]
    ff = -np.linalg.lstsq(model.core_B[REGULATED], resid, rcond=None)[0]
    ctrl = RecoveryController(K, sp, action_bound, ff)
    rho = closed_loop_radius(model, K)
    if not rho < 1.0:
        raise SynthesisError(f"closed loop not stable on regulated states (radius {rho:.6f})")
    return ctrl


def sample_trigger_states(ts: SafetyTriggerSet, n: int, rng: np.random.Generator,
                          band: float = 0.2, max_attempts: int | None = None) -> np.ndarray:
    """Uniform samples from trigger-but-not-failure states inside the thresholds widened by ``band``."""
    lo = np.zeros(STATE_DIM)
    hi = np.zeros(STATE_DIM)
    k = 1.0 + band
    lo[IDX["z"]], hi[IDX["z"]] = max(ts.failure_z, ts.z_min - band * ts.z_min), ts.z_max * k
    for name, lim in (("roll", ts.roll_max), ("pitch", ts.pitch_max), ("yaw", ts.roll_max),
                      ("xdot", ts.ydot_max), ("ydot", ts.ydot_max), ("zdot", ts.ydot_max),
                      ("rolldot", ts.rolldot_max), ("pitchdot", ts.rolldot_max),
                      ("yawdot", ts.rolldot_max)):
        lo[IDX[name]], hi[IDX[name]] = -lim * k, lim * k
    max_attempts = max_attempts or 2000 * n
    out = []
    attempts = 0
    while len(out) < n and attempts < max_attempts:
        batch = rng.uniform(lo, hi, size=(max(n, 64), STATE_DIM))
        attempts += batch.shape[0]
        for s in batch:
            if classify(s, ts) is SetClass.TRIGGER:
                out.append(s)
                if len(out) == n:
                    break
    return np.array(out).reshape(-1, STATE_DIM)


def recovers(ctrl, true_dyn: LinearDynamics, s0, ts: SafetyTriggerSet, steps: int) -> bool:
    s = as_vec(s0)
    reached = False
    for _ in range(steps):
        s = dyn_mod.step(true_dyn, s, ctrl(s))
        c = classify(s, ts)
        if c is SetClass.FAILURE:
            return False
        reached = reached or c is SetClass.SAFE
    return reached


def verify_viability(ctrl, true_dyn: LinearDynamics, ts: SafetyTriggerSet, n_samples: int = 200,
                     horizon_s: float = 2.0, rng: np.random.Generator | None = None,
                     band: float = 0.2) -> float:
    """Fraction of sampled trigger-set states from which ``ctrl`` reaches the safe set
    without falling, simulated noise-free for ``horizon_s`` seconds."""
    if n_samples < 1:
        raise ValueError("n_samples must be >= 1")
    rng = np.random.default_rng(0) if rng is None else rng
    starts = sample_trigger_states(ts, n_samples, rng, band=band)
    if len(starts) == 0:
        log.warning("no trigger-set states in the sampling band; viability is vacuously 1.0")
        return 1.0
    steps = int(round(horizon_s / true_dyn.dt))
    ok = sum(recovers(ctrl, true_dyn, s, ts, steps) for s in starts)
    return ok / len(starts)
