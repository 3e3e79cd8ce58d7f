"""Tracking-error comparison between planning with the approximate model (online)
and with the true model (offline), and the performance bound relating the two."""

from __future__ import annotations

import csv
import math
from dataclasses import asdict, dataclass, fields

import numpy as np
from scipy.optimize import lsq_linear

from . import dynamics as dyn_mod
from .dynamics import LinearDynamics, sigma_max


@dataclass(frozen=True)
class HolderParams:
    G: float = 1.0
    alpha: float = 1.0

    def __post_init__(self):
        if not self.G > 0:
            raise ValueError("G must be positive")
        if not 0.0 < self.alpha <= 1.0:
            raise ValueError("alpha must lie in (0, 1]")

    @classmethod
    def exact_linear(cls, *Bs) -> "HolderParams":
        """For s' = A s + B a the action map is Lipschitz with constant sigma1(B)."""
        return cls(G=max(max(sigma_max(B) for B in Bs), np.finfo(float).tiny), alpha=1.0)


def performance_bound(cost_offline: float, A, A_hat, B, B_hat, params: HolderParams, W: int,
                      a_max: float, s1) -> float:
    """Upper bound on the online tracking cost given the offline cost and model mismatch."""
    al = params.alpha
    dA = sigma_max(np.asarray(A, dtype=float) - np.asarray(A_hat, dtype=float))
    dB = sigma_max(np.asarray(B, dtype=float) - np.asarray(B_hat, dtype=float))
    s1_norm = float(np.linalg.norm(np.asarray(s1, dtype=float)))
    gap = 2.0 ** (al / 2.0 + 1.0) * params.G * W * dA ** al * (
        dB ** al * a_max ** al * (2.0 / (al + 2.0)) + s1_norm ** al)
    return float(cost_offline + gap)


def _as_dyn(d) -> LinearDynamics:
    if isinstance(d, LinearDynamics):
        return d
    A, B = d
    return LinearDynamics(A, B, augmented=False)


def best_action(dyn: LinearDynamics, x, target, a_box: float | None) -> np.ndarray:
    """argmin_a ||dyn(x, a) - target|| over the box |a_i| <= a_box.

    Minimum-norm least squares when the unconstrained optimum is feasible,
    bounded-variable least squares otherwise.
    """
    k = dyn.state_dim
    B = dyn.B[:k]
    resid = np.asarray(target, dtype=float) - dyn_mod.step(dyn, x, np.zeros(dyn.m))
    a = np.linalg.lstsq(B, resid, rcond=None)[0]
    if a_box is None or np.all(np.abs(a) <= a_box):
        return a
    if not B.any():
        return np.zeros(dyn.m)
    res = lsq_linear(B, resid, bounds=(-a_box, a_box), method="bvls", tol=1e-14)
    return np.clip(res.x, -a_box, a_box)


def tracking_oracle(dyn, s1, targets, a_box: float | None = None, true_dyn=None):
    """Greedy per-step tracker.

    Plans each action with ``dyn`` while the state evolves under ``true_dyn``
    (defaults to ``dyn``). ``targets[t]`` is the state to reach after action t.
    Returns (actions, cost, states) where cost sums the true per-step tracking errors.
    """
    plan = _as_dyn(dyn)
    real = plan if true_dyn is None else _as_dyn(true_dyn)
    x = np.asarray(s1, dtype=float)
    actions, states = [], [x]
    total = 0.0
    for y in targets:
        a = best_action(plan, x, y, a_box)
        x = dyn_mod.step(real, x, a)
        total += float(np.linalg.norm(x - np.asarray(y, dtype=float)))
        actions.append(a)
        states.append(x)
    return actions, total, states


@dataclass(frozen=True)
class RegretReport:
    cost_online: float
    cost_offline: float
    bound_value: float
    sigma1_dA: float
    sigma1_dB: float
    a_max: float
    s1_norm: float
    W: int
    G: float = 0.0
    alpha: float = 1.0

    @property
    def violated(self) -> bool:
        return self.cost_online > self.bound_value

    @property
    def regret(self) -> float:
        return self.cost_online - self.cost_offline


REPORT_FIELDS = tuple(f.name for f in fields(RegretReport))


class BoundViolation(AssertionError):
    pass


def regret_experiment(T, T_hat, s1, targets, a_box: float | None = 1.0, check: bool = True,
                      shield=None) -> RegretReport:
    """Run the tracker online (plan with T_hat, evolve with T) and offline (T for both)
    and evaluate the bound with the exact linear smoothness constants.

    ``shield`` is an optional callable ``(t, x, a_planned) -> a`` that may override
    the planned online action (used when the tracker runs under the switching law).
    """
    T, T_hat = _as_dyn(T), _as_dyn(T_hat)
    targets = list(targets)
    if shield is None:
        on_actions, cost_on, _ = tracking_oracle(T_hat, s1, targets, a_box, true_dyn=T)
    else:
        on_actions, cost_on = _shielded_online(T, T_hat, s1, targets, a_box, shield)
    _, cost_off, _ = tracking_oracle(T, s1, targets, a_box)
    k = T.state_dim
    A, A_hat = T.A[:k, :k], T_hat.A[:k, :k]
    B, B_hat = T.B[:k], T_hat.B[:k]
    params = HolderParams.exact_linear(B, B_hat)
    a_max = max((float(np.linalg.norm(a)) for a in on_actions), default=0.0)
    W = len(targets)
    bound = performance_bound(cost_off, A, A_hat, B, B_hat, params, W, a_max, s1)
    rep = RegretReport(cost_on, cost_off, bound, sigma_max(A - A_hat), sigma_max(B - B_hat),
                       a_max, float(np.linalg.norm(s1)), W, params.G, params.alpha)
    if check and rep.violated:
        raise BoundViolation(f"online cost {cost_on:.6g} exceeds bound {bound:.6g}")
    return rep


def _shielded_online(T, T_hat, s1, targets, a_box, shield):
    x = np.asarray(s1, dtype=float)
    actions, total = [], 0.0
    for t, y in enumerate(targets):
        a = shield(t, x, best_action(T_hat, x, y, a_box))
        x = dyn_mod.step(T, x, a)
        total += float(np.linalg.norm(x - np.asarray(y, dtype=float)))
        actions.append(np.asarray(a, dtype=float))
    return actions, total


@dataclass(frozen=True)
class RandomSystemSpec:
    max_n: int = 6
    max_m: int = 3
    max_W: int = 50
    min_W: int = 5
    a_box: float = 1.0
    max_rel_error: float = 0.2


def random_system(rng: np.random.Generator, spec: RandomSystemSpec = RandomSystemSpec(),
                  zero_error: bool = False):
    """A random stable-ish (T, T_hat, s1, targets, a_box) tracking instance."""
    n = int(rng.integers(2, spec.max_n + 1))
    m = int(rng.integers(1, spec.max_m + 1))
    W = int(rng.integers(spec.min_W, spec.max_W + 1))
    A = rng.standard_normal((n, n))
    A *= rng.uniform(0.5, 1.0) / max(np.max(np.abs(np.linalg.eigvals(A))), 1e-12)
    B = rng.standard_normal((n, m)) / math.sqrt(n)
    T = LinearDynamics(A, B, augmented=False)
    if zero_error:
        T_hat = T
    else:
        err = dyn_mod.ModelError(rng.uniform(0, spec.max_rel_error) * sigma_max(A),
                                 rng.uniform(0, spec.max_rel_error) * sigma_max(B))
        T_hat, _ = dyn_mod.perturb(T, err, rng)
    s1 = rng.standard_normal(n)
    # targets follow a reachable reference generated by random bounded inputs on T
    ref = s1.copy()
    targets = []
    for _ in range(W):
        ref = A @ ref + B @ rng.uniform(-spec.a_box, spec.a_box, m)
        targets.append(ref.copy())
    return T, T_hat, s1, targets, spec.a_box


def regret_batch(n_systems: int, seed: int = 0, spec: RandomSystemSpec = RandomSystemSpec(),
                 zero_error: bool = False) -> list[tuple[int, RegretReport]]:
    out = []
    for i in range(n_systems):
        rng = np.random.default_rng([seed, i])
        T, T_hat, s1, targets, a_box = random_system(rng, spec, zero_error)
        out.append((i, regret_experiment(T, T_hat, s1, targets, a_box, check=False)))
    return out


def write_regret_csv(path, rows, seed: int) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["seed", "system"] + list(REPORT_FIELDS) + ["violated"])
        for i, rep in rows:
            d = asdict(rep)
            w.writerow([seed, i] + [repr(d[f]) if isinstance(d[f], float) else d[f]
                                    for f in REPORT_FIELDS] + [int(rep.violated)])
