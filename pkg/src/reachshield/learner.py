"""Gaussian tanh-MLP learner and the shielded training loop with the recovery-use penalty."""

from __future__ import annotations

import enum
import json
import math
from dataclasses import dataclass, field

import numpy as np

from .shield import Decision, SetClass, ShieldConfig, ShieldMode, SwitchState, select_action
from .statespace import PolicySource, ReplayBuffer, STATE_FIELDS, TransitionRecord, as_vec

OBS_INDEX = np.array([i for i, name in enumerate(STATE_FIELDS) if name not in ("x", "y")])
LOG_STD_MIN, LOG_STD_MAX = -5.0, 1.0
_ATANH_EDGE = 1.0 - 1e-9
_PARAM_NAMES = ("W1", "b1", "W2", "b2", "W3", "b3", "log_std")


class PenaltyMode(str, enum.Enum):
    SUBTRACT_ONE = "SubtractOne"
    TERMINATE_EPISODE = "TerminateEpisode"


@dataclass
class MlpPolicy:
    """Two tanh hidden layers, tanh-squashed mean scaled to the action box,
    state-independent log-std. Observations drop x, y and are centred on ``nominal``."""

    params: dict[str, np.ndarray]
    action_bound: float = 1.0
    nominal: np.ndarray = field(default_factory=lambda: np.zeros(len(STATE_FIELDS)))

    @classmethod
    def init(cls, action_dim: int, rng: np.random.Generator, hidden: int = 32,
             action_bound: float = 1.0, nominal=None, log_std: float = -0.5,
             out_scale: float = 1.0) -> "MlpPolicy":
        d = len(OBS_INDEX)
        params = {
            "W1": rng.standard_normal((hidden, d)) / math.sqrt(d),
            "b1": np.zeros(hidden),
            "W2": rng.standard_normal((hidden, hidden)) / math.sqrt(hidden),
            "b2": np.zeros(hidden),
            "W3": out_scale * rng.standard_normal((action_dim, hidden)) / math.sqrt(hidden),
            "b3": np.zeros(action_dim),
            "log_std": np.full(action_dim, float(log_std)),
        }
        nom = np.zeros(len(STATE_FIELDS)) if nominal is None else as_vec(nominal).copy()
        return cls(params, action_bound, nom)

    @classmethod
    def zeros(cls, action_dim: int, hidden: int = 32, **kw) -> "MlpPolicy":
        pol = cls.init(action_dim, np.random.default_rng(0), hidden, **kw)
        for k in ("W1", "b1", "W2", "b2", "W3", "b3"):
            pol.params[k] = np.zeros_like(pol.params[k])
        return pol

    @property
    def action_dim(self) -> int:
        return self.params["b3"].shape[0]

    @property
    def std(self) -> np.ndarray:
        return np.exp(np.clip(self.params["log_std"], LOG_STD_MIN, LOG_STD_MAX))

    def obs(self, s) -> np.ndarray:
        return (as_vec(s) - self.nominal)[..., OBS_INDEX]

    def _forward(self, x):
        p = self.params
        h1 = np.tanh(x @ p["W1"].T + p["b1"])
        h2 = np.tanh(h1 @ p["W2"].T + p["b2"])
        return h1, h2, h2 @ p["W3"].T + p["b3"]

    def pre_mean(self, s) -> np.ndarray:
        return self._forward(self.obs(s))[2]

    def mean_action(self, s) -> np.ndarray:
        return self.action_bound * np.tanh(self.pre_mean(s))

    __call__ = mean_action

    def act(self, s, rng: np.random.Generator) -> np.ndarray:
        pre = self.pre_mean(s) + self.std * rng.standard_normal(self.action_dim)
        return self.action_bound * np.tanh(pre)

    def pre_squash(self, a) -> np.ndarray:
        return np.arctanh(np.clip(np.asarray(a, dtype=float) / self.action_bound,
                                  -_ATANH_EDGE, _ATANH_EDGE))

    def log_prob(self, s, a) -> float:
        """Gaussian log-density of the pre-squash action."""
        pre = self.pre_squash(a)
        mu = self.pre_mean(s)
        log_std = np.clip(self.params["log_std"], LOG_STD_MIN, LOG_STD_MAX)
        z = (pre - mu) / np.exp(log_std)
        return float(np.sum(-0.5 * z * z - log_std) - 0.5 * self.action_dim * math.log(2 * math.pi))

    # flat parameter vector view
    def flat(self) -> np.ndarray:
        return np.concatenate([self.params[k].ravel() for k in _PARAM_NAMES])

    def with_flat(self, theta) -> "MlpPolicy":
        theta = np.asarray(theta, dtype=float)
        out, i = {}, 0
        for k in _PARAM_NAMES:
            n = self.params[k].size
            out[k] = theta[i:i + n].reshape(self.params[k].shape).copy()
            i += n
        return MlpPolicy(out, self.action_bound, self.nominal.copy())

    def to_json(self) -> str:
        return json.dumps({
            "shapes": {k: list(self.params[k].shape) for k in _PARAM_NAMES},
            "action_bound": self.action_bound,
            "nominal": self.nominal.tolist(),
            "theta": self.flat().tolist(),
        })

    @classmethod
    def from_json(cls, text: str) -> "MlpPolicy":
        d = json.loads(text)
        params = {k: np.zeros(d["shapes"][k]) for k in _PARAM_NAMES}
        skeleton = cls(params, float(d["action_bound"]), np.asarray(d["nominal"], dtype=float))
        return skeleton.with_flat(d["theta"])


@dataclass(frozen=True)
class FixedPolicy:
    """Wraps a deterministic state-feedback law so it can stand in for the learner."""

    law: object

    def mean_action(self, s) -> np.ndarray:
        return np.asarray(self.law(as_vec(s)), dtype=float)

    __call__ = mean_action

    def act(self, s, rng: np.random.Generator | None = None) -> np.ndarray:
        return self.mean_action(s)


def _grad_from_scores(policy: MlpPolicy, X, g_mu, g_logstd) -> np.ndarray:
    """Backpropagate per-sample d/d(mu) scores through the network, summed over samples."""
    p = policy.params
    h1, h2, _ = policy._forward(X)
    g_h2 = g_mu @ p["W3"]
    g_z2 = g_h2 * (1.0 - h2 * h2)
    g_h1 = g_z2 @ p["W2"]
    g_z1 = g_h1 * (1.0 - h1 * h1)
    grads = {
        "W1": g_z1.T @ X, "b1": g_z1.sum(0),
        "W2": g_z2.T @ h1, "b2": g_z2.sum(0),
        "W3": g_mu.T @ h2, "b3": g_mu.sum(0),
        "log_std": g_logstd,
    }
    return np.concatenate([grads[k].ravel() for k in _PARAM_NAMES])


def _scores(policy: MlpPolicy, states, actions):
    X = policy.obs(np.atleast_2d(states))
    pre = policy.pre_squash(np.atleast_2d(actions))
    mu = policy._forward(X)[2]
    raw = policy.params["log_std"]
    log_std = np.clip(raw, LOG_STD_MIN, LOG_STD_MAX)
    var = np.exp(2 * log_std)
    diff = pre - mu
    g_mu = diff / var
    g_ls = diff * diff / var - 1.0
    inside = (raw > LOG_STD_MIN) & (raw < LOG_STD_MAX)
    return X, g_mu, g_ls * inside


def log_prob_grad(policy: MlpPolicy, s, a) -> np.ndarray:
    """Analytic gradient of log pi(a|s) with respect to the flat parameter vector."""
    X, g_mu, g_ls = _scores(policy, as_vec(s)[None, :], np.asarray(a, dtype=float)[None, :])
    return _grad_from_scores(policy, X, g_mu, g_ls.sum(0))


def reward_to_go(rewards, gamma: float) -> np.ndarray:
    out = np.zeros(len(rewards))
    acc = 0.0
    for t in range(len(rewards) - 1, -1, -1):
        acc = rewards[t] + gamma * acc
        out[t] = acc
    return out


def policy_update(policy: MlpPolicy, buffer: ReplayBuffer, gamma: float, lr: float,
                  max_grad_norm: float = 10.0, normalize: bool = False,
                  baseline: str = "mean") -> MlpPolicy:
    """REINFORCE step on penalized rewards; returns the new policy.

    ``baseline="mean"`` subtracts the mean reward-to-go over the buffer,
    ``"time"`` the mean over episodes at the same step index. ``normalize``
    additionally scales advantages to unit standard deviation.
    """
    episodes = buffer.nonempty_episodes()
    if not episodes:
        raise ValueError("cannot update from an empty buffer")
    states, actions, returns = [], [], []
    for ep in episodes:
        returns.append(reward_to_go([r.penalized_reward for r in ep], gamma))
        states.extend(r.state for r in ep)
        actions.extend(r.learner_action for r in ep)
    G = np.concatenate(returns)
    if baseline == "time":
        T = max(len(g) for g in returns)
        sums, counts = np.zeros(T), np.zeros(T)
        for g in returns:
            sums[:len(g)] += g
            counts[:len(g)] += 1
        b = sums / counts
        adv = np.concatenate([g - b[:len(g)] for g in returns])
    else:
        adv = G - G.mean()
    if lr == 0.0 or not np.any(adv):
        return policy.with_flat(policy.flat())
    if normalize:
        adv = adv / adv.std()
    X, g_mu, g_ls = _scores(policy, np.array(states), np.array(actions))
    grad = _grad_from_scores(policy, X, adv[:, None] * g_mu, (adv[:, None] * g_ls).sum(0))
    grad /= len(G)
    norm = np.linalg.norm(grad)
    if norm > max_grad_norm:
        grad *= max_grad_norm / norm
    return policy.with_flat(policy.flat() + lr * grad)


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 0.03
    num_updates: int = 80
    episode_length: int = 200
    trajectories_per_update: int = 8
    gamma: float = 0.99
    seed: int = 0
    penalty_mode: PenaltyMode = PenaltyMode.SUBTRACT_ONE
    hidden: int = 32
    init_log_std: float = -0.5
    init_out_scale: float = 0.1
    normalize_advantages: bool = False
    baseline: str = "time"

    def __post_init__(self):
        object.__setattr__(self, "penalty_mode", PenaltyMode(self.penalty_mode))
        if self.num_updates < 1 or self.trajectories_per_update < 1 or self.episode_length < 0:
            raise ValueError("update and trajectory counts must be positive")
        if not 0.0 < self.gamma < 1.0:
            raise ValueError("gamma must lie in (0, 1)")
        if self.learning_rate < 0:
            raise ValueError("learning_rate must be >= 0")


@dataclass
class EpisodeStats:
    reward: float = 0.0
    discounted_cost: float = 0.0
    steps: int = 0
    falls: int = 0
    recovery_steps: int = 0
    trigger_events: int = 0


METRIC_FIELDS = ("k", "reward", "J_C", "falls", "recovery_steps", "recovery_fraction",
                 "trigger_events")


def run_episode(env, policy, recovery, shield: ShieldConfig, steps: int, rng: np.random.Generator,
                buffer: ReplayBuffer | None = None, stochastic: bool = True, gamma: float = 0.99,
                terminate_on_recovery: bool = False, start=None) -> EpisodeStats:
    """One shielded episode on the true system; stops early on a fall."""
    stats = EpisodeStats()
    s = env.reset() if start is None else as_vec(start).copy()
    switch = SwitchState()
    ts = shield.trigger_set
    if buffer is not None:
        buffer.start_episode()
    for t in range(steps):
        proposed = policy.act(s, rng) if stochastic else policy.mean_action(s)
        dec: Decision = select_action(switch, s, policy, recovery, env.model, shield.w, ts,
                                      proposed=proposed, mode=shield.mode)
        s_next, r, c, cls = env.step(s, dec.action, rng)
        if buffer is not None:
            buffer.push(TransitionRecord.make(s, dec.learner_action, r, dec.source, c))
        stats.reward += r
        stats.discounted_cost += gamma ** t * c
        stats.steps += 1
        if dec.source is PolicySource.RECOVERY:
            stats.recovery_steps += 1
            if switch.prev_source is not PolicySource.RECOVERY:
                stats.trigger_events += 1
        switch = dec.switch
        s = s_next
        if cls is SetClass.FAILURE:
            stats.falls += 1
            break
        if terminate_on_recovery and dec.source is PolicySource.RECOVERY:
            break
    if buffer is not None:
        buffer.end_episode()
    return stats


def run_training(env, shield: ShieldConfig, recovery, policy, cfg: TrainConfig,
                 rng: np.random.Generator | None = None):
    """Shielded on-policy training. Returns (final policy, list of per-update metric dicts)."""
    rng = np.random.default_rng(cfg.seed) if rng is None else rng
    trainable = isinstance(policy, MlpPolicy)
    metrics = []
    for k in range(cfg.num_updates):
        buffer = ReplayBuffer()
        eps = [run_episode(env, policy, recovery, shield, cfg.episode_length, rng, buffer,
                           gamma=cfg.gamma,
                           terminate_on_recovery=cfg.penalty_mode is PenaltyMode.TERMINATE_EPISODE)
               for _ in range(cfg.trajectories_per_update)]
        steps = sum(e.steps for e in eps)
        rec = sum(e.recovery_steps for e in eps)
        metrics.append({
            "k": k,
            "reward": float(np.mean([e.reward for e in eps])) if steps else 0.0,
            "J_C": float(np.mean([e.discounted_cost for e in eps])) if steps else 0.0,
            "falls": sum(e.falls for e in eps),
            "recovery_steps": rec,
            "recovery_fraction": rec / steps if steps else 0.0,
            "trigger_events": sum(e.trigger_events for e in eps),
        })
        if trainable and len(buffer):
            policy = policy_update(policy, buffer, cfg.gamma, cfg.learning_rate,
                                   normalize=cfg.normalize_advantages, baseline=cfg.baseline)
    return policy, metrics
