"""Core value types: centroidal state, bounded actions, transitions and CMDP returns."""

from __future__ import annotations

import csv
import enum
import math
from dataclasses import dataclass, field, fields
from typing import Iterable, Iterator, Sequence

import numpy as np

STATE_FIELDS = (
    "x", "y", "z",
    "xdot", "ydot", "zdot",
    "roll", "pitch", "yaw",
    "rolldot", "pitchdot", "yawdot",
)
STATE_DIM = len(STATE_FIELDS)
IDX = {name: i for i, name in enumerate(STATE_FIELDS)}


@dataclass(frozen=True)
class CdmState:
    x: float = 0.0
    y: float = 0.0
    z: float = 0.0
    xdot: float = 0.0
    ydot: float = 0.0
    zdot: float = 0.0
    roll: float = 0.0
    pitch: float = 0.0
    yaw: float = 0.0
    rolldot: float = 0.0
    pitchdot: float = 0.0
    yawdot: float = 0.0

    def __post_init__(self):
        for f in fields(self):
            v = float(getattr(self, f.name))
            if not math.isfinite(v):
                raise ValueError(f"state component {f.name} is not finite: {v}")
            object.__setattr__(self, f.name, v)

    @property
    def vec(self) -> np.ndarray:
        return np.array([getattr(self, name) for name in STATE_FIELDS], dtype=float)

    @classmethod
    def from_vec(cls, v) -> "CdmState":
        v = np.asarray(v, dtype=float).ravel()
        if v.shape[0] != STATE_DIM:
            raise ValueError(f"expected {STATE_DIM} state components, got {v.shape[0]}")
        return cls(*v.tolist())


def as_vec(s) -> np.ndarray:
    """Return the 12-vector for a CdmState or anything array-like."""
    if isinstance(s, CdmState):
        return s.vec
    return np.asarray(s, dtype=float)


def clip_action(u, a_box: float) -> np.ndarray:
    return np.clip(np.asarray(u, dtype=float), -a_box, a_box)


@dataclass(frozen=True)
class ControlAction:
    """Bounded control input; components are clipped to [-a_box, a_box] on construction."""

    u: np.ndarray
    a_box: float = 1.0

    def __post_init__(self):
        if self.a_box <= 0:
            raise ValueError("a_box must be positive")
        object.__setattr__(self, "u", clip_action(self.u, self.a_box))

    @property
    def dim(self) -> int:
        return self.u.shape[0]

    @property
    def diameter(self) -> float:
        return 2.0 * self.a_box * math.sqrt(self.dim)


def action_set_diameter(a_box: float, m: int) -> float:
    return 2.0 * a_box * math.sqrt(m)


class PolicySource(str, enum.Enum):
    LEARNER = "Learner"
    RECOVERY = "Recovery"


RECOVERY_PENALTY = 1.0


@dataclass(frozen=True)
class TransitionRecord:
    state: np.ndarray
    learner_action: np.ndarray
    penalized_reward: float
    policy_tag: PolicySource
    cost: float = 0.0
    raw_reward: float = 0.0

    @classmethod
    def make(cls, state, learner_action, raw_reward: float, policy_tag: PolicySource,
             cost: float = 0.0) -> "TransitionRecord":
        z = RECOVERY_PENALTY if policy_tag is PolicySource.RECOVERY else 0.0
        return cls(np.asarray(state, dtype=float), np.asarray(learner_action, dtype=float),
                   float(raw_reward) - z, policy_tag, float(cost), float(raw_reward))


@dataclass
class ReplayBuffer:
    """Trajectory buffer; records are kept grouped by episode in insertion order."""

    capacity: int = 1_000_000
    episodes: list[list[TransitionRecord]] = field(default_factory=list)
    _open: bool = False

    def start_episode(self) -> None:
        self.episodes.append([])
        self._open = True

    def push(self, record: TransitionRecord) -> None:
        if not self._open:
            self.start_episode()
        if len(self) >= self.capacity:
            raise OverflowError(f"replay buffer full ({self.capacity} records)")
        self.episodes[-1].append(record)

    def end_episode(self) -> None:
        self._open = False

    def clear(self) -> None:
        self.episodes.clear()
        self._open = False

    def __len__(self) -> int:
        return sum(len(ep) for ep in self.episodes)

    def __iter__(self) -> Iterator[TransitionRecord]:
        for ep in self.episodes:
            yield from ep

    def nonempty_episodes(self) -> list[list[TransitionRecord]]:
        return [ep for ep in self.episodes if ep]


@dataclass(frozen=True)
class CmdpSpec:
    gamma: float = 0.99
    cost_threshold: float = 0.0
    episode_length: int = 200
    num_updates: int = 1

    def __post_init__(self):
        if not 0.0 < self.gamma < 1.0:
            raise ValueError("gamma must lie in (0, 1)")
        if self.cost_threshold < 0:
            raise ValueError("cost_threshold must be >= 0")
        if self.episode_length < 1 or self.num_updates < 1:
            raise ValueError("episode_length and num_updates must be >= 1")


def discounted_return(trajectory: Sequence[tuple[float, float]], gamma: float) -> tuple[float, float]:
    """Discounted reward and cost sums (J_R, J_C) of a trajectory of (reward, cost) pairs."""
    if not 0.0 < gamma < 1.0:
        raise ValueError("gamma must lie in (0, 1)")
    if len(trajectory) == 0:
        return 0.0, 0.0
    rc = np.asarray(trajectory, dtype=float).reshape(-1, 2)
    disc = gamma ** np.arange(rc.shape[0])
    return float(disc @ rc[:, 0]), float(disc @ rc[:, 1])


def write_trajectory_csv(path, states: Iterable, actions: Iterable, rewards: Iterable[float],
                         costs: Iterable[float], tags: Iterable[PolicySource]) -> None:
    """One row per step: 12 state fields, action fields, reward, cost, policy_tag."""
    rows = list(zip(states, actions, rewards, costs, tags))
    m = len(np.atleast_1d(rows[0][1])) if rows else 0
    header = list(STATE_FIELDS) + [f"u{i}" for i in range(m)] + ["reward", "cost", "policy_tag"]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for s, a, r, c, tag in rows:
            w.writerow([repr(float(v)) for v in as_vec(s)]
                       + [repr(float(v)) for v in np.atleast_1d(a)]
                       + [repr(float(r)), repr(float(c)), PolicySource(tag).value])


def read_trajectory_csv(path):
    """Inverse of write_trajectory_csv: (states, actions, rewards, costs, tags)."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        m = sum(1 for h in header if h.startswith("u") and h[1:].isdigit())
        states, actions, rewards, costs, tags = [], [], [], [], []
        for row in reader:
            vals = row[:-1]
            states.append(np.array([float(v) for v in vals[:STATE_DIM]]))
            actions.append(np.array([float(v) for v in vals[STATE_DIM:STATE_DIM + m]]))
            rewards.append(float(vals[STATE_DIM + m]))
            costs.append(float(vals[STATE_DIM + m + 1]))
            tags.append(PolicySource(row[-1]))
    return states, actions, rewards, costs, tags
