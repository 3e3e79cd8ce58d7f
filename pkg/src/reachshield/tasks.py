"""Locomotion-analog tasks on the linear centroidal model: rewards, fall cost and stepping."""

from __future__ import annotations

import enum
import json
import math
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from . import dynamics as dyn_mod
from .dynamics import LinearDynamics, ModelError, NoiseModel
from .shield import SafetyTriggerSet, SetClass, classify, get_trigger_set
from .statespace import IDX, as_vec

BASE_INPUTS = 6
FOOT_INPUTS = 4


class TaskName(str, enum.Enum):
    EFFICIENT_GAIT = "EfficientGait"
    CATWALK = "Catwalk"
    TWO_LEG_BALANCE = "TwoLegBalance"
    PACING = "Pacing"


@dataclass(frozen=True)
class TaskSpec:
    name: TaskName = TaskName.TWO_LEG_BALANCE
    survival_bonus: float = 1.0
    target_velocity: tuple[float, float, float] = (0.3, 0.0, 0.0)
    target_height: float = 0.45
    energy_weight: float = 0.1
    sigma_lin: float = 0.02
    sigma_ang: float = 0.02
    noise_enabled: bool = True
    episode_length: int = 200
    trigger_set: str = "ctri1"
    catwalk_kappa: float = 0.05
    nominal_half_width: float = 0.1
    action_bound: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "name", TaskName(self.name))
        object.__setattr__(self, "target_velocity", tuple(float(v) for v in self.target_velocity))
        if not self.survival_bonus > 0:
            raise ValueError("survival bonus must be positive")
        if self.episode_length < 0:
            raise ValueError("episode_length must be >= 0")
        get_trigger_set(self.trigger_set)

    @property
    def action_dim(self) -> int:
        return BASE_INPUTS + (FOOT_INPUTS if self.name is TaskName.CATWALK else 0)

    @property
    def noise(self) -> NoiseModel:
        return dyn_mod.velocity_noise(self.sigma_lin, self.sigma_ang) if self.noise_enabled \
            else NoiseModel(enabled=False)

    @property
    def safety_set(self) -> SafetyTriggerSet:
        return get_trigger_set(self.trigger_set)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["name"] = self.name.value
        d["target_velocity"] = list(self.target_velocity)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TaskSpec":
        return cls(**d)

    @classmethod
    def from_json(cls, text: str) -> "TaskSpec":
        return cls.from_dict(json.loads(text))


def _sigmoid(x: float) -> float:
    return 0.5 * (1.0 + math.tanh(0.5 * x))


@dataclass(frozen=True)
class CatwalkAction:
    """Lateral foot placements (m); left feet never cross to the right of right feet."""

    p_FRy: float
    p_FLy: float
    p_RRy: float
    p_RLy: float

    @classmethod
    def from_raw(cls, raw, a_box: float = 1.0, nominal_half_width: float = 0.1) -> "CatwalkAction":
        """Map four bounded raw inputs (front centre, front spread, rear centre, rear spread).

        Each pair's half-width is 2 * nominal_half_width * sigmoid(2 * spread): positive,
        equal to the nominal at zero input and at most twice the nominal.
        """
        r = np.asarray(raw, dtype=float) / a_box
        feet = []
        for centre_raw, spread_raw in ((r[0], r[1]), (r[2], r[3])):
            centre = nominal_half_width * centre_raw
            half = 2.0 * nominal_half_width * _sigmoid(2.0 * spread_raw)
            feet += [centre - half, centre + half]
        return cls(*feet)

    @property
    def front_width(self) -> float:
        return self.p_FLy - self.p_FRy

    @property
    def rear_width(self) -> float:
        return self.p_RLy - self.p_RRy

    @property
    def stance_width(self) -> float:
        return 0.5 * (self.front_width + self.rear_width)


def catwalk_placement(task: TaskSpec, a) -> CatwalkAction:
    a = np.asarray(a, dtype=float)
    return CatwalkAction.from_raw(a[BASE_INPUTS:BASE_INPUTS + FOOT_INPUTS], task.action_bound,
                                  task.nominal_half_width)


def reward(task: TaskSpec, s, a) -> float:
    """Per-step task reward (unscaled)."""
    s = as_vec(s)
    a = np.asarray(getattr(a, "u", a), dtype=float)
    e = task.survival_bonus
    if task.name is TaskName.EFFICIENT_GAIT:
        u = a[:BASE_INPUTS]
        return e - task.energy_weight * float(u @ u)
    if task.name is TaskName.CATWALK:
        return catwalk_reward(e, catwalk_placement(task, a))
    if task.name is TaskName.TWO_LEG_BALANCE:
        return e - (s[IDX["z"]] - task.target_height) ** 2
    v = s[[IDX["xdot"], IDX["ydot"], IDX["zdot"]]] - np.asarray(task.target_velocity)
    return e - float(v @ v)


def catwalk_reward(e: float, feet: CatwalkAction) -> float:
    return e - (feet.p_FRy - feet.p_FLy) ** 2 - (feet.p_RRy - feet.p_RLy) ** 2


def cost(s, failure_z: float = 0.1) -> float:
    return 1.0 if as_vec(s)[IDX["z"]] < failure_z else 0.0


def lateral_noise_std(task: TaskSpec, stance_width: float) -> float:
    """Catwalk couples narrow stances to larger lateral-velocity noise."""
    return task.sigma_lin * (1.0 + task.catwalk_kappa / (max(stance_width, 0.0) + 0.01))


def env_step(task: TaskSpec, dyn_true: LinearDynamics, s, a, rng: np.random.Generator,
             ts: SafetyTriggerSet | None = None):
    """Advance the true system one step.

    Returns (next_state, reward, cost, classification); reward is R(s, a)
    divided by the episode length, cost and classification refer to next_state.
    """
    ts = task.safety_set if ts is None else ts
    s = as_vec(s)
    a = np.asarray(getattr(a, "u", a), dtype=float)
    noise = None
    if task.noise_enabled:
        sigma = task.noise.sigma
        if task.name is TaskName.CATWALK:
            sigma = sigma.copy()
            sigma[IDX["ydot"]] = lateral_noise_std(task, catwalk_placement(task, a).stance_width)
        noise = sigma * rng.standard_normal(sigma.shape[0])
    nxt = dyn_mod.step(dyn_true, s, a, noise)
    r = reward(task, s, a) / max(task.episode_length, 1)
    return nxt, r, cost(nxt, ts.failure_z), classify(nxt, ts)


@dataclass(frozen=True)
class CdmParams:
    mass: float = 24.0
    inertia_diag: tuple[float, float, float] = (0.35, 0.9, 0.9)
    dt: float = dyn_mod.DEFAULT_DT
    force_scale: float = 240.0
    torque_scale: float = 3.0
    gravity: float = 0.0


@dataclass(frozen=True)
class TaskEnv:
    """Everything one run needs: task, true system T, approximate model T-hat, start state."""

    task: TaskSpec
    true_dyn: LinearDynamics
    model: LinearDynamics
    start: np.ndarray
    model_eps: float = 0.0

    @property
    def trigger_set(self) -> SafetyTriggerSet:
        return self.task.safety_set

    def reset(self) -> np.ndarray:
        return self.start.copy()

    def step(self, s, a, rng):
        return env_step(self.task, self.true_dyn, s, a, rng, self.trigger_set)

    def with_task(self, **changes) -> "TaskEnv":
        return replace(self, task=replace(self.task, **changes))


def make_env(task: TaskSpec, cdm: CdmParams = CdmParams(), model_error: ModelError = ModelError(),
             model_seed: int = 0) -> TaskEnv:
    """Build T from ``cdm`` and draw T-hat from it with ``model_seed``."""
    extra = task.action_dim - BASE_INPUTS
    true_dyn = dyn_mod.build_cdm(cdm.mass, cdm.inertia_diag, cdm.dt, cdm.force_scale,
                                 cdm.torque_scale, cdm.gravity, extra_inputs=extra)
    model, eps = dyn_mod.perturb(true_dyn, model_error, np.random.default_rng([model_seed, 7]))
    ts = task.safety_set
    start = np.zeros(true_dyn.state_dim)
    start[IDX["z"]] = nominal_height(ts)
    return TaskEnv(task, true_dyn, model, start, eps)


def nominal_height(ts: SafetyTriggerSet) -> float:
    """Standing height for the robot a trigger set was designed for."""
    return 0.25 if ts.z_max <= 0.3 else 0.45
