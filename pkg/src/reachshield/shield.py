"""Switching between the learner and the recovery controller.

The learner hands control to the recovery controller whenever the state is in
the trigger set. Control is handed back only once a noise-free rollout of the
learner's mean actions through the approximate model stays out of the trigger
set for ``w`` steps.
"""

from __future__ import annotations

import enum
import json
from dataclasses import asdict, dataclass, replace
from typing import Callable

import numpy as np

from . import dynamics as dyn_mod
from .dynamics import LinearDynamics
from .statespace import IDX, PolicySource, as_vec

Policy = Callable[[np.ndarray], np.ndarray]


class SetClass(str, enum.Enum):
    SAFE = "Safe"
    TRIGGER = "Trigger"
    FAILURE = "Failure"


@dataclass(frozen=True)
class SafetyTriggerSet:
    z_min: float = 0.4
    z_max: float = 0.55
    roll_max: float = 0.26
    pitch_max: float = 0.26
    ydot_max: float = 0.5
    rolldot_max: float = 0.5
    failure_z: float = 0.1

    def __post_init__(self):
        for name, v in asdict(self).items():
            if not v > 0:
                raise ValueError(f"trigger threshold {name} must be positive, got {v}")
        if not self.z_min < self.z_max:
            raise ValueError("z_min must be below z_max")
        if not self.failure_z < self.z_min:
            raise ValueError("failure_z must lie below z_min so failures are inside the trigger set")

    @classmethod
    def from_json(cls, text: str) -> "SafetyTriggerSet":
        return cls(**json.loads(text))

    def to_json(self) -> str:
        return json.dumps(asdict(self))


_PRESETS = {
    "ctri1": SafetyTriggerSet(),
    "ctri2": SafetyTriggerSet(ydot_max=0.375, rolldot_max=0.375),
    "ctri3": SafetyTriggerSet(ydot_max=0.25, rolldot_max=0.25),
    # smaller robot: only the height band changes; failure height scaled by the same ratio
    "a1": SafetyTriggerSet(z_min=0.2, z_max=0.3, failure_z=0.05),
}


def preset_trigger_sets() -> dict[str, SafetyTriggerSet]:
    return dict(_PRESETS)


def get_trigger_set(name: str) -> SafetyTriggerSet:
    try:
        return _PRESETS[name]
    except KeyError:
        raise KeyError(f"unknown trigger set {name!r}; choose from {sorted(_PRESETS)}") from None


_Z, _YD, _R, _P, _RD = IDX["z"], IDX["ydot"], IDX["roll"], IDX["pitch"], IDX["rolldot"]


def in_trigger(s: np.ndarray, ts: SafetyTriggerSet) -> bool:
    z = s[_Z]
    return bool(
        z < ts.z_min or z > ts.z_max
        or abs(s[_R]) > ts.roll_max or abs(s[_P]) > ts.pitch_max
        or abs(s[_YD]) > ts.ydot_max or abs(s[_RD]) > ts.rolldot_max
    )


def classify(s, ts: SafetyTriggerSet) -> SetClass:
    s = as_vec(s)
    if s[_Z] < ts.failure_z:
        return SetClass.FAILURE
    if in_trigger(s, ts):
        return SetClass.TRIGGER
    return SetClass.SAFE


def _mean(policy, s):
    f = getattr(policy, "mean_action", None)
    return f(s) if f is not None else policy(s)


def naive_select(s, learner, recovery, ts: SafetyTriggerSet):
    """Recovery acts on every trigger-set state, the learner everywhere else."""
    s = as_vec(s)
    if classify(s, ts) is SetClass.SAFE:
        return _mean(learner, s), PolicySource.LEARNER
    return _mean(recovery, s), PolicySource.RECOVERY


def reachability_check(model: LinearDynamics, s, learner, w: int, ts: SafetyTriggerSet) -> bool:
    """True iff the learner's next ``w`` predicted states under ``model`` are all Safe."""
    s = as_vec(s)
    for _ in range(w):
        s = dyn_mod.step(model, s, _mean(learner, s))
        if s[_Z] < ts.failure_z or in_trigger(s, ts):
            return False
    return True


def _mixed_rollout_safe(model, s, recovery, learner, prefix: int, w: int, ts) -> bool:
    for k in range(w):
        pol = recovery if k < prefix else learner
        s = dyn_mod.step(model, s, _mean(pol, s))
        if s[_Z] < ts.failure_z or in_trigger(s, ts):
            return False
    return True


def reachability_plan(model: LinearDynamics, s, recovery, learner, w: int,
                      ts: SafetyTriggerSet) -> int | None:
    """Smallest number of leading recovery steps after which the learner can finish
    a ``w``-step window without entering the trigger set; ``None`` if no prefix
    shorter than ``w`` works. Prefix 0 means no intervention is needed."""
    if w < 1:
        raise ValueError("planning horizon must be >= 1")
    s = as_vec(s)
    for prefix in range(w):
        if _mixed_rollout_safe(model, s, recovery, learner, prefix, w, ts):
            return prefix
    return None


@dataclass(frozen=True)
class SwitchState:
    prev_source: PolicySource | None = None
    consecutive_recovery_steps: int = 0

    def advance(self, source: PolicySource) -> "SwitchState":
        if source is PolicySource.RECOVERY:
            return SwitchState(source, self.consecutive_recovery_steps + 1)
        return SwitchState(source, 0)


class ShieldMode(str, enum.Enum):
    NONE = "none"            # learner always acts
    NAIVE = "naive"          # trigger-set rule only
    REACH = "reachability"   # trigger rule plus w-step hand-back check
    PLAN = "plan"            # hand back only when the minimal recovery prefix is 0


@dataclass(frozen=True)
class Decision:
    action: np.ndarray
    source: PolicySource
    switch: SwitchState
    learner_action: np.ndarray
    classification: SetClass


def select_action(switch: SwitchState, s, learner, recovery, model: LinearDynamics, w: int,
                  ts: SafetyTriggerSet, proposed=None, mode: ShieldMode = ShieldMode.REACH) -> Decision:
    """Final switching law.

    ``learner`` must expose deterministic mean actions (used for rollouts);
    ``proposed`` is the learner's actual (possibly sampled) action for this step
    and defaults to its mean.
    """
    s = as_vec(s)
    learner_a = _mean(learner, s) if proposed is None else np.asarray(proposed, dtype=float)
    cls = classify(s, ts)
    mode = ShieldMode(mode)
    if mode is ShieldMode.NONE:
        use_recovery = False
    elif cls is not SetClass.SAFE:
        use_recovery = True
    elif mode is ShieldMode.NAIVE or switch.prev_source is not PolicySource.RECOVERY:
        use_recovery = False
    elif mode is ShieldMode.PLAN and w >= 1:
        use_recovery = reachability_plan(model, s, recovery, learner, w, ts) != 0
    else:
        use_recovery = not reachability_check(model, s, learner, w, ts)
    source = PolicySource.RECOVERY if use_recovery else PolicySource.LEARNER
    action = _mean(recovery, s) if use_recovery else learner_a
    return Decision(action, source, switch.advance(source), learner_a, cls)


@dataclass(frozen=True)
class ShieldConfig:
    mode: ShieldMode = ShieldMode.REACH
    w: int = 10
    trigger_set: SafetyTriggerSet = SafetyTriggerSet()

    def with_horizon(self, w: int) -> "ShieldConfig":
        return replace(self, w=w)
