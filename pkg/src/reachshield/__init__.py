"""Reachability-shielded policy learning on a linear centroidal legged-robot model."""

from .dynamics import LinearDynamics, ModelError, NoiseModel, build_cdm, perturb, sigma_max, step
from .recovery import RecoveryController, SynthesisError, synthesize, verify_viability
from .shield import (SafetyTriggerSet, SetClass, ShieldConfig, ShieldMode, SwitchState, classify,
                     get_trigger_set, reachability_check, select_action)
from .statespace import CdmState, PolicySource, ReplayBuffer, TransitionRecord
from .theory import performance_bound, regret_experiment

__version__ = "0.1.0"
