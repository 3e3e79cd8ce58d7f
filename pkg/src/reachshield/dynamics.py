"""Discrete-time linear centroidal dynamics, s' = A s + B u, with a constant-one
augmentation coordinate carrying affine terms such as gravity."""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace

import numpy as np

from .statespace import IDX, STATE_DIM, as_vec

DEFAULT_DT = 0.016
GRAVITY = 9.81


@dataclass(frozen=True)
class LinearDynamics:
    A: np.ndarray
    B: np.ndarray
    dt: float = DEFAULT_DT
    augmented: bool = True

    def __post_init__(self):
        A = np.array(self.A, dtype=float)
        B = np.array(self.B, dtype=float)
        if B.ndim == 1:
            B = B[:, None]
        if A.ndim != 2 or A.shape[0] != A.shape[1]:
            raise ValueError(f"A must be square, got {A.shape}")
        if B.shape[0] != A.shape[0]:
            raise ValueError(f"B has {B.shape[0]} rows, A has {A.shape[0]}")
        if not self.dt > 0:
            raise ValueError("dt must be positive")
        if self.augmented:
            e = np.zeros(A.shape[0])
            e[-1] = 1.0
            if not (np.array_equal(A[-1], e) and not B[-1].any()):
                raise ValueError("augmentation row must be [0 ... 0 1] in A and zero in B")
        A.setflags(write=False)
        B.setflags(write=False)
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "B", B)

    @property
    def n(self) -> int:
        return self.A.shape[0]

    @property
    def m(self) -> int:
        return self.B.shape[1]

    @property
    def state_dim(self) -> int:
        return self.n - 1 if self.augmented else self.n

    @property
    def affine_bias(self) -> np.ndarray:
        if not self.augmented:
            return np.zeros(self.n)
        return self.A[:, -1].copy()

    @property
    def core_A(self) -> np.ndarray:
        """State matrix without the augmentation coordinate."""
        k = self.state_dim
        return self.A[:k, :k]

    @property
    def core_B(self) -> np.ndarray:
        return self.B[: self.state_dim]

    def to_json(self) -> str:
        return json.dumps({
            "n": self.n, "m": self.m, "dt": self.dt, "augmented": self.augmented,
            "A": self.A.ravel().tolist(), "B": self.B.ravel().tolist(),
            "affine_bias": self.affine_bias.tolist(),
        })

    @classmethod
    def from_json(cls, text: str) -> "LinearDynamics":
        d = json.loads(text)
        n, m = int(d["n"]), int(d["m"])
        A = np.asarray(d["A"], dtype=float).reshape(n, n)
        B = np.asarray(d["B"], dtype=float).reshape(n, m)
        aug = bool(d.get("augmented", True))
        if aug and "affine_bias" in d:
            A[:, -1] = np.asarray(d["affine_bias"], dtype=float)
            A[-1, -1] = 1.0
        return cls(A, B, float(d["dt"]), aug)


@dataclass(frozen=True)
class NoiseModel:
    """Zero-mean Gaussian process noise on the (de-augmented) state."""

    sigma: np.ndarray = field(default_factory=lambda: np.zeros(STATE_DIM))
    enabled: bool = True

    def __post_init__(self):
        sigma = np.array(self.sigma, dtype=float)
        if np.any(sigma < 0):
            raise ValueError("noise sigma must be non-negative")
        object.__setattr__(self, "sigma", sigma)

    def draw(self, rng: np.random.Generator) -> np.ndarray:
        if not self.enabled:
            return np.zeros_like(self.sigma)
        return self.sigma * rng.standard_normal(self.sigma.shape[0])


def velocity_noise(sigma_lin: float, sigma_ang: float) -> NoiseModel:
    sigma = np.zeros(STATE_DIM)
    sigma[[IDX["xdot"], IDX["ydot"], IDX["zdot"]]] = sigma_lin
    sigma[[IDX["rolldot"], IDX["pitchdot"], IDX["yawdot"]]] = sigma_ang
    return NoiseModel(sigma)


@dataclass(frozen=True)
class ModelError:
    delta_A_scale: float = 0.0
    delta_B_scale: float = 0.0
    epsilon: float = 0.0

    def __post_init__(self):
        if self.delta_A_scale < 0 or self.delta_B_scale < 0:
            raise ValueError("perturbation scales must be non-negative")


def build_cdm(mass: float = 24.0, inertia_diag=(0.35, 0.9, 0.9), dt: float = DEFAULT_DT,
              force_scale: float = 1.0, torque_scale: float = 1.0, gravity: float = 0.0,
              extra_inputs: int = 0) -> LinearDynamics:
    """Forward-Euler double integrators per translational and rotational axis.

    Inputs are (Fx, Fy, Fz, tau_roll, tau_pitch, tau_yaw) in units of
    force_scale newtons / torque_scale newton-metres, followed by
    ``extra_inputs`` columns that do not enter the dynamics. ``gravity`` is
    the uncompensated part of g and enters through the augmentation column.
    """
    inertia = np.asarray(inertia_diag, dtype=float)
    if not mass > 0:
        raise ValueError("mass must be positive")
    if inertia.shape != (3,) or np.any(inertia <= 0):
        raise ValueError("inertia_diag must be three positive numbers")
    if not dt > 0:
        raise ValueError("dt must be positive")
    n = STATE_DIM + 1
    A = np.eye(n)
    B = np.zeros((n, 6 + extra_inputs))
    for pos, vel in (("x", "xdot"), ("y", "ydot"), ("z", "zdot"),
                     ("roll", "rolldot"), ("pitch", "pitchdot"), ("yaw", "yawdot")):
        A[IDX[pos], IDX[vel]] = dt
    for j, vel in enumerate(("xdot", "ydot", "zdot")):
        B[IDX[vel], j] = dt * force_scale / mass
    for j, vel in enumerate(("rolldot", "pitchdot", "yawdot")):
        B[IDX[vel], 3 + j] = dt * torque_scale / inertia[j]
    A[IDX["zdot"], -1] = -dt * gravity
    return LinearDynamics(A, B, dt)


def augment(dyn: LinearDynamics, s) -> np.ndarray:
    s = as_vec(s)
    if dyn.augmented:
        return np.append(s, 1.0)
    return s


def step(dyn: LinearDynamics, s, a, noise: np.ndarray | None = None) -> np.ndarray:
    """One transition; ``noise`` is an already-drawn perturbation added to the state."""
    s = as_vec(s)
    a = np.asarray(getattr(a, "u", a), dtype=float)
    if s.shape != (dyn.state_dim,):
        raise ValueError(f"state has shape {s.shape}, dynamics expects ({dyn.state_dim},)")
    if a.shape != (dyn.m,):
        raise ValueError(f"action has shape {a.shape}, dynamics expects ({dyn.m},)")
    k = dyn.state_dim
    nxt = dyn.A[:k, :k] @ s + dyn.B[:k] @ a
    if dyn.augmented:
        nxt = nxt + dyn.A[:k, -1]
    if noise is not None:
        nxt = nxt + noise
    return nxt


def rollout(dyn: LinearDynamics, s0, actions) -> list[np.ndarray]:
    """Noise-free states s_1 ... s_len(actions)."""
    out = []
    s = as_vec(s0)
    for a in actions:
        s = step(dyn, s, a)
        out.append(s)
    return out


def sigma_max(M) -> float:
    """Largest singular value."""
    M = np.atleast_2d(np.asarray(M, dtype=float))
    if M.size == 0:
        return 0.0
    return float(np.linalg.norm(M, 2))


def _random_with_norm(shape, scale: float, rng: np.random.Generator) -> np.ndarray:
    if scale == 0.0:
        return np.zeros(shape)
    G = rng.standard_normal(shape)
    return G * (scale / sigma_max(G))


def perturb(dyn: LinearDynamics, err: ModelError, rng: np.random.Generator):
    """Random model mismatch of the requested spectral size.

    Returns (perturbed dynamics, realized epsilon). Only the state block and the
    dynamic rows of B are perturbed; the affine column and augmentation row are kept.
    """
    k = dyn.state_dim
    dA = _random_with_norm((k, k), err.delta_A_scale, rng)
    dB = _random_with_norm((k, dyn.m), err.delta_B_scale, rng)
    return apply_delta(dyn, dA, dB)


def apply_delta(dyn: LinearDynamics, dA, dB):
    k = dyn.state_dim
    A = dyn.A.copy()
    B = dyn.B.copy()
    A[:k, :k] += dA
    B[:k] += dB
    eps = max(sigma_max(dA), sigma_max(dB))
    return replace(dyn, A=A, B=B), eps
