"""Toy continuous-control environments with analytic structure.

Three tasks, all deterministic given (seed, action sequence):

* ``lqr2`` - a noisy double integrator with quadratic costs. Its optimal
  linear policy is computable from the discounted algebraic Riccati equation,
  which gives learning curves an exact reference line.
* ``pointmass`` - 2-D double integrator steering to the origin; episodes end
  at the goal radius.
* ``pendulum1`` - torque-limited swing-up with the usual trig observation.

States are clipped to documented boxes so per-step rewards stay bounded.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg


class EnvironmentFault(RuntimeError):
    """The environment received an unusable action (non-finite values)."""


@dataclass(frozen=True)
class EnvSpec:
    state_dim: int
    action_dim: int
    action_low: np.ndarray
    action_high: np.ndarray
    max_episode_steps: int


@dataclass(frozen=True)
class StepResult:
    next_state: np.ndarray
    reward: float
    terminal: bool  # true episode end: no successor value
    truncated: bool  # time-limit cut: bootstrap from next_state


def _check_action(action: np.ndarray, dim: int) -> np.ndarray:
    action = np.asarray(action, dtype=np.float64)
    if action.shape != (dim,):
        raise ValueError(f"action shape {action.shape}, expected ({dim},)")
    if not np.isfinite(action).all():
        raise EnvironmentFault(f"non-finite action {action}")
    return action


class Lqr2:
    """Double integrator x=(position, velocity), scalar push on the velocity.

    Dynamics x' = A x + B u + noise with A = [[1, 1], [0, 1]], B = [[0], [1]];
    reward -(x^T x + 0.1 u^2), so returns are never positive. The state is
    clipped to +-5 per coordinate, bounding the per-step reward to
    [-50.9, 0]. Initial states are uniform in [-1, 1]^2; episodes are cut
    after 50 steps (no true terminals).
    """

    A = np.array([[1.0, 1.0], [0.0, 1.0]])
    B = np.array([[0.0], [1.0]])
    Q = np.eye(2)
    R = np.array([[0.1]])
    STATE_CLIP = 5.0

    def __init__(self, noise_std: float = 0.01):
        if noise_std < 0.0:
            raise ValueError(f"noise_std must be non-negative, got {noise_std}")
        self.noise_std = float(noise_std)
        self.spec = EnvSpec(
            state_dim=2,
            action_dim=1,
            action_low=np.array([-3.0]),
            action_high=np.array([3.0]),
            max_episode_steps=50,
        )
        self._x = np.zeros(2)
        self._t = 0

    def reset(self, rng: np.random.Generator) -> np.ndarray:
        self._x = rng.uniform(-1.0, 1.0, size=2)
        self._t = 0
        return self._x.copy()

    def step(self, action: np.ndarray, rng: np.random.Generator) -> StepResult:
        u = _check_action(action, 1)
        x = self._x
        reward = -float(x @ self.Q @ x + u @ self.R @ u)
        nxt = self.A @ x + self.B @ u
        if self.noise_std > 0.0:
            nxt = nxt + self.noise_std * rng.standard_normal(2)
        nxt = np.clip(nxt, -self.STATE_CLIP, self.STATE_CLIP)
        self._x = nxt
        self._t += 1
        return StepResult(
            next_state=nxt.copy(),
            reward=reward,
            terminal=False,
            truncated=self._t >= self.spec.max_episode_steps,
        )


def lqr_optimal_gain(gamma: float) -> tuple[np.ndarray, np.ndarray]:
    """Feedback gain K and cost matrix P for the discounted lqr2 problem.

    Solves the discounted discrete algebraic Riccati equation via the usual
    sqrt(gamma) rescaling of (A, B); the optimal deterministic policy is
    u = -K x with discounted value -x^T P x (plus a noise-floor constant).
    """
    if not 0.0 < gamma < 1.0:
        raise ValueError(f"gamma must be in (0, 1), got {gamma}")
    root = np.sqrt(gamma)
    p = scipy.linalg.solve_discrete_are(root * Lqr2.A, root * Lqr2.B, Lqr2.Q, Lqr2.R)
    k = gamma * np.linalg.solve(
        Lqr2.R + gamma * Lqr2.B.T @ p @ Lqr2.B, Lqr2.B.T @ p @ Lqr2.A
    )
    return k, p


def riccati_policy(gamma: float, env: Lqr2):
    """Deterministic optimal-control policy for lqr2, clipped to the action box."""
    k, _ = lqr_optimal_gain(gamma)
    lo, hi = env.spec.action_low, env.spec.action_high

    def act(state: np.ndarray) -> np.ndarray:
        return np.clip(-k @ state, lo, hi)

    return act


class PointMass:
    """2-D double integrator steered by acceleration toward the origin.

    State (px, py, vx, vy), dt = 0.1. Velocity is clipped to +-2 and position
    to +-3, so the per-step reward -|p| - 0.01|u|^2 stays in [-4.27, 0].
    Starts are uniform positions in [-1, 1]^2 at least 0.3 from the goal,
    with zero velocity; reaching within 0.1 of the goal ends the episode.
    """

    DT = 0.1
    GOAL_RADIUS = 0.1
    VEL_CLIP = 2.0
    POS_CLIP = 3.0

    def __init__(self):
        self.spec = EnvSpec(
            state_dim=4,
            action_dim=2,
            action_low=np.array([-1.0, -1.0]),
            action_high=np.array([1.0, 1.0]),
            max_episode_steps=100,
        )
        self._state = np.zeros(4)
        self._t = 0

    def reset(self, rng: np.random.Generator) -> np.ndarray:
        pos = rng.uniform(-1.0, 1.0, size=2)
        while np.linalg.norm(pos) < 3.0 * self.GOAL_RADIUS:
            pos = rng.uniform(-1.0, 1.0, size=2)
        self._state = np.concatenate([pos, np.zeros(2)])
        self._t = 0
        return self._state.copy()

    def step(self, action: np.ndarray, rng: np.random.Generator) -> StepResult:
        u = _check_action(action, 2)
        pos, vel = self._state[:2], self._state[2:]
        vel = np.clip(vel + self.DT * u, -self.VEL_CLIP, self.VEL_CLIP)
        pos = np.clip(pos + self.DT * vel, -self.POS_CLIP, self.POS_CLIP)
        dist = float(np.linalg.norm(pos))
        reward = -dist - 0.01 * float(u @ u)
        self._state = np.concatenate([pos, vel])
        self._t += 1
        terminal = dist < self.GOAL_RADIUS
        return StepResult(
            next_state=self._state.copy(),
            reward=reward,
            terminal=terminal,
            truncated=not terminal and self._t >= self.spec.max_episode_steps,
        )


class Pendulum1:
    """Torque-limited pendulum swing-up with observation (cos a, sin a, da/dt).

    Standard parameters: g = 10, m = l = 1, dt = 0.05, torque box +-2,
    angular velocity clipped to +-8. Reward -(angle^2 + 0.1 vel^2 +
    0.001 u^2) with the angle wrapped to [-pi, pi], bounding it to
    [-16.28, 0]. No true terminals; episodes are cut after 200 steps.
    """

    G = 10.0
    DT = 0.05
    VEL_CLIP = 8.0

    def __init__(self):
        self.spec = EnvSpec(
            state_dim=3,
            action_dim=1,
            action_low=np.array([-2.0]),
            action_high=np.array([2.0]),
            max_episode_steps=200,
        )
        self._angle = 0.0
        self._vel = 0.0
        self._t = 0

    def _obs(self) -> np.ndarray:
        return np.array([np.cos(self._angle), np.sin(self._angle), self._vel])

    def reset(self, rng: np.random.Generator) -> np.ndarray:
        self._angle = rng.uniform(-np.pi, np.pi)
        self._vel = rng.uniform(-1.0, 1.0)
        self._t = 0
        return self._obs()

    def step(self, action: np.ndarray, rng: np.random.Generator) -> StepResult:
        u = float(_check_action(action, 1)[0])
        wrapped = (self._angle + np.pi) % (2.0 * np.pi) - np.pi
        reward = -(wrapped**2 + 0.1 * self._vel**2 + 0.001 * u**2)
        acc = 1.5 * self.G * np.sin(self._angle) + 3.0 * u
        self._vel = float(np.clip(self._vel + acc * self.DT, -self.VEL_CLIP, self.VEL_CLIP))
        self._angle = self._angle + self._vel * self.DT
        self._t += 1
        return StepResult(
            next_state=self._obs(),
            reward=float(reward),
            terminal=False,
            truncated=self._t >= self.spec.max_episode_steps,
        )


ENV_NAMES = ("lqr2", "pointmass", "pendulum1")


def make_env(name: str, noise_std: float | None = None):
    """Build an environment by name. ``noise_std`` overrides lqr2 process noise."""
    if name == "lqr2":
        return Lqr2() if noise_std is None else Lqr2(noise_std=noise_std)
    if noise_std is not None:
        raise ValueError(f"noise_std override only applies to lqr2, not {name!r}")
    if name == "pointmass":
        return PointMass()
    if name == "pendulum1":
        return Pendulum1()
    raise ValueError(f"unknown environment {name!r}; known: {', '.join(ENV_NAMES)}")
