"""Built-in continuous-control tasks and the end-of-episode reward wrapper."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from silcr.nn import ConfigurationError


class ActionError(ValueError):
    """An action contained NaN."""


@dataclass(frozen=True)
class EnvSpec:
    state_dim: int
    action_dim: int
    action_low: np.ndarray
    action_high: np.ndarray
    max_episode_steps: int

    def __post_init__(self) -> None:
        if not np.all(np.asarray(self.action_low) < np.asarray(self.action_high)):
            raise ConfigurationError("action_low must be below action_high elementwise")
        if self.max_episode_steps < 1:
            raise ConfigurationError("max_episode_steps must be >= 1")


@dataclass
class StepResult:
    next_state: np.ndarray
    reward: float
    terminated: bool
    truncated: bool


class Env:
    """Base class: subclasses implement ``_reset`` and ``_step``.

    Time-limit truncation and action clamping live here.
    """

    spec: EnvSpec
    name: str = "env"

    def __init__(self) -> None:
        self._t = 0
        self._state: np.ndarray | None = None

    def reset(self, seed: int) -> np.ndarray:
        self._t = 0
        self._state = self._reset(np.random.default_rng(seed))
        return self._state.copy()

    def step(self, action) -> StepResult:
        if self._state is None:
            raise RuntimeError("step() called before reset()")
        a = np.asarray(action, dtype=np.float64).reshape(self.spec.action_dim)
        if np.isnan(a).any():
            raise ActionError("action contains NaN")
        a = np.clip(a, self.spec.action_low, self.spec.action_high)
        state, reward, terminated = self._step(a)
        self._t += 1
        self._state = state
        truncated = (not terminated) and self._t >= self.spec.max_episode_steps
        return StepResult(state.copy(), float(reward), bool(terminated), bool(truncated))

    @property
    def elapsed_steps(self) -> int:
        return self._t

    def _reset(self, rng: np.random.Generator) -> np.ndarray:
        raise NotImplementedError

    def _step(self, action: np.ndarray) -> tuple[np.ndarray, float, bool]:
        raise NotImplementedError


class PointGoal2D(Env):
    """Point mass chasing a goal in the square arena ``[-5, 5]^2``.

    State is ``(x, y, vx, vy, goal_x, goal_y)``; the action is an acceleration.
    """

    name = "pointgoal"
    ARENA = 5.0
    DT = 0.1
    DAMPING = 0.95
    GOAL_RADIUS = 0.3
    GOAL_BONUS = 1.0
    DISTANCE_COST = 0.1

    def __init__(self, max_episode_steps: int = 200):
        super().__init__()
        self.spec = EnvSpec(6, 2, -np.ones(2), np.ones(2), max_episode_steps)

    def _reset(self, rng):
        pos = rng.uniform(-self.ARENA, self.ARENA, size=2)
        goal = rng.uniform(-self.ARENA, self.ARENA, size=2)
        return np.concatenate([pos, np.zeros(2), goal])

    def set_state(self, position, velocity, goal) -> None:
        self._state = np.concatenate([position, velocity, goal]).astype(np.float64)

    def _step(self, action):
        pos, vel, goal = self._state[0:2], self._state[2:4], self._state[4:6]
        vel = self.DAMPING * vel + self.DT * action
        pos = np.clip(pos + self.DT * vel, -self.ARENA, self.ARENA)
        dist = float(np.linalg.norm(pos - goal))
        reward = -self.DISTANCE_COST * dist
        terminated = dist < self.GOAL_RADIUS
        if terminated:
            reward += self.GOAL_BONUS
        return np.concatenate([pos, vel, goal]), reward, terminated


def wrap_angle(theta: float) -> float:
    return ((theta + math.pi) % (2.0 * math.pi)) - math.pi


class PendulumSwingUp(Env):
    """Torque-limited pendulum; angle 0 is upright. State is ``(cos, sin, angular velocity)``."""

    name = "pendulum"
    G = 10.0
    M = 1.0
    L = 1.0
    DT = 0.05
    MAX_SPEED = 8.0
    MAX_TORQUE = 2.0

    def __init__(self, max_episode_steps: int = 200):
        super().__init__()
        self.spec = EnvSpec(3, 1, np.array([-self.MAX_TORQUE]), np.array([self.MAX_TORQUE]),
                            max_episode_steps)
        self.theta = 0.0
        self.theta_dot = 0.0

    def _obs(self):
        return np.array([math.cos(self.theta), math.sin(self.theta), self.theta_dot])

    def _reset(self, rng):
        self.theta = float(rng.uniform(-math.pi, math.pi))
        self.theta_dot = float(rng.uniform(-1.0, 1.0))
        return self._obs()

    def set_state(self, theta: float, theta_dot: float) -> None:
        self.theta, self.theta_dot = float(theta), float(theta_dot)
        self._state = self._obs()

    def _step(self, action):
        u = float(action[0])
        th, thdot = self.theta, self.theta_dot
        reward = -(wrap_angle(th) ** 2 + 0.1 * thdot**2 + 0.001 * u**2)
        accel = 3.0 * self.G / (2.0 * self.L) * math.sin(th) + 3.0 * u / (self.M * self.L**2)
        thdot = min(max(thdot + accel * self.DT, -self.MAX_SPEED), self.MAX_SPEED)
        self.theta = th + thdot * self.DT
        self.theta_dot = thdot
        return self._obs(), reward, False


class SparseMountainCar(Env):
    """Underpowered car in a valley; reaching position 0.45 pays +10 and ends the episode."""

    name = "mountaincar"
    MIN_POS = -1.2
    MAX_POS = 0.6
    MAX_SPEED = 0.07
    GOAL_POS = 0.45
    POWER = 0.0015
    GOAL_BONUS = 10.0

    def __init__(self, max_episode_steps: int = 500):
        super().__init__()
        self.spec = EnvSpec(2, 1, -np.ones(1), np.ones(1), max_episode_steps)

    def _reset(self, rng):
        return np.array([rng.uniform(-0.6, -0.4), 0.0])

    def set_state(self, position: float, velocity: float) -> None:
        self._state = np.array([position, velocity], dtype=np.float64)

    def _step(self, action):
        u = float(action[0])
        pos, vel = float(self._state[0]), float(self._state[1])
        vel += self.POWER * u - 0.0025 * math.cos(3.0 * pos)
        vel = min(max(vel, -self.MAX_SPEED), self.MAX_SPEED)
        pos = min(max(pos + vel, self.MIN_POS), self.MAX_POS)
        if pos == self.MIN_POS and vel < 0.0:
            vel = 0.0
        reward = -0.01 * u**2
        terminated = pos >= self.GOAL_POS
        if terminated:
            reward += self.GOAL_BONUS
        return np.array([pos, vel]), reward, terminated


class EpisodicReward(Env):
    """Pays 0 on every step and the summed underlying reward on the final step."""

    def __init__(self, env: Env):
        self.env = env
        self.spec = env.spec
        self.name = env.name
        self._accumulated = 0.0

    def reset(self, seed: int) -> np.ndarray:
        self._accumulated = 0.0
        return self.env.reset(seed)

    def step(self, action) -> StepResult:
        res = self.env.step(action)
        self._accumulated += res.reward
        if res.terminated or res.truncated:
            res.reward = self._accumulated
            self._accumulated = 0.0
        else:
            res.reward = 0.0
        return res

    @property
    def elapsed_steps(self) -> int:
        return self.env.elapsed_steps


def episodic_wrap(env: Env) -> EpisodicReward:
    return EpisodicReward(env)


ENVIRONMENTS = {
    "pointgoal": PointGoal2D,
    "pendulum": PendulumSwingUp,
    "mountaincar": SparseMountainCar,
}


def make_env(name: str, episodic: bool = False) -> Env:
    try:
        env = ENVIRONMENTS[name]()
    except KeyError:
        raise ConfigurationError(
            f"unknown environment {name!r}; choose from {sorted(ENVIRONMENTS)}"
        ) from None
    return episodic_wrap(env) if episodic else env
