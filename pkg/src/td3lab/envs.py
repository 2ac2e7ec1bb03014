"""Small deterministic-physics control tasks, rollouts and Monte-Carlo returns.

Every environment is a pure transition function: ``step(state, action)``
depends only on its arguments. Physics is written over a leading batch
axis so evaluation rollouts and Monte-Carlo value estimates run all
episodes in lockstep.

Integration is semi-implicit Euler: velocity first, then position with the
updated velocity.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, ContractError, PreconditionError
from .replay import End


@dataclass(frozen=True)
class EnvSpec:
    name: str
    state_dim: int          # observation size
    action_dim: int
    action_low: tuple
    action_high: tuple
    max_horizon: int
    dt: float
    reward_bound: float     # bound on |mean reward| per step
    constants: dict = field(default_factory=dict)


@dataclass(frozen=True)
class EnvState:
    x: np.ndarray           # physical state, env specific
    t: int = 0              # steps taken in the current episode
    key: int = 0            # reward-noise stream (only used by noisy envs)


def angle_normalize(theta):
    return ((theta + np.pi) % (2 * np.pi)) - np.pi


class Env:
    spec: EnvSpec

    # -- batched primitives, implemented per environment -------------------
    def reset_batch(self, rng, n):
        raise NotImplementedError

    def transition(self, x, a, t, key):
        """Batched dynamics: returns ``(x_next, reward, failed)``."""
        raise NotImplementedError

    def observe_batch(self, x):
        raise NotImplementedError

    def state_from_observation_batch(self, obs):
        raise NotImplementedError

    # -- single-episode API ------------------------------------------------
    def reset(self, rng) -> EnvState:
        x, keys = self.reset_batch(rng, 1)
        return EnvState(x[0], 0, int(keys[0]))

    def observe(self, state: EnvState):
        return self.observe_batch(state.x[None])[0]

    def from_observation(self, obs, t=0, key=0) -> EnvState:
        return EnvState(self.state_from_observation_batch(np.asarray(obs, dtype=np.float64)[None])[0],
                        t, key)

    def clip_action(self, action):
        action = np.asarray(action, dtype=np.float64)
        if np.isnan(action).any():
            raise ContractError("NaN in action")
        return np.clip(action, self.spec.action_low, self.spec.action_high)

    def step(self, state: EnvState, action):
        """Advance one step; returns ``(next_state, reward, End)``."""
        if state.t >= self.spec.max_horizon:
            raise ContractError("episode already reached its horizon")
        a = self.clip_action(action).reshape(self.spec.action_dim)
        x2, r, failed = self.transition(state.x[None], a[None], np.array([state.t]),
                                        np.array([state.key], dtype=np.uint64))
        t = state.t + 1
        if failed[0]:
            end = End.TERMINAL
        elif t >= self.spec.max_horizon:
            end = End.TIMEOUT
        else:
            end = End.NONE
        return EnvState(x2[0], t, state.key), float(r[0]), end

    def random_action(self, rng):
        return rng.uniform(self.spec.action_low, self.spec.action_high)


class Pendulum(Env):
    """Torque-limited pendulum swing-up.

    Angle convention: theta = 0 is upright, theta = pi hangs straight down
    (the stable equilibrium). Observation is (cos theta, sin theta,
    theta_dot). Reward is -(theta^2 + 0.1 theta_dot^2 + 0.001 u^2) with theta
    wrapped to [-pi, pi), evaluated before the step. Starts draw theta from
    U[-pi, pi] and theta_dot from U[-1, 1]. No failure states.
    """

    def __init__(self, g=10.0, m=1.0, length=1.0, dt=0.05, max_speed=8.0, max_torque=2.0,
                 max_horizon=200):
        self.g, self.m, self.length = g, m, length
        self.max_speed = max_speed
        self.spec = EnvSpec(
            "pendulum", 3, 1, (-max_torque,), (max_torque,), max_horizon, dt,
            reward_bound=np.pi**2 + 0.1 * max_speed**2 + 0.001 * max_torque**2,
            constants={"g": g, "m": m, "l": length, "max_speed": max_speed})

    def reset_batch(self, rng, n):
        x = np.empty((n, 2))
        x[:, 0] = rng.uniform(-np.pi, np.pi, size=n)
        x[:, 1] = rng.uniform(-1.0, 1.0, size=n)
        return x, np.zeros(n, dtype=np.uint64)

    def transition(self, x, a, t, key):
        th, thdot = x[:, 0], x[:, 1]
        u = a[:, 0]
        cost = angle_normalize(th) ** 2 + 0.1 * thdot**2 + 0.001 * u**2
        dt, g, m, l = self.spec.dt, self.g, self.m, self.length
        thdot2 = thdot + dt * (3 * g / (2 * l) * np.sin(th) + 3.0 / (m * l**2) * u)
        thdot2 = np.clip(thdot2, -self.max_speed, self.max_speed)
        th2 = th + dt * thdot2
        return np.stack([th2, thdot2], axis=1), -cost, np.zeros(len(x), dtype=bool)

    def observe_batch(self, x):
        return np.stack([np.cos(x[:, 0]), np.sin(x[:, 0]), x[:, 1]], axis=1)

    def state_from_observation_batch(self, obs):
        return np.stack([np.arctan2(obs[:, 1], obs[:, 0]), obs[:, 2]], axis=1)

    def energy(self, x):
        """Mechanical energy of the uniform rod (zero at the pivot height)."""
        x = np.atleast_2d(x)
        inertia = self.m * self.length**2 / 3
        return 0.5 * inertia * x[:, 1] ** 2 + self.m * self.g * self.length / 2 * np.cos(x[:, 0])


class PointReacher(Env):
    """2-D point mass pushed toward a goal inside a circular arena.

    State/observation: (px, py, vx, vy, gx, gy). Force action in [-1, 1]^2.
    Reward 1 - 0.5 * |p - goal| - 0.05 * |a|^2 after the step; leaving the
    arena (|p| > radius) is a failure and ends the episode as terminal.
    Starts: position U[-0.3, 0.3]^2, velocity 0, goal U[-0.6, 0.6]^2.
    """

    def __init__(self, dt=0.05, gain=2.0, damping=0.5, radius=1.0, max_horizon=200):
        self.gain, self.damping, self.radius = gain, damping, radius
        self.spec = EnvSpec("reacher2d", 6, 2, (-1.0, -1.0), (1.0, 1.0), max_horizon, dt,
                            reward_bound=1.0 + 0.5 * 2 * radius + 0.1,
                            constants={"gain": gain, "damping": damping, "radius": radius})

    def reset_batch(self, rng, n):
        x = np.zeros((n, 6))
        x[:, 0:2] = rng.uniform(-0.3, 0.3, size=(n, 2))
        x[:, 4:6] = rng.uniform(-0.6, 0.6, size=(n, 2))
        return x, np.zeros(n, dtype=np.uint64)

    def transition(self, x, a, t, key):
        dt = self.spec.dt
        v = x[:, 2:4] + dt * (self.gain * a - self.damping * x[:, 2:4])
        p = x[:, 0:2] + dt * v
        dist = np.linalg.norm(p - x[:, 4:6], axis=1)
        reward = 1.0 - 0.5 * dist - 0.05 * np.sum(a * a, axis=1)
        failed = np.linalg.norm(p, axis=1) > self.radius
        return np.concatenate([p, v, x[:, 4:6]], axis=1), reward, failed

    def observe_batch(self, x):
        return x.copy()

    def state_from_observation_batch(self, obs):
        return obs.copy()


_GOLDEN = np.uint64(0x9E3779B97F4A7C15)


def _splitmix64(z):
    z = z + _GOLDEN
    z = (z ^ (z >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)
    z = (z ^ (z >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)
    return z ^ (z >> np.uint64(31))


def counter_normal(key, t):
    """Standard normal draws that are a pure function of (key, t)."""
    key = np.atleast_1d(np.asarray(key, dtype=np.uint64))
    t = np.atleast_1d(np.asarray(t)).astype(np.uint64)
    with np.errstate(over="ignore"):
        h1 = _splitmix64(key * np.uint64(0x100000001B3) ^ t)
        h2 = _splitmix64(h1)
    u1 = ((h1 >> np.uint64(11)).astype(np.float64) + 0.5) / 2.0**53
    u2 = (h2 >> np.uint64(11)).astype(np.float64) / 2.0**53
    return np.sqrt(-2.0 * np.log(u1)) * np.cos(2 * np.pi * u2)


class NoisyLine(Env):
    """1-D position nudged by the action, with Gaussian reward noise.

    x' = clip(x + 0.1 a, -1, 1), reward = -x'^2 + noise_std * N(0, 1). The
    noise is a counter-based function of (episode key, step), so the
    transition stays pure. Starts x ~ U[-1, 1]; horizon 50; no failures.
    """

    def __init__(self, noise_std=1.0, speed=0.1, dt=0.05, max_horizon=50):
        self.noise_std, self.speed = noise_std, speed
        self.spec = EnvSpec("noisy1d", 1, 1, (-1.0,), (1.0,), max_horizon, dt, reward_bound=1.0,
                            constants={"noise_std": noise_std, "speed": speed})

    def reset_batch(self, rng, n):
        x = rng.uniform(-1.0, 1.0, size=(n, 1))
        keys = rng.integers(0, 2**63, size=n, dtype=np.uint64)
        return x, keys

    def transition(self, x, a, t, key):
        x2 = np.clip(x + self.speed * a, -1.0, 1.0)
        noise = counter_normal(key, t) if self.noise_std else 0.0
        return x2, -x2[:, 0] ** 2 + self.noise_std * noise, np.zeros(len(x), dtype=bool)

    def observe_batch(self, x):
        return x.copy()

    def state_from_observation_batch(self, obs):
        return obs.copy()


ENVS = {"pendulum": Pendulum, "reacher2d": PointReacher, "noisy1d": NoisyLine}


def make_env(env_id, **kwargs) -> Env:
    try:
        return ENVS[env_id](**kwargs)
    except KeyError:
        raise ConfigError(f"unknown env id {env_id!r}; choose from {sorted(ENVS)}") from None


def _run_batch(env, policy, x, keys, gamma, horizon):
    """Roll every row of ``x`` forward; returns per-row discounted returns."""
    n = len(x)
    alive = np.ones(n, dtype=bool)
    ret = np.zeros(n)
    discount = 1.0
    low, high = env.spec.action_low, env.spec.action_high
    for t in range(horizon):
        a = np.asarray(policy(env.observe_batch(x)), dtype=np.float64).reshape(n, env.spec.action_dim)
        if np.isnan(a).any():
            raise ContractError("policy produced NaN action")
        a = np.clip(a, low, high)
        x, r, failed = env.transition(x, a, np.full(n, t), keys)
        ret += np.where(alive, discount * r, 0.0)
        alive &= ~failed
        discount *= gamma
        if not alive.any():
            break
    return ret


def rollout_eval(env: Env, policy, episodes, rng):
    """Mean and (population) std of undiscounted return over fresh episodes.

    ``policy`` maps a batch of observations to a batch of actions and is
    applied as is; no exploration noise is added here.
    """
    if episodes < 1:
        raise PreconditionError("episodes must be >= 1")
    x, keys = env.reset_batch(rng, episodes)
    returns = _run_batch(env, policy, x, keys, 1.0, env.spec.max_horizon)
    # shift by one sample so identical returns give exactly zero spread
    return float(returns.mean()), float((returns - returns[0]).std())


def mc_true_value(env: Env, policy, start_states, episodes_per_state=1, gamma=0.99, rng=None,
                  horizon=None):
    """Mean discounted return from each observed start state, truncated at the horizon.

    Start states are observations (as stored in replay) and are restarted
    with a fresh step counter. Reward-noise keys come from ``rng`` when
    given, otherwise from the row index.
    """
    start_states = np.asarray(start_states, dtype=np.float64)
    if start_states.ndim != 2 or len(start_states) == 0:
        raise PreconditionError("need a non-empty 2-D array of start states")
    x = env.state_from_observation_batch(np.repeat(start_states, episodes_per_state, axis=0))
    n = len(x)
    if rng is not None:
        keys = rng.integers(0, 2**63, size=n, dtype=np.uint64)
    else:
        keys = np.arange(n, dtype=np.uint64)
    h = env.spec.max_horizon if horizon is None else horizon
    return float(_run_batch(env, policy, x, keys, gamma, h).mean())


def truncation_bound(env: Env, gamma, horizon=None):
    """Largest possible contribution of rewards past the truncation horizon."""
    h = env.spec.max_horizon if horizon is None else horizon
    if gamma >= 1.0:
        return float("inf")
    return gamma**h * env.spec.reward_bound / (1.0 - gamma)
