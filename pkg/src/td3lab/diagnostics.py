"""Value-overestimation and error-accumulation probes.

* ``estimate_value_bias`` compares the critic's average estimate
  Q1(s, pi(s)) over sampled states with a Monte-Carlo estimate of the
  policy's true discounted return.
* ``td_residual_trace`` follows the one-step TD residuals along a
  trajectory. Their discounted sum satisfies
  ``Q(s_0, a_0) + sum_i g^i d_i = sum_i g^i r_i + g^T Q(s_T, a_T)``, with the
  last term dropped when the trajectory ends in a terminal state.
* ``tau_sweep`` records value-estimate curves for several target rates,
  with either a frozen or a learned policy.
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass

import numpy as np

from .agents import Agent, AgentConfig, expand_variant, load_agent
from .envs import Env, mc_true_value, truncation_bound
from .errors import PreconditionError, ShapeError
from .nn import Mlp, forward
from .replay import End
from .seeding import streams
from .training import Trainer


@dataclass(frozen=True)
class BiasPoint:
    step: int
    estimate: float
    true_value: float
    n_states: int
    n_episodes: int
    horizon: int
    truncation_bound: float
    truncated: bool     # truncation bound exceeds the reporting tolerance

    @property
    def gap(self):
        return self.estimate - self.true_value


def horizon_for_tolerance(env: Env, gamma, tolerance):
    """Smallest rollout length whose truncation bound is at most ``tolerance``."""
    if gamma <= 0.0:
        return 1
    need = math.log(tolerance * (1.0 - gamma) / env.spec.reward_bound) / math.log(gamma)
    return max(1, math.ceil(need))


def estimate_value_bias(agent, states, env: Env, gamma, episodes, rng, step=0, horizon=None,
                        tolerance=1.0) -> BiasPoint:
    """Critic estimate vs Monte-Carlo true value of the current deterministic policy.

    ``agent`` may be an ``Agent`` or a snapshot path. The estimate averages
    over all of ``states``. The true value averages ``episodes`` rollouts
    started from states drawn from ``states`` without replacement (with
    replacement if there are fewer states than episodes). Rollouts stop at
    ``horizon`` (the environment horizon by default); the point is flagged
    as truncated when the discarded tail could exceed ``tolerance``.
    """
    if not isinstance(agent, Agent):
        agent = load_agent(agent)
    states = np.atleast_2d(np.asarray(states, dtype=np.float64))
    if len(states) == 0 or episodes < 1:
        raise PreconditionError("need at least one state and one episode")
    estimate = float(np.mean(agent.q_value(states, agent.policy(states))))
    idx = rng.choice(len(states), size=episodes, replace=episodes > len(states))
    h = env.spec.max_horizon if horizon is None else int(horizon)
    true = mc_true_value(env, agent.policy, states[idx], gamma=gamma, rng=rng, horizon=h)
    bound = truncation_bound(env, gamma, h)
    return BiasPoint(int(step), estimate, true, len(states), int(episodes), h, bound,
                     bool(bound > tolerance))


# --- TD residuals ------------------------------------------------------------

@dataclass(frozen=True)
class Trajectory:
    """T transitions: ``states``/``actions`` carry T + 1 rows, the last being s_T, a_T."""

    states: np.ndarray
    actions: np.ndarray
    rewards: np.ndarray
    terminal: bool = False

    def __post_init__(self):
        T = len(self.rewards)
        if T < 1:
            raise PreconditionError("trajectory needs at least one step")
        if len(self.states) != T + 1 or len(self.actions) != T + 1:
            raise ShapeError(f"{T} rewards need {T + 1} states and actions")

    def __len__(self):
        return len(self.rewards)


@dataclass(frozen=True)
class ResidualTrace:
    delta: np.ndarray           # d_i = r_i + g Q(s_{i+1}, a_{i+1}) - Q(s_i, a_i), last bootstrap 0 if terminal
    partial_sums: np.ndarray    # sum_{i<=k} g^i d_i
    discounted_rewards: np.ndarray  # sum_{i<=k} g^i r_i
    q_start: float              # Q(s_0, a_0)
    tail: float                 # g^T Q(s_T, a_T), or 0 after a terminal step
    gamma: float

    def identity_gap(self):
        """Q(s_0,a_0) + sum g^i d_i - (sum g^i r_i + tail); zero up to rounding."""
        return self.q_start + self.partial_sums[-1] - (self.discounted_rewards[-1] + self.tail)


def td_residual_trace(critic: Mlp, trajectory: Trajectory, gamma, bootstrap_critic=None) -> ResidualTrace:
    """TD residuals of ``critic`` along ``trajectory``.

    ``bootstrap_critic`` (a target network, say) evaluates the next-state
    term when given. The telescoping identity only holds when it is the
    same function as ``critic``.
    """
    x = np.concatenate([trajectory.states, trajectory.actions], axis=1)
    q = forward(critic, x)[0][:, 0]
    qn = q if bootstrap_critic is None else forward(bootstrap_critic, x)[0][:, 0]
    T = len(trajectory)
    nxt = qn[1:].copy()
    if trajectory.terminal:
        nxt[-1] = 0.0
    delta = trajectory.rewards + gamma * nxt - q[:T]
    disc = gamma ** np.arange(T)
    tail = 0.0 if trajectory.terminal else gamma**T * qn[T]
    return ResidualTrace(delta, np.cumsum(disc * delta), np.cumsum(disc * trajectory.rewards),
                         float(q[0]), float(tail), float(gamma))


def collect_trajectory(env: Env, policy, rng, steps=None) -> Trajectory:
    """Roll ``policy`` for up to ``steps`` steps from a fresh reset."""
    steps = env.spec.max_horizon if steps is None else steps
    s = env.reset(rng)
    obs, acts, rews = [], [], []
    terminal = False
    for _ in range(steps):
        o = env.observe(s)
        a = env.clip_action(policy(o[None])[0])
        obs.append(o)
        acts.append(a)
        s, r, end = env.step(s, a)
        rews.append(r)
        if end != End.NONE:
            terminal = end == End.TERMINAL
            break
    o = env.observe(s)
    obs.append(o)
    acts.append(env.clip_action(policy(o[None])[0]))
    return Trajectory(np.array(obs), np.array(acts), np.array(rews), terminal)


# --- target-rate sweep ------------------------------------------------------

@dataclass
class SweepCurves:
    taus: list
    steps: np.ndarray
    values: dict        # tau -> array (n_seeds, n_points) of mean Q1(s, pi(s)) on probe states
    fixed_policy: bool

    def mean(self, tau):
        return self.values[tau].mean(axis=0)

    def seed_variance(self, tau, start=0):
        """Across-seed variance per point, averaged over points from ``start`` on."""
        v = self.values[tau][:, start:]
        return float(v.var(axis=0, ddof=1).mean()) if v.shape[0] > 1 else 0.0


def tau_sweep(env: Env, taus, fixed_policy, steps, seeds, base: AgentConfig = None, variant="ahe",
              record_every=1000, start_steps=1000, n_probe=100) -> SweepCurves:
    """Value-estimate curves per target rate ``tau`` and seed.

    With ``fixed_policy`` the actor keeps its initial weights and only the
    critics learn. Otherwise the whole agent trains. Probe states come from
    fresh resets on the diagnostics stream and stay fixed through a run.
    The default ``ahe`` variant has no clipped minimum, delay or smoothing,
    so the target rate is the only stabiliser in play.
    """
    taus = list(taus)
    if not taus or any(not 0.0 < t <= 1.0 for t in taus):
        raise PreconditionError("every tau must lie in (0, 1]")
    if base is None:
        spec = env.spec
        base = AgentConfig(spec.state_dim, spec.action_dim, spec.action_low, spec.action_high,
                           hidden=(64, 64))
    grid = np.arange(0, steps + 1, record_every)
    values = {}
    for tau in taus:
        cfg = dataclasses.replace(expand_variant(variant, base), tau=tau)
        rows = []
        for seed in seeds:
            rngs = streams(seed)
            agent = Agent(cfg, rngs["init"])
            probe = env.observe_batch(env.reset_batch(rngs["diagnostics"], n_probe)[0])
            trainer = Trainer(env, agent, rngs, capacity=max(steps, 1), start_steps=start_steps,
                              train_actor=not fixed_policy)
            row = []
            for target in grid:
                trainer.advance(target - trainer.steps)
                row.append(float(np.mean(agent.q_value(probe, agent.policy(probe)))))
            rows.append(row)
        values[tau] = np.array(rows)
    return SweepCurves(taus, grid, values, bool(fixed_policy))
