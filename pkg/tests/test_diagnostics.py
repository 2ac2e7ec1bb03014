import dataclasses

import numpy as np
import pytest

from td3lab.agents import Agent, AgentConfig, save_agent
from td3lab.diagnostics import (
    BiasPoint,
    Trajectory,
    collect_trajectory,
    estimate_value_bias,
    horizon_for_tolerance,
    tau_sweep,
    td_residual_trace,
)
from td3lab.envs import NoisyLine, Pendulum, truncation_bound
from td3lab.errors import PreconditionError, ShapeError
from td3lab.nn import init_mlp

from test_nn import naive_forward


def line_agent(gamma=0.9):
    cfg = AgentConfig(1, 1, (-1.0,), (1.0,), hidden=(8,), gamma=gamma)
    return Agent(cfg, np.random.default_rng(0))


def freeze_at(agent, q_const):
    """Zero actor (action 0 everywhere) and a critic that outputs ``q_const``."""
    agent.actor.set_params(np.zeros(agent.actor.n_params))
    p = np.zeros(agent.critic1.n_params)
    p[-1] = q_const
    agent.critic1.set_params(p)


def naive_residuals(critic, traj, gamma):
    q = [naive_forward(critic, np.concatenate([s, a]))[0] for s, a in zip(traj.states, traj.actions)]
    T = len(traj.rewards)
    out = []
    for i in range(T):
        boot = 0.0 if (traj.terminal and i == T - 1) else q[i + 1]
        out.append(traj.rewards[i] + gamma * boot - q[i])
    return np.array(out)


def random_trajectory(rng, T, sd=3, ad=2, terminal=False):
    return Trajectory(rng.normal(size=(T + 1, sd)), rng.uniform(-1, 1, (T + 1, ad)),
                      rng.normal(size=T), terminal)


class TestBiasPoint:
    def test_gap_is_difference(self):
        p = BiasPoint(10, 3.25, -1.5, 5, 2, 50, 0.1, False)
        assert p.gap == 3.25 - (-1.5)


class TestEstimateValueBias:
    def test_zero_critic(self):
        env = Pendulum()
        ag = Agent(AgentConfig(3, 1, (-2.0,), (2.0,), hidden=(8,)), np.random.default_rng(1))
        ag.critic1.set_params(np.zeros(ag.critic1.n_params))
        states = env.observe_batch(env.reset_batch(np.random.default_rng(2), 50)[0])
        p = estimate_value_bias(ag, states, env, 0.99, 20, np.random.default_rng(3))
        assert p.estimate == 0.0 and p.gap == -p.true_value

    def test_hand_built_fixed_point(self):
        # zero action keeps x fixed, so Q(c, 0) = -c^2 / (1 - gamma) exactly
        env, gamma, c = NoisyLine(noise_std=0.0), 0.9, 0.5
        ag = line_agent(gamma)
        freeze_at(ag, -c * c / (1 - gamma))
        states = np.full((40, 1), c)
        p = estimate_value_bias(ag, states, env, gamma, 10, np.random.default_rng(0), horizon=400)
        assert abs(p.gap) < 1e-6 and not p.truncated

    def test_perfect_critic_within_truncation_bound(self):
        env, gamma, c = NoisyLine(noise_std=0.0), 0.9, 0.8
        ag = line_agent(gamma)
        freeze_at(ag, -c * c / (1 - gamma))
        p = estimate_value_bias(ag, np.full((5, 1), c), env, gamma, 5, np.random.default_rng(0))
        assert p.horizon == env.spec.max_horizon
        assert 0 < abs(p.gap) <= truncation_bound(env, gamma)
        assert p.truncated == (p.truncation_bound > 1.0)

    def test_deterministic_from_snapshot(self, tmp_path):
        env = Pendulum()
        ag = Agent(AgentConfig(3, 1, (-2.0,), (2.0,), hidden=(8,)), np.random.default_rng(4))
        save_agent(ag, tmp_path / "a.snap")
        states = env.observe_batch(env.reset_batch(np.random.default_rng(5), 30)[0])
        a = estimate_value_bias(tmp_path / "a.snap", states, env, 0.99, 8, np.random.default_rng(6))
        b = estimate_value_bias(tmp_path / "a.snap", states, env, 0.99, 8, np.random.default_rng(6))
        assert a == b

    def test_empty_states(self):
        with pytest.raises(PreconditionError):
            estimate_value_bias(line_agent(), np.zeros((0, 1)), NoisyLine(), 0.9, 1,
                                np.random.default_rng(0))

    def test_horizon_for_tolerance(self):
        env = Pendulum()
        h = horizon_for_tolerance(env, 0.99, 1.0)
        assert truncation_bound(env, 0.99, h) <= 1.0 < truncation_bound(env, 0.99, h - 1)


class TestResidualTrace:
    def test_bellman_consistent_critic_has_zero_residual(self):
        gamma, c = 0.9, 0.5
        ag = line_agent(gamma)
        freeze_at(ag, -c * c / (1 - gamma))
        traj = collect_trajectory(NoisyLine(noise_std=0.0), ag.policy,
                                  np.random.default_rng(0), steps=30)
        traj = Trajectory(np.full_like(traj.states, c), traj.actions, np.full(30, -c * c))
        tr = td_residual_trace(ag.critic1, traj, gamma)
        np.testing.assert_allclose(tr.delta, 0.0, atol=1e-12)

    @pytest.mark.parametrize("terminal", [False, True])
    def test_matches_naive_loop(self, terminal):
        rng = np.random.default_rng(7)
        for _ in range(10):
            critic = init_mlp((5, 6, 4, 1), "identity", rng)
            traj = random_trajectory(rng, int(rng.integers(1, 25)), terminal=terminal)
            tr = td_residual_trace(critic, traj, 0.95)
            np.testing.assert_allclose(tr.delta, naive_residuals(critic, traj, 0.95), atol=1e-12, rtol=0)

    @pytest.mark.parametrize("terminal", [False, True])
    def test_telescoping_identity(self, terminal):
        rng = np.random.default_rng(8)
        for _ in range(20):
            critic = init_mlp((5, 16, 16, 1), "identity", rng)
            traj = random_trajectory(rng, 200, terminal=terminal)
            assert abs(td_residual_trace(critic, traj, 0.99).identity_gap()) < 1e-10

    def test_partial_sums_consistent(self):
        rng = np.random.default_rng(9)
        critic = init_mlp((5, 8, 1), "identity", rng)
        tr = td_residual_trace(critic, random_trajectory(rng, 12), 0.8)
        manual = [sum(0.8**i * tr.delta[i] for i in range(k + 1)) for k in range(12)]
        np.testing.assert_allclose(tr.partial_sums, manual, rtol=0, atol=1e-12)

    def test_bootstrap_critic_used_for_next_term(self):
        rng = np.random.default_rng(10)
        critic = init_mlp((5, 8, 1), "identity", rng)
        target = init_mlp((5, 8, 1), "identity", rng)
        traj = random_trajectory(rng, 6)
        tr = td_residual_trace(critic, traj, 0.9, bootstrap_critic=target)
        x = np.concatenate([traj.states, traj.actions], axis=1)
        q, qt = critic(x)[:, 0], target(x)[:, 0]
        np.testing.assert_allclose(tr.delta, traj.rewards + 0.9 * qt[1:] - q[:-1], atol=1e-14)

    def test_shape_checks(self):
        with pytest.raises(PreconditionError):
            Trajectory(np.zeros((1, 3)), np.zeros((1, 2)), np.zeros(0))
        with pytest.raises(ShapeError):
            Trajectory(np.zeros((3, 3)), np.zeros((2, 2)), np.zeros(2))

    def test_collect_stops_at_horizon(self):
        env = NoisyLine()
        traj = collect_trajectory(env, lambda o: np.zeros((len(o), 1)), np.random.default_rng(0))
        assert len(traj) == env.spec.max_horizon and not traj.terminal


class TestTauSweep:
    def test_rejects_bad_tau(self):
        with pytest.raises(PreconditionError):
            tau_sweep(NoisyLine(), [0.0, 0.5], True, 10, [0])

    def test_grid_and_shapes(self):
        env = NoisyLine()
        base = AgentConfig(1, 1, (-1.0,), (1.0,), hidden=(8, 8), batch_size=16)
        out = tau_sweep(env, [1.0, 0.1], False, 300, [0, 1], base=base, record_every=100,
                        start_steps=50, n_probe=10)
        assert list(out.steps) == [0, 100, 200, 300]
        assert out.values[1.0].shape == (2, 4)
        # tau only acts after training starts, so the step-0 values agree across rates
        np.testing.assert_array_equal(out.values[1.0][:, 0], out.values[0.1][:, 0])

    def test_repeatable(self):
        env = NoisyLine()
        base = AgentConfig(1, 1, (-1.0,), (1.0,), hidden=(8,), batch_size=8)
        kw = dict(base=base, record_every=50, start_steps=20, n_probe=5)
        a = tau_sweep(env, [0.5], True, 100, [3], **kw)
        b = tau_sweep(env, [0.5], True, 100, [3], **kw)
        np.testing.assert_array_equal(a.values[0.5], b.values[0.5])
