import numpy as np
import pytest

from td3lab.envs import (
    EnvState,
    NoisyLine,
    Pendulum,
    PointReacher,
    counter_normal,
    make_env,
    mc_true_value,
    rollout_eval,
    truncation_bound,
)
from td3lab.errors import ConfigError, ContractError, PreconditionError
from td3lab.replay import End

ALL_IDS = ["pendulum", "reacher2d", "noisy1d"]


def zero_policy(env):
    return lambda obs: np.zeros((len(obs), env.spec.action_dim))


def loop_return(env, policy, state, gamma, horizon):
    """Recursive single-episode evaluator using only Env.step."""
    if horizon == 0:
        return 0.0
    a = policy(env.observe(state)[None])[0]
    nxt, r, end = env.step(state, a)
    if end == End.TERMINAL:
        return r
    return r + gamma * loop_return(env, policy, nxt, gamma, horizon - 1)


@pytest.mark.parametrize("env_id", ALL_IDS)
def test_seeded_reset_repeatable(env_id):
    env = make_env(env_id)
    a = env.reset(np.random.default_rng(5))
    b = env.reset(np.random.default_rng(5))
    assert np.array_equal(a.x, b.x) and a.key == b.key and a.t == 0


def test_unknown_env():
    with pytest.raises(ConfigError):
        make_env("hopper")


def test_pendulum_start_ranges():
    env = Pendulum()
    x, _ = env.reset_batch(np.random.default_rng(0), 1000)
    assert np.all(np.abs(x[:, 0]) <= np.pi) and np.all(np.abs(x[:, 1]) <= 1)


def test_pendulum_start_mean_monte_carlo():
    env = Pendulum()
    n = 10**4
    rng = np.random.default_rng(1)
    x = np.array([env.reset(rng).x for _ in range(n)])
    sd = np.array([np.pi, 1.0]) / np.sqrt(3)
    assert np.all(np.abs(x.mean(axis=0)) < 3 * sd / np.sqrt(n))


def test_reacher_start_mean_monte_carlo():
    env = PointReacher()
    n = 10**4
    x, _ = env.reset_batch(np.random.default_rng(2), n)
    sd = np.array([0.3, 0.3, 0, 0, 0.6, 0.6]) / np.sqrt(3)
    assert np.all(np.abs(x.mean(axis=0)) <= 3 * sd / np.sqrt(n))


def test_pendulum_rests_at_bottom():
    env = Pendulum()
    s = EnvState(np.array([np.pi, 0.0]))
    for _ in range(199):
        s, _, end = env.step(s, [0.0])
    assert abs(s.x[0] - np.pi) < 1e-12 and abs(s.x[1]) < 1e-12


@pytest.mark.parametrize("env_id", ["pendulum", "noisy1d"])
def test_timeout_at_horizon(env_id):
    env = make_env(env_id)
    s = env.reset(np.random.default_rng(0))
    s = EnvState(s.x, env.spec.max_horizon - 1, s.key)
    _, _, end = env.step(s, np.zeros(env.spec.action_dim))
    assert end == End.TIMEOUT


def test_reacher_terminal_on_exit_not_timeout():
    env = PointReacher()
    s = EnvState(np.array([0.99, 0.0, 2.0, 0.0, 0.0, 0.0]), env.spec.max_horizon - 1)
    _, _, end = env.step(s, [1.0, 0.0])
    assert end == End.TERMINAL


def test_nan_action_rejected():
    env = Pendulum()
    with pytest.raises(ContractError):
        env.step(env.reset(np.random.default_rng(0)), [np.nan])


def test_step_past_horizon_rejected():
    env = NoisyLine()
    with pytest.raises(ContractError):
        env.step(EnvState(np.zeros(1), env.spec.max_horizon), [0.0])


@pytest.mark.parametrize("env_id", ALL_IDS)
def test_step_is_pure(env_id):
    env = make_env(env_id)
    rng = np.random.default_rng(3)
    s0 = env.reset(rng)
    actions = [env.random_action(rng) for _ in range(30)]

    def play():
        s, out = s0, []
        for a in actions:
            s, r, end = env.step(s, a)
            out.append((s.x.tobytes(), r, end))
        return out

    assert play() == play()


@pytest.mark.parametrize("env_id", ALL_IDS)
def test_actions_clipped(env_id):
    env = make_env(env_id)
    s = env.reset(np.random.default_rng(0))
    big = np.full(env.spec.action_dim, 100.0)
    a, _, _ = env.step(s, big)
    b, _, _ = env.step(s, np.asarray(env.spec.action_high))
    assert np.array_equal(a.x, b.x)


def test_pendulum_energy_drift_second_order():
    """Per-step energy change under zero torque shrinks ~4x when dt halves."""
    worst = []
    for dt in (0.02, 0.01):
        env = Pendulum(dt=dt, max_horizon=10**6)
        s = EnvState(np.array([2.0, 0.5]))
        e = env.energy(s.x)[0]
        drift = 0.0
        for _ in range(int(4.0 / dt)):
            s, _, _ = env.step(s, [0.0])
            e2 = env.energy(s.x)[0]
            drift = max(drift, abs(e2 - e))
            e = e2
        worst.append(drift)
        assert drift < 50.0 * dt**2
    assert 3.0 < worst[0] / worst[1] < 5.0


def test_pendulum_reward_bounded():
    env = Pendulum()
    rng = np.random.default_rng(0)
    x = np.stack([rng.uniform(-10, 10, 1000), rng.uniform(-8, 8, 1000)], axis=1)
    _, r, _ = env.transition(x, rng.uniform(-2, 2, (1000, 1)), np.zeros(1000), np.zeros(1000, np.uint64))
    assert np.all(r <= 0) and np.all(r >= -env.spec.reward_bound)


def test_counter_normal_moments():
    z = counter_normal(np.arange(10**5), 3)
    assert abs(z.mean()) < 0.02 and abs(z.std() - 1) < 0.02
    assert np.array_equal(counter_normal([7, 8], [1, 1]), counter_normal([7, 8], [1, 1]))


class TestRolloutEval:
    def test_deterministic_start_zero_std(self):
        env = PointReacher()
        env.reset_batch = lambda rng, n: (np.tile([[0.1, 0.0, 0, 0, 0.3, 0.2]], (n, 1)),
                                          np.zeros(n, np.uint64))
        mean, std = rollout_eval(env, zero_policy(env), 7, np.random.default_rng(0))
        assert std == 0.0

    def test_single_episode_mean_is_return(self):
        env = Pendulum()
        rng = np.random.default_rng(4)
        mean, std = rollout_eval(env, zero_policy(env), 1, rng)
        s = env.reset(np.random.default_rng(4))
        assert mean == pytest.approx(loop_return(env, zero_policy(env), s, 1.0, 200), abs=1e-9)
        assert std == 0.0

    def test_random_policy_matches_loop_oracle(self):
        env = Pendulum()
        prng = np.random.default_rng(10)

        def random_policy(obs):
            return prng.uniform(-2, 2, size=(len(obs), 1))

        mean, _ = rollout_eval(env, random_policy, 100, np.random.default_rng(11))
        orng = np.random.default_rng(12)
        oracle = []
        for _ in range(400):
            s = env.reset(orng)
            oracle.append(loop_return(env, lambda o: orng.uniform(-2, 2, (1, 1)), s, 1.0, 200))
        oracle = np.array(oracle)
        se = np.sqrt(oracle.var() / 100 + oracle.var() / 400)
        assert abs(mean - oracle.mean()) < 4 * se

    def test_reacher_terminal_stops_accumulating(self):
        env = PointReacher()
        push_out = lambda obs: np.tile([1.0, 0.0], (len(obs), 1))
        start = np.array([[0.0, 0.0, 0.0, 0.0, 0.5, 0.0]])
        mc = mc_true_value(env, push_out, start, gamma=1.0)
        oracle = loop_return(env, push_out, env.from_observation(start[0]), 1.0, 200)
        assert mc == pytest.approx(oracle, abs=1e-12)

    def test_zero_episodes(self):
        with pytest.raises(PreconditionError):
            rollout_eval(Pendulum(), lambda o: o[:, :1], 0, np.random.default_rng(0))


class TestMcTrueValue:
    def test_gamma_zero_is_first_reward(self):
        env = Pendulum()
        starts = env.observe_batch(env.reset_batch(np.random.default_rng(0), 20)[0])
        v = mc_true_value(env, zero_policy(env), starts, gamma=0.0)
        _, r, _ = env.transition(env.state_from_observation_batch(starts), np.zeros((20, 1)),
                                 np.zeros(20), np.zeros(20, np.uint64))
        assert v == pytest.approx(r.mean(), abs=1e-12)

    def test_constant_reward_geometric(self):
        env = NoisyLine(noise_std=0.0)
        # x stays at 0 under zero action so every reward is exactly 0 - 0^2; shift by constant
        env.transition = lambda x, a, t, k: (x, np.full(len(x), 2.0), np.zeros(len(x), bool))
        gamma, h = 0.9, env.spec.max_horizon
        v = mc_true_value(env, zero_policy(env), np.zeros((3, 1)), gamma=gamma)
        assert v == pytest.approx(2.0 * (1 - gamma**h) / (1 - gamma), abs=1e-12)

    @pytest.mark.parametrize("env_id", ALL_IDS)
    def test_matches_recursive_oracle(self, env_id):
        env = make_env(env_id)
        rng = np.random.default_rng(21)
        w = rng.normal(size=(env.spec.state_dim, env.spec.action_dim))
        policy = lambda obs: np.tanh(obs @ w)
        starts = env.observe_batch(env.reset_batch(rng, 10)[0])
        for i in range(10):
            mc = mc_true_value(env, policy, starts[i:i + 1], gamma=0.97)
            s = env.from_observation(starts[i], key=0)
            assert mc == pytest.approx(loop_return(env, policy, s, 0.97, env.spec.max_horizon),
                                       abs=1e-12)

    def test_empty_start_set(self):
        with pytest.raises(PreconditionError):
            mc_true_value(Pendulum(), lambda o: o[:, :1], np.zeros((0, 3)))

    def test_truncation_bound(self):
        env = Pendulum()
        assert truncation_bound(env, 0.99) == pytest.approx(0.99**200 * env.spec.reward_bound / 0.01)
