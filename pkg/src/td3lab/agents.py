"""Deterministic-policy-gradient actor-critic agents.

One ``Agent`` class covers TD3, its ablations and the double-estimator
baselines. Behaviour is selected by ``AgentConfig``:

* ``mode``: ``td3`` (target actor, optional twin-critic minimum),
  ``ddpg_baseline`` (single critic, target actor), ``ddqn_ac`` (current
  actor picks the target action, target critic evaluates it) and ``dq_ac``
  (two actors and two critics with crossed targets).
* ``cdq``: bootstrap from the minimum of both target critics.
* ``policy_delay``: actor and target networks update once per that many
  critic updates.
* ``smoothing``: clipped Gaussian noise on the target action.

Critic networks take ``state || action`` at their first layer. Actor
networks end in tanh and are rescaled to the action box.
"""

from __future__ import annotations

import dataclasses
import json
import struct
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, ContractError, NumericError, PreconditionError, ShapeError
from .nn import AdamState, Mlp, adam_step, backward, forward, init_mlp, _read_mlp, mlp_to_bytes
from .replay import Batch, End

MODES = ("td3", "dq_ac", "ddqn_ac", "ddpg_baseline")


@dataclass(frozen=True)
class AgentConfig:
    state_dim: int
    action_dim: int
    action_low: tuple
    action_high: tuple
    gamma: float = 0.99
    tau: float = 0.005
    policy_delay: int = 2
    explore_noise: float = 0.1
    target_noise: float = 0.2
    noise_clip: float = 0.5
    batch_size: int = 100
    start_steps: int = 1000
    critic_lr: float = 1e-3
    actor_lr: float = 1e-3
    hidden: tuple = (400, 300)
    mode: str = "td3"
    cdq: bool = True
    smoothing: bool = True
    critic_weight_decay: float = 0.0
    adam_betas: tuple = (0.9, 0.999)
    adam_eps: float = 1e-8
    dtype: str = "float64"

    def __post_init__(self):
        low = tuple(float(v) for v in np.atleast_1d(self.action_low))
        high = tuple(float(v) for v in np.atleast_1d(self.action_high))
        object.__setattr__(self, "action_low", low)
        object.__setattr__(self, "action_high", high)
        object.__setattr__(self, "hidden", tuple(int(h) for h in self.hidden))
        object.__setattr__(self, "adam_betas", tuple(float(b) for b in self.adam_betas))
        if self.mode not in MODES:
            raise ConfigError(f"unknown mode {self.mode!r}; choose from {MODES}")
        if not 0.0 <= self.gamma < 1.0:
            raise ConfigError("gamma must lie in [0, 1)")
        if not 0.0 < self.tau <= 1.0:
            raise ConfigError("tau must lie in (0, 1]")
        if self.policy_delay < 1:
            raise ConfigError("policy_delay must be >= 1")
        if self.target_noise < 0 or self.explore_noise < 0:
            raise ConfigError("noise scales must be non-negative")
        if self.noise_clip <= 0:
            raise ConfigError("noise_clip must be positive")
        if len(low) != self.action_dim or len(high) != self.action_dim:
            raise ConfigError("action bounds must have action_dim entries")
        if any(h <= lo for lo, h in zip(low, high)):
            raise ConfigError("action_high must exceed action_low")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be positive")
        if self.mode == "ddpg_baseline" and self.cdq:
            raise ConfigError("ddpg_baseline is the single-critic mode; cdq must be off")
        if self.mode == "dq_ac" and self.cdq:
            raise ConfigError("dq_ac uses crossed targets; cdq must be off")
        if self.dtype not in ("float64", "float32"):
            raise ConfigError("dtype must be float64 or float32")

    @property
    def delayed(self):
        return self.policy_delay > 1

    @property
    def twin(self):
        """Whether critic 2 takes part in targets or updates."""
        return self.cdq or self.mode == "dq_ac"

    def to_dict(self):
        return dataclasses.asdict(self)


# Table of ablation variants: overrides applied on top of a base config.
_TD3 = dict(mode="td3", cdq=True, policy_delay=2, smoothing=True)
_AHE = dict(mode="td3", cdq=False, policy_delay=1, smoothing=False)
VARIANTS = {
    "td3": _TD3,
    "ddpg": dict(mode="ddpg_baseline", cdq=False, policy_delay=1, smoothing=False,
                 actor_lr=1e-4, tau=1e-3, batch_size=64, critic_weight_decay=1e-2),
    "ahe": _AHE,
    "ahe+dp": {**_AHE, "policy_delay": 2},
    "ahe+tps": {**_AHE, "smoothing": True},
    "ahe+cdq": {**_AHE, "cdq": True},
    "td3-dp": {**_TD3, "policy_delay": 1},
    "td3-tps": {**_TD3, "smoothing": False},
    "td3-cdq": {**_TD3, "cdq": False},
    "dq-ac": dict(mode="dq_ac", cdq=False, policy_delay=2, smoothing=True),
    "ddqn-ac": dict(mode="ddqn_ac", cdq=False, policy_delay=2, smoothing=True),
}


def expand_variant(name, base: AgentConfig) -> AgentConfig:
    try:
        overrides = VARIANTS[name]
    except KeyError:
        raise ConfigError(f"unknown variant {name!r}; choose from {list(VARIANTS)}") from None
    return dataclasses.replace(base, **overrides)


@dataclass
class StepReport:
    critic_loss: float
    critic2_loss: float | None
    actor_updated: bool
    critic_updates: int


def mse_loss_grad(net: Mlp, inputs, y, weight_decay=0.0):
    """Mean squared error of ``net(inputs)`` against constant targets ``y``.

    Returns ``(loss, grads)``; ``y`` is treated as fixed.
    """
    q, cache = forward(net, inputs)
    err = q[:, 0] - y
    n = len(err)
    loss = float(np.mean(err * err))
    grads, _ = backward(net, cache, (2.0 / n) * err[:, None])
    if weight_decay:
        grads += weight_decay * net.params
    return loss, grads


def dpg_gradient(actor: Mlp, critic: Mlp, states, center, half):
    """Gradient of ``-mean_s Q(s, pi(s))`` with respect to the actor parameters.

    Returns ``(mean_q, grads)``. The chain runs through the critic's input
    gradient at the action coordinates; critic parameters are untouched.
    """
    u, actor_cache = forward(actor, states)
    actions = center + half * u
    q, critic_cache = forward(critic, np.concatenate([states, actions], axis=1))
    n = q.shape[0]
    _, dq_dx = backward(critic, critic_cache, np.full_like(q, -1.0 / n), param_grads=False)
    dq_du = dq_dx[:, states.shape[1]:] * half
    grads, _ = backward(actor, actor_cache, dq_du)
    return float(q.mean()), grads


class Agent:
    def __init__(self, config: AgentConfig, rng):
        self.config = c = config
        dtype = np.dtype(c.dtype)
        self.low = np.array(c.action_low)
        self.high = np.array(c.action_high)
        self.center = (self.high + self.low) / 2.0
        self.half = (self.high - self.low) / 2.0
        actor_sizes = (c.state_dim, *c.hidden, c.action_dim)
        critic_sizes = (c.state_dim + c.action_dim, *c.hidden, 1)
        # init order is part of the reproducibility contract
        self.actor = init_mlp(actor_sizes, "tanh", rng, dtype)
        self.critic1 = init_mlp(critic_sizes, "identity", rng, dtype)
        self.critic2 = init_mlp(critic_sizes, "identity", rng, dtype)
        self.actor2 = init_mlp(actor_sizes, "tanh", rng, dtype) if c.mode == "dq_ac" else None
        self.actor_target = self.actor.copy()
        self.critic1_target = self.critic1.copy()
        self.critic2_target = self.critic2.copy()
        self.actor2_target = self.actor2.copy() if self.actor2 is not None else None
        b1, b2 = c.adam_betas
        self.actor_opt = AdamState.for_net(self.actor, c.actor_lr, b1, b2, c.adam_eps)
        self.critic1_opt = AdamState.for_net(self.critic1, c.critic_lr, b1, b2, c.adam_eps)
        self.critic2_opt = AdamState.for_net(self.critic2, c.critic_lr, b1, b2, c.adam_eps)
        self.actor2_opt = (AdamState.for_net(self.actor2, c.actor_lr, b1, b2, c.adam_eps)
                           if self.actor2 is not None else None)
        self.critic_updates = 0
        self.actor_updates = 0

    # -- policies ----------------------------------------------------------
    def act(self, states, actor=None):
        """Deterministic actions for a batch (or single) state."""
        u = forward(actor or self.actor, states)[0]
        return self.center + self.half * u

    def policy(self, states):
        return self.act(states)

    def select_action(self, state, explore, rng):
        state = np.asarray(state, dtype=np.float64)
        if state.shape[-1] != self.config.state_dim:
            raise ShapeError(f"state of shape {state.shape} for state_dim {self.config.state_dim}")
        a = self.act(state)
        if explore:
            a = a + rng.normal(0.0, self.config.explore_noise, size=a.shape)
            a = np.clip(a, self.low, self.high)
        return a

    def random_action(self, rng):
        return rng.uniform(self.low, self.high)

    def q_value(self, states, actions, critic=None):
        x = np.concatenate([np.atleast_2d(states), np.atleast_2d(actions)], axis=1)
        return forward(critic or self.critic1, x)[0][:, 0]

    def smoothing_noise(self, shape, rng):
        c = self.config
        return np.clip(rng.normal(0.0, c.target_noise, size=shape), -c.noise_clip, c.noise_clip)

    def smooth_target_action(self, next_states, rng, actor=None):
        """Target action for bootstrapping, with clipped noise when smoothing is on."""
        a = self.act(next_states, actor or self.actor_target)
        if not self.config.smoothing:
            return a
        return np.clip(a + self.smoothing_noise(a.shape, rng), self.low, self.high)

    # -- learning ----------------------------------------------------------
    def _q(self, net, states, actions):
        return forward(net, np.concatenate([states, actions], axis=1))[0][:, 0]

    def compute_targets(self, batch: Batch, rng):
        """Bootstrapped regression targets.

        Returns shape ``(n,)``, or ``(2, n)`` in ``dq_ac`` mode where row i
        is the target for critic i. Terminal transitions get ``y = r``;
        timeouts bootstrap like any other step.
        """
        c = self.config
        if len(batch) == 0:
            raise PreconditionError("empty batch")
        s2 = batch.next_states
        r = batch.rewards
        terminal = batch.ends == End.TERMINAL
        if c.mode in ("td3", "ddpg_baseline", "ddqn_ac"):
            actor = self.actor if c.mode == "ddqn_ac" else self.actor_target
            a2 = self.smooth_target_action(s2, rng, actor)
            q = self._q(self.critic1_target, s2, a2)
            if c.cdq:
                q = np.minimum(q, self._q(self.critic2_target, s2, a2))
            return np.where(terminal, r, r + c.gamma * q)
        if c.mode == "dq_ac":
            a1 = self.smooth_target_action(s2, rng, self.actor)
            a2 = self.smooth_target_action(s2, rng, self.actor2)
            y1 = np.where(terminal, r, r + c.gamma * self._q(self.critic2_target, s2, a1))
            y2 = np.where(terminal, r, r + c.gamma * self._q(self.critic1_target, s2, a2))
            return np.stack([y1, y2])
        raise ConfigError(f"unknown mode {c.mode!r}")

    def update_critics(self, batch: Batch, y):
        """One Adam step per active critic; returns the pre-update losses."""
        c = self.config
        x = np.concatenate([batch.states, batch.actions], axis=1)
        y = np.asarray(y)
        y1, y2 = (y[0], y[1]) if y.ndim == 2 else (y, y)
        loss1, g1 = mse_loss_grad(self.critic1, x, y1, c.critic_weight_decay)
        loss2 = g2 = None
        if c.twin:
            loss2, g2 = mse_loss_grad(self.critic2, x, y2, c.critic_weight_decay)
        if not np.isfinite(loss1) or (loss2 is not None and not np.isfinite(loss2)):
            raise NumericError("critic loss is not finite")
        adam_step(self.critic1, g1, self.critic1_opt)
        if g2 is not None:
            adam_step(self.critic2, g2, self.critic2_opt)
        return loss1, loss2

    def update_actor_dpg(self, states):
        states = np.atleast_2d(states)
        if len(states) == 0:
            raise PreconditionError("no states for the actor update")
        q1, g = dpg_gradient(self.actor, self.critic1, states, self.center, self.half)
        adam_step(self.actor, g, self.actor_opt)
        if self.actor2 is not None:
            _, g2 = dpg_gradient(self.actor2, self.critic2, states, self.center, self.half)
            adam_step(self.actor2, g2, self.actor2_opt)
        self.actor_updates += 1
        return q1

    def target_pairs(self):
        pairs = [(self.actor, self.actor_target), (self.critic1, self.critic1_target)]
        if self.config.twin:
            pairs.append((self.critic2, self.critic2_target))
        if self.actor2 is not None:
            pairs.append((self.actor2, self.actor2_target))
        return pairs

    def polyak_update(self, tau=None):
        """target <- tau * live + (1 - tau) * target, for every target network."""
        tau = self.config.tau if tau is None else tau
        for live, target in self.target_pairs():
            target.params *= 1.0 - tau
            target.params += tau * live.params
            target.touch()

    def train_step(self, buffer, env_step_index=None, rng=None, train_actor=True):
        """One critic update, plus the delayed actor and target update.

        With ``train_actor=False`` the actor stays frozen (critic-only
        evaluation of a fixed policy) while targets still track.
        """
        c = self.config
        if len(buffer) < c.batch_size:
            raise PreconditionError(f"buffer holds {len(buffer)} < batch_size {c.batch_size}")
        batch = buffer.sample(c.batch_size, rng)
        y = self.compute_targets(batch, rng)
        loss1, loss2 = self.update_critics(batch, y)
        self.critic_updates += 1
        actor_updated = self.critic_updates % c.policy_delay == 0
        if actor_updated:
            if train_actor:
                self.update_actor_dpg(batch.states)
            self.polyak_update()
        return StepReport(loss1, loss2, actor_updated, self.critic_updates)

    # -- snapshots ---------------------------------------------------------
    def networks(self):
        nets = {
            "actor": self.actor, "critic1": self.critic1, "critic2": self.critic2,
            "actor_target": self.actor_target, "critic1_target": self.critic1_target,
            "critic2_target": self.critic2_target,
        }
        if self.actor2 is not None:
            nets.update(actor2=self.actor2, actor2_target=self.actor2_target)
        return nets

    def optimizers(self):
        opts = {"actor": self.actor_opt, "critic1": self.critic1_opt, "critic2": self.critic2_opt}
        if self.actor2_opt is not None:
            opts["actor2"] = self.actor2_opt
        return opts


SNAPSHOT_MAGIC = b"TD3SNAP\0"
SNAPSHOT_VERSION = 1


def save_agent(agent: Agent, path, extra=None):
    """Write networks, Adam moments and counters to a versioned binary file.

    Layout: magic, uint32 version, uint64 JSON-header length, JSON header,
    then each network blob followed by each optimizer's m and v arrays, all
    little-endian float64, in header order.
    """
    nets = agent.networks()
    opts = agent.optimizers()
    header = {
        "config": agent.config.to_dict(),
        "critic_updates": agent.critic_updates,
        "actor_updates": agent.actor_updates,
        "networks": list(nets),
        "optimizers": {k: o.t for k, o in opts.items()},
        "extra": extra or {},
    }
    hjson = json.dumps(header, sort_keys=True).encode()
    parts = [SNAPSHOT_MAGIC, struct.pack("<IQ", SNAPSHOT_VERSION, len(hjson)), hjson]
    parts += [mlp_to_bytes(n) for n in nets.values()]
    for o in opts.values():
        parts += [o.m.astype("<f8").tobytes(), o.v.astype("<f8").tobytes()]
    with open(path, "wb") as fh:
        fh.write(b"".join(parts))


def load_agent(path) -> Agent:
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:8] != SNAPSHOT_MAGIC:
        raise ContractError(f"{path} is not an agent snapshot")
    version, hlen = struct.unpack_from("<IQ", blob, 8)
    if version != SNAPSHOT_VERSION:
        raise ContractError(f"unsupported snapshot version {version}")
    offset = 8 + 12
    header = json.loads(blob[offset:offset + hlen])
    offset += hlen
    config = AgentConfig(**header["config"])
    agent = Agent(config, np.random.default_rng(0))
    nets = agent.networks()
    for name in header["networks"]:
        net, offset = _read_mlp(blob, offset, np.dtype(config.dtype))
        nets[name].set_params(net.params)
    for name, opt in agent.optimizers().items():
        n = opt.m.size
        opt.m[:] = np.frombuffer(blob, "<f8", n, offset)
        offset += 8 * n
        opt.v[:] = np.frombuffer(blob, "<f8", n, offset)
        offset += 8 * n
        opt.t = header["optimizers"][name]
    agent.critic_updates = header["critic_updates"]
    agent.actor_updates = header["actor_updates"]
    agent.snapshot_extra = header.get("extra", {})
    return agent
