"""The interaction loop shared by experiment runs and diagnostic sweeps.

One call to ``Trainer.advance(n)`` plays ``n`` environment steps. Each step
picks an action (uniform during warmup, otherwise the policy plus Gaussian
noise), stores the transition, and after warmup performs one training
iteration. Evaluation is the caller's business and never touches the
trainer's buffer, agent or random streams.
"""

from __future__ import annotations

import numpy as np

from .agents import Agent
from .envs import Env
from .errors import NumericError
from .replay import End, ReplayBuffer


class Trainer:
    def __init__(self, env: Env, agent: Agent, rngs: dict, capacity, start_steps=1000,
                 train_actor=True):
        self.env = env
        self.agent = agent
        self.rngs = rngs
        self.start_steps = int(start_steps)
        self.train_actor = train_actor
        spec = env.spec
        self.buffer = ReplayBuffer(spec.state_dim, spec.action_dim, max(int(capacity), 1),
                                   spec.action_low, spec.action_high)
        self.steps = 0
        self.episodes = 0
        self.episode_return = 0.0
        self.state = env.reset(rngs["env"])

    def _action(self, obs):
        if self.steps < self.start_steps:
            return self.env.random_action(self.rngs["explore"])
        a = self.agent.select_action(obs, True, self.rngs["explore"])
        if not np.all(np.isfinite(a)):
            raise NumericError("policy produced a non-finite action")
        return a

    def advance(self, n):
        env, agent = self.env, self.agent
        for _ in range(int(n)):
            obs = env.observe(self.state)
            a = self._action(obs)
            nxt, r, end = env.step(self.state, a)
            self.buffer.add(obs, env.clip_action(a), r, env.observe(nxt), end)
            self.episode_return += r
            self.steps += 1
            if end != End.NONE:
                self.state = env.reset(self.rngs["env"])
                self.episodes += 1
                self.episode_return = 0.0
            else:
                self.state = nxt
            if self.steps > self.start_steps and len(self.buffer) >= agent.config.batch_size:
                agent.train_step(self.buffer, self.steps, self.rngs["train"],
                                 train_actor=self.train_actor)
