"""Uniform experience replay over a fixed-capacity ring."""

from __future__ import annotations

import enum
import struct
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .errors import ContractError, PreconditionError, ShapeError


class End(enum.IntEnum):
    """How a transition ended.

    TIMEOUT means the horizon ran out; the next state still has value and is
    bootstrapped. Only TERMINAL cuts the bootstrap.
    """

    NONE = 0
    TERMINAL = 1
    TIMEOUT = 2


@dataclass(frozen=True)
class Transition:
    state: np.ndarray
    action: np.ndarray
    reward: float
    next_state: np.ndarray
    end: End = End.NONE


class Batch(NamedTuple):
    states: np.ndarray
    actions: np.ndarray
    rewards: np.ndarray
    next_states: np.ndarray
    ends: np.ndarray

    @property
    def terminal(self):
        return self.ends == End.TERMINAL

    def __len__(self):
        return self.rewards.shape[0]

    def transition(self, i) -> Transition:
        return Transition(self.states[i], self.actions[i], float(self.rewards[i]),
                          self.next_states[i], End(int(self.ends[i])))


_DUMP_MAGIC = b"RPL1"


class ReplayBuffer:
    """Ring buffer of transitions with i.i.d. uniform sampling (with replacement).

    Storage is struct-of-arrays; once ``capacity`` transitions have been
    pushed the oldest slot is overwritten first.
    """

    def __init__(self, state_dim, action_dim, capacity, action_low=None, action_high=None,
                 dtype=np.float64):
        if capacity <= 0:
            raise ContractError("capacity must be positive")
        self.state_dim = int(state_dim)
        self.action_dim = int(action_dim)
        self.capacity = int(capacity)
        self.action_low = None if action_low is None else np.asarray(action_low, dtype=np.float64)
        self.action_high = None if action_high is None else np.asarray(action_high, dtype=np.float64)
        self.states = np.zeros((self.capacity, self.state_dim), dtype=dtype)
        self.actions = np.zeros((self.capacity, self.action_dim), dtype=dtype)
        self.rewards = np.zeros(self.capacity, dtype=dtype)
        self.next_states = np.zeros((self.capacity, self.state_dim), dtype=dtype)
        self.ends = np.zeros(self.capacity, dtype=np.int8)
        self.cursor = 0
        self.size = 0
        self.pushes = 0

    def __len__(self):
        return self.size

    @property
    def wraps(self):
        """Number of times the cursor has come round and started overwriting."""
        return 0 if self.pushes == 0 else (self.pushes - 1) // self.capacity

    def push(self, t: Transition):
        self.add(t.state, t.action, t.reward, t.next_state, t.end)

    def add(self, state, action, reward, next_state, end=End.NONE):
        state = np.asarray(state)
        action = np.asarray(action)
        next_state = np.asarray(next_state)
        if (state.shape != (self.state_dim,) or next_state.shape != (self.state_dim,)
                or action.shape != (self.action_dim,)):
            raise ShapeError(
                f"transition dims {state.shape}/{action.shape}/{next_state.shape} do not match "
                f"buffer ({self.state_dim}, {self.action_dim})")
        if self.action_low is not None and (np.any(action < self.action_low)
                                            or np.any(action > self.action_high)):
            raise ContractError(f"action {action} outside bounds")
        i = self.cursor
        self.states[i] = state
        self.actions[i] = action
        self.rewards[i] = reward
        self.next_states[i] = next_state
        self.ends[i] = int(end)
        self.cursor = (i + 1) % self.capacity
        self.size = min(self.size + 1, self.capacity)
        self.pushes += 1

    def sample(self, n, rng) -> Batch:
        if self.size == 0:
            raise PreconditionError("cannot sample from an empty replay buffer")
        idx = rng.integers(0, self.size, size=n)
        return self.gather(idx)

    def gather(self, idx) -> Batch:
        return Batch(self.states[idx], self.actions[idx], self.rewards[idx],
                     self.next_states[idx], self.ends[idx])

    def sample_states(self, n, rng):
        if self.size == 0:
            raise PreconditionError("cannot sample from an empty replay buffer")
        return self.states[rng.integers(0, self.size, size=n)]

    def dump(self, path):
        """Write header (dims, count) then packed float64 transitions in slot order."""
        with open(path, "wb") as fh:
            fh.write(_DUMP_MAGIC + struct.pack("<IIQ", self.state_dim, self.action_dim, self.size))
            n = self.size
            packed = np.concatenate([
                self.states[:n], self.actions[:n], self.rewards[:n, None],
                self.next_states[:n], self.ends[:n, None].astype(np.float64)], axis=1)
            fh.write(packed.astype("<f8").tobytes())

    @classmethod
    def load(cls, path, capacity=None) -> "ReplayBuffer":
        with open(path, "rb") as fh:
            blob = fh.read()
        if blob[:4] != _DUMP_MAGIC:
            raise ContractError(f"{path} is not a replay dump")
        sd, ad, n = struct.unpack_from("<IIQ", blob, 4)
        width = 2 * sd + ad + 2
        rows = np.frombuffer(blob, dtype="<f8", offset=4 + 16).reshape(n, width)
        buf = cls(sd, ad, capacity or max(n, 1))
        for row in rows:
            buf.add(row[:sd], row[sd:sd + ad], row[sd + ad], row[sd + ad + 1:2 * sd + ad + 1],
                    End(int(row[-1])))
        return buf
