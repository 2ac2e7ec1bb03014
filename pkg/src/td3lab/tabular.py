"""Tabular Q-learning, Double Q-learning and Clipped Double Q-learning.

Everything runs on an explicit finite MDP. A value-iteration solver gives
the optimal table Q*, which the runs are measured against.

Conventions
-----------
* argmax ties go to the lowest action index.
* The step functions update ``tables`` in place and return it.
* Two-table variants are scored with the mean table ``(Q^A + Q^B) / 2``.
  Single-table Q-learning is scored with ``Q^A``.
* ``clipped`` updates both tables towards one shared target every step.
  ``clipped_random`` updates one table per step, chosen by a fair coin.
  Its target takes the argmax from the table being updated and clips
  with the other table.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numba
import numpy as np

from .errors import ConfigError, ContractError, PreconditionError

VARIANTS = ("q", "double", "clipped", "clipped_random")
_VARIANT_CODE = {name: i for i, name in enumerate(VARIANTS)}

_ROW_TOL = 1e-12


@dataclass(frozen=True)
class FiniteMdp:
    P: np.ndarray           # (S, A, S) transition probabilities
    R: np.ndarray           # (S, A) mean rewards
    noise_std: np.ndarray   # (S, A) Gaussian reward noise
    gamma: float

    def __post_init__(self):
        P = np.asarray(self.P, dtype=np.float64)
        R = np.asarray(self.R, dtype=np.float64)
        noise = np.broadcast_to(np.asarray(self.noise_std, dtype=np.float64), R.shape).copy()
        if P.ndim != 3 or P.shape[0] != P.shape[2] or P.shape[:2] != R.shape:
            raise ConfigError(f"inconsistent shapes P{P.shape} R{R.shape}")
        if np.any(P < 0) or np.any(np.abs(P.sum(axis=2) - 1.0) > _ROW_TOL):
            raise ConfigError("every P[s, a] must be a distribution summing to 1")
        if np.any(noise < 0) or not np.all(np.isfinite(R)):
            raise ConfigError("reward table must be finite and noise non-negative")
        if not 0.0 <= self.gamma < 1.0:
            raise ConfigError(f"gamma must lie in [0, 1), got {self.gamma}")
        object.__setattr__(self, "P", P)
        object.__setattr__(self, "R", R)
        object.__setattr__(self, "noise_std", noise)
        object.__setattr__(self, "gamma", float(self.gamma))

    @property
    def n_states(self):
        return self.R.shape[0]

    @property
    def n_actions(self):
        return self.R.shape[1]

    @property
    def deterministic_rewards(self):
        return not np.any(self.noise_std > 0)


def random_mdp(seed, n_states=6, n_actions=3, gamma=0.9, noise_std=0.0) -> FiniteMdp:
    """Dirichlet(1) transitions and U(0, 1) mean rewards."""
    rng = np.random.default_rng(seed)
    P = rng.dirichlet(np.ones(n_states), size=(n_states, n_actions))
    P /= P.sum(axis=2, keepdims=True)
    R = rng.uniform(0.0, 1.0, size=(n_states, n_actions))
    return FiniteMdp(P, R, np.full((n_states, n_actions), float(noise_std)), gamma)


def noisy_reward_mdp(seed=0, n_states=6, n_actions=3, gamma=0.9, noise_std=1.0) -> FiniteMdp:
    """Zero-mean rewards with Gaussian noise, so Q* is identically zero.

    Any positive value in a learned table is pure overestimation.
    """
    rng = np.random.default_rng(seed)
    P = rng.dirichlet(np.ones(n_states), size=(n_states, n_actions))
    P /= P.sum(axis=2, keepdims=True)
    R = np.zeros((n_states, n_actions))
    return FiniteMdp(P, R, np.full((n_states, n_actions), float(noise_std)), gamma)


def chain_mdp(n_states=5, gamma=0.9) -> FiniteMdp:
    """Deterministic chain: action 0 moves left, action 1 moves right.

    Arriving at the right end pays 1; every other move pays 0.
    """
    P = np.zeros((n_states, 2, n_states))
    R = np.zeros((n_states, 2))
    for s in range(n_states):
        P[s, 0, max(s - 1, 0)] = 1.0
        right = min(s + 1, n_states - 1)
        P[s, 1, right] = 1.0
        R[s, 1] = 1.0 if right == n_states - 1 else 0.0
    return FiniteMdp(P, R, np.zeros((n_states, 2)), gamma)


# --- plain-text format -------------------------------------------------------
#
#   n_states n_actions gamma
#   P rows: one line per (s, a), row-major, n_states numbers each
#   R rows: one line per s, n_actions numbers each
#   noise rows: one line per s, n_actions numbers each
#
# Blank lines and anything after '#' are ignored.

def save_mdp(mdp: FiniteMdp, path):
    S, A = mdp.n_states, mdp.n_actions
    lines = ["# finite MDP: header, then P (S*A rows), R (S rows), noise (S rows)",
             f"{S} {A} {mdp.gamma!r}"]
    fmt = lambda row: " ".join(repr(float(v)) for v in row)
    lines += [fmt(mdp.P[s, a]) for s in range(S) for a in range(A)]
    lines += [fmt(mdp.R[s]) for s in range(S)]
    lines += [fmt(mdp.noise_std[s]) for s in range(S)]
    with open(path, "w") as f:
        f.write("\n".join(lines) + "\n")


def load_mdp(path) -> FiniteMdp:
    with open(path) as f:
        tokens = [tok for line in f for tok in line.split("#", 1)[0].split()]
    try:
        S, A, gamma = int(tokens[0]), int(tokens[1]), float(tokens[2])
        values = np.array(tokens[3:], dtype=np.float64)
    except (IndexError, ValueError) as exc:
        raise ConfigError(f"malformed MDP file {path}: {exc}") from None
    need = S * A * S + 2 * S * A
    if values.size != need:
        raise ConfigError(f"MDP file {path} has {values.size} numbers, expected {need}")
    P = values[: S * A * S].reshape(S, A, S)
    R = values[S * A * S: S * A * S + S * A].reshape(S, A)
    noise = values[S * A * S + S * A:].reshape(S, A)
    return FiniteMdp(P, R, noise, gamma)


# --- value iteration ---------------------------------------------------------

def bellman_optimality(mdp: FiniteMdp, Q):
    return mdp.R + mdp.gamma * mdp.P @ Q.max(axis=1)


def value_iteration(mdp: FiniteMdp, tol=1e-10, max_iter=100_000):
    """Q* with sup-norm Bellman residual below ``tol``."""
    if not tol > 0:
        raise PreconditionError("tol must be positive")
    Q = np.zeros_like(mdp.R)
    for _ in range(max_iter):
        TQ = bellman_optimality(mdp, Q)
        if np.max(np.abs(TQ - Q)) < tol:
            return Q
        Q = TQ
    raise ContractError(f"value iteration did not reach tol={tol} in {max_iter} sweeps")


# --- tables and single-step updates -----------------------------------------

@dataclass
class QTables:
    qa: np.ndarray
    qb: np.ndarray
    visits: np.ndarray = field(default=None)

    def __post_init__(self):
        self.qa = np.array(self.qa, dtype=np.float64)
        self.qb = np.array(self.qb, dtype=np.float64)
        if self.visits is None:
            self.visits = np.zeros(self.qa.shape, dtype=np.int64)

    @classmethod
    def zeros(cls, n_states, n_actions):
        return cls(np.zeros((n_states, n_actions)), np.zeros((n_states, n_actions)))

    @classmethod
    def uniform(cls, n_states, n_actions, scale, rng):
        """Independent U(-scale, scale) starting values for both tables."""
        shape = (n_states, n_actions)
        return cls(rng.uniform(-scale, scale, shape), rng.uniform(-scale, scale, shape))

    def copy(self):
        return QTables(self.qa.copy(), self.qb.copy(), self.visits.copy())

    def estimate(self, variant):
        """Table used for scoring: Q^A for Q-learning, the mean table otherwise."""
        return self.qa if variant == "q" else 0.5 * (self.qa + self.qb)


def greedy(row):
    """argmax with ties resolved to the lowest index."""
    return int(np.argmax(row))


def _check(tables, s, a, s2, alpha):
    S, A = tables.qa.shape
    if not (0 <= s < S and 0 <= s2 < S and 0 <= a < A):
        raise ContractError(f"transition ({s}, {a}, {s2}) outside a {S}x{A} table")
    if not 0.0 <= alpha <= 1.0:
        raise PreconditionError(f"alpha must lie in [0, 1], got {alpha}")


def q_learning_step(tables: QTables, s, a, r, s2, alpha, gamma):
    _check(tables, s, a, s2, alpha)
    y = r + gamma * tables.qa[s2].max()
    tables.qa[s, a] += alpha * (y - tables.qa[s, a])
    tables.visits[s, a] += 1
    return tables


def double_q_step(tables: QTables, s, a, r, s2, alpha, gamma, update_a: bool):
    """Update one table, evaluating its own greedy action with the other table."""
    _check(tables, s, a, s2, alpha)
    own, other = (tables.qa, tables.qb) if update_a else (tables.qb, tables.qa)
    y = r + gamma * other[s2, greedy(own[s2])]
    own[s, a] += alpha * (y - own[s, a])
    tables.visits[s, a] += 1
    return tables


def clipped_target(tables: QTables, r, s2, gamma, select_with_a=True):
    select, other = (tables.qa, tables.qb) if select_with_a else (tables.qb, tables.qa)
    a_star = greedy(select[s2])
    return r + gamma * min(select[s2, a_star], other[s2, a_star])


def clipped_double_q_step(tables: QTables, s, a, r, s2, alpha, gamma, update="both"):
    """Clipped Double Q update.

    ``update`` is "both" (shared target for both tables), "a" or "b". A
    single-table update selects a* with the table being updated.
    """
    _check(tables, s, a, s2, alpha)
    if update == "both":
        y = clipped_target(tables, r, s2, gamma)
        tables.qa[s, a] += alpha * (y - tables.qa[s, a])
        tables.qb[s, a] += alpha * (y - tables.qb[s, a])
    elif update in ("a", "b"):
        own = tables.qa if update == "a" else tables.qb
        y = clipped_target(tables, r, s2, gamma, select_with_a=update == "a")
        own[s, a] += alpha * (y - own[s, a])
    else:
        raise ConfigError(f"update must be 'both', 'a' or 'b', got {update!r}")
    tables.visits[s, a] += 1
    return tables


def default_alpha(visits):
    """Robbins-Monro step size 10 / (10 + n(s, a)), with n counted before the update."""
    return 10.0 / (10.0 + visits)


# --- runs ---------------------------------------------------------------------

@dataclass
class Draws:
    """Pre-drawn randomness for a block of steps, consumed one index per step."""

    explore: np.ndarray     # uniform, compared with epsilon
    action: np.ndarray      # uniform random action index
    next_u: np.ndarray      # uniform, inverted through the transition CDF
    noise: np.ndarray       # standard normal reward noise
    coin: np.ndarray        # uniform, < 0.5 means update table A

    @classmethod
    def draw(cls, rng, n, n_actions):
        return cls(rng.random(n), rng.integers(0, n_actions, n), rng.random(n),
                   rng.standard_normal(n), rng.random(n))


@dataclass
class TabularResult:
    tables: QTables
    variant: str
    checkpoints: np.ndarray
    bias: np.ndarray
    q_star: np.ndarray

    @property
    def final_bias(self):
        return float(self.bias[-1])

    def sup_error(self, table=None):
        table = self.tables.qa if table is None else table
        return float(np.max(np.abs(table - self.q_star)))

    def relative_error(self, table=None):
        """Sup-norm error over ||Q*||_inf; nan when Q* is identically zero."""
        scale = float(np.max(np.abs(self.q_star)))
        return self.sup_error(table) / scale if scale > 0 else float("nan")


def state_bias(estimate, q_star):
    """Uniform average over states of max_a Q(s, a) - max_a Q*(s, a)."""
    return float(np.mean(estimate.max(axis=1) - q_star.max(axis=1)))


def _transition_cdf(mdp):
    cdf = np.cumsum(mdp.P, axis=2)
    cdf[..., -1] = 1.0
    return cdf


@numba.njit(cache=True)
def _argmax_row(q, s):
    best = 0
    for j in range(1, q.shape[1]):
        if q[s, j] > q[s, best]:
            best = j
    return best


@numba.njit(cache=True)
def _kernel(code, qa, qb, visits, s, cdf, R, noise_std, gamma, epsilon,
            explore, action, next_u, noise, coin, lo, hi):
    S = cdf.shape[0]
    for i in range(lo, hi):
        if explore[i] < epsilon:
            a = action[i]
        else:
            a = _argmax_row(qa, s)
        u = next_u[i]
        s2 = 0
        while s2 < S - 1 and cdf[s, a, s2] <= u:
            s2 += 1
        r = R[s, a] + noise_std[s, a] * noise[i]
        alpha = 10.0 / (10.0 + visits[s, a])
        if code == 0:
            best = qa[s2, 0]
            for j in range(1, qa.shape[1]):
                if qa[s2, j] > best:
                    best = qa[s2, j]
            qa[s, a] += alpha * (r + gamma * best - qa[s, a])
        elif code == 1:
            if coin[i] < 0.5:
                y = r + gamma * qb[s2, _argmax_row(qa, s2)]
                qa[s, a] += alpha * (y - qa[s, a])
            else:
                y = r + gamma * qa[s2, _argmax_row(qb, s2)]
                qb[s, a] += alpha * (y - qb[s, a])
        elif code == 2:
            k = _argmax_row(qa, s2)
            y = r + gamma * min(qa[s2, k], qb[s2, k])
            qa[s, a] += alpha * (y - qa[s, a])
            qb[s, a] += alpha * (y - qb[s, a])
        else:
            if coin[i] < 0.5:
                k = _argmax_row(qa, s2)
                y = r + gamma * min(qa[s2, k], qb[s2, k])
                qa[s, a] += alpha * (y - qa[s, a])
            else:
                k = _argmax_row(qb, s2)
                y = r + gamma * min(qb[s2, k], qa[s2, k])
                qb[s, a] += alpha * (y - qb[s, a])
        visits[s, a] += 1
        s = s2
    return s


def _next_state(cdf, s, a, u):
    row = cdf[s, a]
    s2 = 0
    while s2 < len(row) - 1 and row[s2] <= u:
        s2 += 1
    return s2


def reference_step(mdp, cdf, tables, variant, s, d: Draws, i, epsilon):
    """One run step through the public step functions (slow, for cross-checks)."""
    a = int(d.action[i]) if d.explore[i] < epsilon else greedy(tables.qa[s])
    s2 = _next_state(cdf, s, a, d.next_u[i])
    r = mdp.R[s, a] + mdp.noise_std[s, a] * d.noise[i]
    alpha = default_alpha(tables.visits[s, a])
    if variant == "q":
        q_learning_step(tables, s, a, r, s2, alpha, mdp.gamma)
    elif variant == "double":
        double_q_step(tables, s, a, r, s2, alpha, mdp.gamma, update_a=d.coin[i] < 0.5)
    elif variant == "clipped":
        clipped_double_q_step(tables, s, a, r, s2, alpha, mdp.gamma)
    else:
        clipped_double_q_step(tables, s, a, r, s2, alpha, mdp.gamma,
                              update="a" if d.coin[i] < 0.5 else "b")
    return s2


def run_tabular(mdp: FiniteMdp, variant, steps, seed, epsilon=0.1, record_every=None,
                init_scale=0.0, chunk=1 << 16, q_star=None, engine="numba") -> TabularResult:
    """Run ``steps`` epsilon-greedy transitions (greedy on Q^A) from a uniform start state.

    The step size is 10 / (10 + n(s, a)). Bias is recorded at every multiple
    of ``record_every`` and at the final step. Randomness is drawn in
    fixed-size blocks that do not depend on ``record_every``, so the
    recording grid never changes the trajectory. ``engine="python"`` runs the
    same draws through the public step functions.
    """
    if variant not in _VARIANT_CODE:
        raise ConfigError(f"unknown tabular variant {variant!r}; choose from {VARIANTS}")
    if steps < 0 or not 0.0 <= epsilon <= 1.0:
        raise PreconditionError("steps must be >= 0 and epsilon in [0, 1]")
    if engine not in ("numba", "python"):
        raise ConfigError(f"unknown engine {engine!r}")
    rng = np.random.default_rng(seed)
    S, A = mdp.n_states, mdp.n_actions
    tables = QTables.uniform(S, A, init_scale, rng) if init_scale > 0 else QTables.zeros(S, A)
    q_star = value_iteration(mdp) if q_star is None else q_star
    s = int(rng.integers(S))
    cdf = _transition_cdf(mdp)
    record_every = record_every or max(steps, 1)
    marks = list(range(record_every, steps, record_every)) + [steps]
    checkpoints, bias = [0], [state_bias(tables.estimate(variant), q_star)]
    done = 0
    code = _VARIANT_CODE[variant]
    while done < steps:
        n = min(chunk, steps - done)
        d = Draws.draw(rng, n, A)
        lo = 0
        while lo < n:
            hi = min(n, marks[0] - done)
            if engine == "numba":
                s = int(_kernel(code, tables.qa, tables.qb, tables.visits, s, cdf, mdp.R,
                                mdp.noise_std, mdp.gamma, epsilon, d.explore, d.action,
                                d.next_u, d.noise, d.coin, lo, hi))
            else:
                for i in range(lo, hi):
                    s = reference_step(mdp, cdf, tables, variant, s, d, i, epsilon)
            if hi + done == marks[0]:
                checkpoints.append(marks.pop(0))
                bias.append(state_bias(tables.estimate(variant), q_star))
            lo = hi
        done += n
    return TabularResult(tables, variant, np.array(checkpoints), np.array(bias), q_star)
