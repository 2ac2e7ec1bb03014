"""Experiment configuration, training runs, the ablation matrix and aggregation.

Output layout for one run::

    <out>/<env>/<variant>/seed_<n>/curve.csv    evaluation curve (the contract)
    <out>/<env>/<variant>/seed_<n>/bias.csv     value-bias probes, when tracked
    <out>/<env>/<variant>/seed_<n>/timing.csv   wall-clock per evaluation
    <out>/<env>/<variant>/seed_<n>/agent.snap   final agent snapshot

Wall-clock lives in its own file so that ``curve.csv`` is byte-identical
across repeats of the same (config, seed). Every CSV begins with a
``# td3lab-<kind> v<N>`` schema line.
"""

from __future__ import annotations

import csv
import dataclasses
import hashlib
import io
import json
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import tomli
from threadpoolctl import threadpool_limits

from .agents import VARIANTS, Agent, AgentConfig, expand_variant, save_agent
from .diagnostics import estimate_value_bias, horizon_for_tolerance
from .envs import make_env, rollout_eval, truncation_bound
from .errors import AlignmentError, ConfigError, NumericError
from .seeding import streams
from .training import Trainer

CURVE_SCHEMA = "# td3lab-curve v1"
BIAS_SCHEMA = "# td3lab-bias v1"
TIMING_SCHEMA = "# td3lab-timing v1"
SUMMARY_SCHEMA = "# td3lab-summary v1"
ABLATION_SCHEMA = "# td3lab-ablation v1"
TABULAR_SCHEMA = "# td3lab-tabular v1"
SWEEP_SCHEMA = "# td3lab-tau-sweep v1"

CURVE_FIELDS = ["step", "eval_mean", "eval_std", "status", "seed", "env", "variant", "config_hash"]
TABULAR_FIELDS = ["step", "bias", "variant", "seed"]
SWEEP_FIELDS = ["tau", "seed", "step", "value"]
BIAS_FIELDS = ["step", "estimate_mean", "true_mean", "gap", "n_states", "n_episodes", "seed",
               "config_hash"]

PROFILES = {
    "paper": dict(hidden=(400, 300), total_steps=1_000_000, eval_every=5000, eval_episodes=10,
                  seeds=tuple(range(10)), start_steps=1000, bias_states=10_000,
                  bias_episodes=1000),
    "desk": dict(hidden=(64, 64), total_steps=30_000, eval_every=1000, eval_episodes=10,
                 seeds=tuple(range(5)), start_steps=1000, bias_states=1000, bias_episodes=100),
}

# agent hyperparameters that may appear under [agent]
_AGENT_KEYS = {f.name for f in dataclasses.fields(AgentConfig)} - {
    "state_dim", "action_dim", "action_low", "action_high"}
# keys excluded from the config hash: they choose which runs happen, not what a run computes
_UNHASHED = {"seeds", "out_dir", "workers", "variants"}


@dataclass(frozen=True)
class ExperimentConfig:
    env: str = "pendulum"
    variant: str = "td3"
    profile: str = "desk"
    agent: dict = field(default_factory=dict)   # AgentConfig overrides, applied after the variant
    total_steps: int = None
    eval_every: int = None
    eval_episodes: int = None
    seeds: tuple = None
    start_steps: int = None
    capacity: int = 0               # 0 keeps the entire history
    track_bias: bool = False
    bias_every: int = 0             # 0 probes at every evaluation
    bias_states: int = None
    bias_episodes: int = None
    bias_tolerance: float = 1.0     # largest acceptable truncation bound of the true value
    save_replay: bool = False
    out_dir: str = "runs"
    workers: int = 1
    variants: tuple = tuple(VARIANTS)

    def __post_init__(self):
        if self.profile not in PROFILES:
            raise ConfigError(f"unknown profile {self.profile!r}; choose from {sorted(PROFILES)}")
        prof = PROFILES[self.profile]
        for key in ("total_steps", "eval_every", "eval_episodes", "seeds", "start_steps",
                    "bias_states", "bias_episodes"):
            if getattr(self, key) is None:
                object.__setattr__(self, key, prof[key])
        agent = dict(self.agent)
        agent.setdefault("hidden", prof["hidden"])
        unknown = set(agent) - _AGENT_KEYS
        if unknown:
            raise ConfigError(f"unknown agent keys {sorted(unknown)}")
        if "hidden" in agent:
            agent["hidden"] = tuple(agent["hidden"])
        object.__setattr__(self, "agent", agent)
        object.__setattr__(self, "seeds", tuple(int(s) for s in self.seeds))
        object.__setattr__(self, "variants", tuple(self.variants))
        make_env(self.env)
        for name in (self.variant, *self.variants):
            if name not in VARIANTS:
                raise ConfigError(f"unknown variant {name!r}; choose from {list(VARIANTS)}")
        if self.total_steps < 0:
            raise ConfigError("total_steps must be >= 0")
        if self.eval_every < 1 or (self.total_steps > 0 and self.eval_every > self.total_steps):
            raise ConfigError("eval_every must lie in [1, total_steps]")
        if not self.seeds:
            raise ConfigError("seeds must be non-empty")
        if self.eval_episodes < 1 or self.bias_states < 1 or self.bias_episodes < 1:
            raise ConfigError("episode and state counts must be positive")
        if self.bias_every < 0 or self.bias_every % self.eval_every:
            raise ConfigError("bias_every must be 0 or a multiple of eval_every")
        if self.workers < 1:
            raise ConfigError("workers must be >= 1")
        self.agent_config()

    def agent_config(self) -> AgentConfig:
        spec = make_env(self.env).spec
        base = AgentConfig(spec.state_dim, spec.action_dim, spec.action_low, spec.action_high)
        cfg = expand_variant(self.variant, base)
        try:
            return dataclasses.replace(cfg, **self.agent)
        except TypeError as exc:
            raise ConfigError(str(exc)) from None

    def with_(self, **changes) -> "ExperimentConfig":
        return dataclasses.replace(self, **changes)

    def to_dict(self):
        d = dataclasses.asdict(self)
        d["agent"] = {k: list(v) if isinstance(v, tuple) else v for k, v in sorted(d["agent"].items())}
        return d

    def config_hash(self):
        """Hash of everything that determines a single run's output, except the seed."""
        d = {k: v for k, v in self.to_dict().items() if k not in _UNHASHED}
        d["resolved_agent"] = self.agent_config().to_dict()
        blob = json.dumps(d, sort_keys=True, default=list).encode()
        return hashlib.sha256(blob).hexdigest()[:16]

    def eval_grid(self):
        grid = list(range(0, self.total_steps + 1, self.eval_every))
        if grid[-1] != self.total_steps:
            grid.append(self.total_steps)
        return grid

    def capacity_or_default(self):
        return self.capacity if self.capacity > 0 else max(self.total_steps, 1)


def load_config(path, **overrides) -> ExperimentConfig:
    """Read an experiment TOML file.

    Top-level keys map to ``ExperimentConfig`` fields. ``[variant]`` holds
    ``name`` plus optional flag overrides (``mode``, ``cdq``,
    ``policy_delay``, ``smoothing``). ``[agent]`` holds hyperparameters.
    ``[bias]`` holds ``track``, ``every``, ``states``, ``episodes`` and
    ``tolerance``. ``overrides`` are applied last, skipping ``None``.
    """
    with open(path, "rb") as fh:
        try:
            raw = tomli.load(fh)
        except tomli.TOMLDecodeError as exc:
            raise ConfigError(f"{path}: {exc}") from None
    return config_from_dict(raw, **overrides)


def config_from_dict(raw: dict, **overrides) -> ExperimentConfig:
    raw = dict(raw)
    kw = {}
    variant = raw.pop("variant", {})
    if isinstance(variant, str):
        variant = {"name": variant}
    agent = dict(raw.pop("agent", {}))
    if "name" in variant:
        kw["variant"] = variant.pop("name")
    agent.update(variant)
    bias = raw.pop("bias", {})
    for src, dst in (("track", "track_bias"), ("every", "bias_every"), ("states", "bias_states"),
                     ("episodes", "bias_episodes"), ("tolerance", "bias_tolerance")):
        if src in bias:
            kw[dst] = bias.pop(src)
    if bias:
        raise ConfigError(f"unknown [bias] keys {sorted(bias)}")
    if "out" in raw:
        raw["out_dir"] = raw.pop("out")
    known = {f.name for f in dataclasses.fields(ExperimentConfig)}
    unknown = set(raw) - known
    if unknown:
        raise ConfigError(f"unknown config keys {sorted(unknown)}")
    kw.update(raw)
    kw["agent"] = agent
    kw.update({k: v for k, v in overrides.items() if v is not None})
    for key in ("seeds", "variants"):
        if key in kw:
            kw[key] = tuple(kw[key])
    try:
        return ExperimentConfig(**kw)
    except TypeError as exc:
        raise ConfigError(str(exc)) from None


# --- single runs --------------------------------------------------------------

@dataclass
class RunResult:
    config_hash: str
    seed: int
    variant: str
    env: str
    status: str                  # "ok" or "failed"
    curve: list                  # rows as dicts, CURVE_FIELDS order
    bias: list
    run_dir: Path = None
    error: str = ""

    @property
    def failed(self):
        return self.status != "ok"


def run_dir_for(config: ExperimentConfig, seed, out_dir=None):
    return Path(out_dir or config.out_dir) / config.env / config.variant / f"seed_{seed}"


def _fmt(v):
    if isinstance(v, float):
        return repr(v)
    return str(v)


def _csv_text(schema, fields, rows, meta=None):
    buf = io.StringIO()
    buf.write(schema + "\n")
    if meta:
        buf.write("# " + " ".join(f"{k}={v}" for k, v in meta.items()) + "\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(fields)
    for row in rows:
        w.writerow([_fmt(row[f]) for f in fields])
    return buf.getvalue()


def _write_atomic(path: Path, data, mode="w"):
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, mode) as fh:
        fh.write(data)
    os.replace(tmp, path)


def read_csv(path):
    """Rows of a td3lab CSV as dicts of strings, plus the schema and metadata lines."""
    with open(path) as fh:
        lines = fh.read().splitlines()
    comments = [ln for ln in lines if ln.startswith("#")]
    body = [ln for ln in lines if not ln.startswith("#")]
    return list(csv.DictReader(body)), comments


def run_experiment(config: ExperimentConfig, seed, out_dir=None, write=True) -> RunResult:
    """Train one agent for ``config.total_steps`` environment steps.

    Evaluation happens at step 0, at every multiple of ``eval_every`` and at
    the final step. It uses the noiseless policy on the ``eval`` stream, so
    it never touches training state. Evaluation episodes do not count
    towards the step budget. Non-finite numbers mark the run failed and
    stop it, which adds a final ``failed`` row.
    """
    with threadpool_limits(limits=1):
        return _run(config, int(seed), out_dir, write)


def _run(config, seed, out_dir, write):
    env = make_env(config.env)
    acfg = config.agent_config()
    chash = config.config_hash()
    rngs = streams(seed)
    agent = Agent(acfg, rngs["init"])
    trainer = Trainer(env, agent, rngs, config.capacity_or_default(), config.start_steps)
    horizon = horizon_for_tolerance(env, acfg.gamma, config.bias_tolerance)
    bias_every = config.bias_every or config.eval_every
    base = dict(seed=seed, env=config.env, variant=config.variant, config_hash=chash)
    curve, bias, timing = [], [], []
    status, error = "ok", ""
    t0 = time.perf_counter()
    with np.errstate(over="ignore", invalid="ignore"):
        for step in config.eval_grid():
            try:
                trainer.advance(step - trainer.steps)
                mean, std = rollout_eval(env, agent.policy, config.eval_episodes, rngs["eval"])
                if not (np.isfinite(mean) and np.isfinite(std)):
                    raise NumericError("evaluation return is not finite")
                if config.track_bias and step > 0 and step % bias_every == 0 and len(trainer.buffer):
                    states = trainer.buffer.sample_states(config.bias_states, rngs["diagnostics"])
                    bp = estimate_value_bias(agent, states, env, acfg.gamma, config.bias_episodes,
                                             rngs["diagnostics"], step=step, horizon=horizon,
                                             tolerance=config.bias_tolerance)
                    if not np.isfinite(bp.gap):
                        raise NumericError("value estimate is not finite")
                    bias.append(dict(step=step, estimate_mean=bp.estimate, true_mean=bp.true_value,
                                     gap=bp.gap, n_states=bp.n_states, n_episodes=bp.n_episodes,
                                     **base))
            except (NumericError, FloatingPointError) as exc:
                status, error = "failed", f"{type(exc).__name__}: {exc}"
                curve.append(dict(step=trainer.steps, eval_mean=float("nan"),
                                  eval_std=float("nan"), status="failed", **base))
                break
            curve.append(dict(step=step, eval_mean=mean, eval_std=std, status="ok", **base))
            timing.append(dict(step=step, seconds=round(time.perf_counter() - t0, 3)))
    result = RunResult(chash, seed, config.variant, config.env, status, curve, bias, error=error)
    if write:
        d = run_dir_for(config, seed, out_dir)
        result.run_dir = d
        _write_atomic(d / "curve.csv", _csv_text(CURVE_SCHEMA, CURVE_FIELDS, curve))
        _write_atomic(d / "timing.csv", _csv_text(TIMING_SCHEMA, ["step", "seconds"], timing))
        if config.track_bias:
            meta = dict(horizon=horizon, tolerance=config.bias_tolerance,
                        truncation_bound=f"{truncation_bound(env, acfg.gamma, horizon):.6g}")
            _write_atomic(d / "bias.csv", _csv_text(BIAS_SCHEMA, BIAS_FIELDS, bias, meta))
        _write_atomic(d / "config.json", json.dumps(config.to_dict(), sort_keys=True, indent=1,
                                                    default=list) + "\n")
        if status == "ok":
            tmp = d / "agent.snap.tmp"
            save_agent(agent, tmp, extra=dict(seed=seed, config_hash=chash, steps=trainer.steps))
            os.replace(tmp, d / "agent.snap")
            if config.save_replay:
                trainer.buffer.dump(d / "replay.bin")
    return result


def _run_job(args):
    config, seed, out_dir = args
    return run_experiment(config, seed, out_dir)


def run_many(jobs, workers=1):
    """Run (config, seed) jobs, in-process or on a bounded process pool. Order is preserved."""
    jobs = list(jobs)
    if workers <= 1 or len(jobs) <= 1:
        return [_run_job(j) for j in jobs]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(_run_job, jobs))


def run_seeds(config: ExperimentConfig, out_dir=None):
    return run_many([(config, s, out_dir) for s in config.seeds], config.workers)


# --- aggregation --------------------------------------------------------------

@dataclass
class Curve:
    steps: np.ndarray
    returns: np.ndarray
    seed: int
    config_hash: str
    status: str = "ok"
    variant: str = ""
    env: str = ""

    @classmethod
    def from_rows(cls, rows):
        if not rows:
            raise AlignmentError("empty curve")
        ok = [r for r in rows if r["status"] == "ok"]
        status = "ok" if len(ok) == len(rows) else "failed"
        return cls(np.array([int(r["step"]) for r in ok]),
                   np.array([float(r["eval_mean"]) for r in ok]),
                   int(rows[0]["seed"]), rows[0]["config_hash"], status,
                   rows[0].get("variant", ""), rows[0].get("env", ""))

    @classmethod
    def read(cls, path):
        return cls.from_rows(read_csv(path)[0])


@dataclass
class Summary:
    steps: np.ndarray
    mean: np.ndarray
    std: np.ndarray              # sample std (n - 1); nan for a single seed
    n_seeds: int
    max_average_return: float
    max_average_step: int
    final10_mean: float          # mean over seeds of each seed's last-10-evaluation average
    final10_std: float
    config_hash: str


def aggregate(curves) -> Summary:
    """Across-seed statistics over a shared evaluation grid.

    Max Average Return is the maximum over steps of the across-seed mean.
    Standard deviations use the n - 1 denominator.
    """
    curves = list(curves)
    if not curves:
        raise AlignmentError("need at least one curve")
    hashes = {c.config_hash for c in curves}
    if len(hashes) > 1:
        raise AlignmentError(f"curves come from different configs: {sorted(hashes)}")
    steps = curves[0].steps
    for c in curves[1:]:
        if not np.array_equal(c.steps, steps):
            raise AlignmentError(f"seed {c.seed} has a different evaluation grid")
    R = np.stack([c.returns for c in curves])
    n = len(curves)
    mean = R.mean(axis=0)
    std = R.std(axis=0, ddof=1) if n > 1 else np.full(R.shape[1], np.nan)
    best = int(np.argmax(mean))
    final = R[:, -10:].mean(axis=1)
    return Summary(steps, mean, std, n, float(mean[best]), int(steps[best]), float(final.mean()),
                   float(final.std(ddof=1)) if n > 1 else float("nan"), curves[0].config_hash)


SUMMARY_FIELDS = ["step", "mean", "std", "n_seeds", "config_hash"]
ABLATION_FIELDS = ["env", "variant", "n_seeds", "n_failed", "final10_mean", "final10_std",
                   "max_average_return", "max_average_step", "config_hash"]


def summary_rows(summary: Summary):
    return [dict(step=int(s), mean=float(m), std=float(sd), n_seeds=summary.n_seeds,
                 config_hash=summary.config_hash)
            for s, m, sd in zip(summary.steps, summary.mean, summary.std)]


def collect_curves(root):
    """All curve files under ``root``, grouped by (env, variant)."""
    groups = {}
    for path in sorted(Path(root).rglob("curve.csv")):
        c = Curve.read(path)
        groups.setdefault((c.env, c.variant), []).append(c)
    return groups


def aggregate_dir(root, plot=True):
    """Aggregate every (env, variant) group under ``root``.

    Writes ``summary_<env>_<variant>.csv`` per group plus ``ablation.csv``
    with one row per group, and an SVG of the curves when ``plot`` is set.
    Failed runs are counted and left out of the statistics.
    """
    root = Path(root)
    groups = collect_curves(root)
    if not groups:
        raise AlignmentError(f"no curve.csv files under {root}")
    table, summaries = [], {}
    for (env_id, variant), curves in sorted(groups.items()):
        ok = [c for c in curves if c.status == "ok"]
        n_failed = len(curves) - len(ok)
        if not ok:
            table.append(dict(env=env_id, variant=variant, n_seeds=0, n_failed=n_failed,
                              final10_mean=float("nan"), final10_std=float("nan"),
                              max_average_return=float("nan"), max_average_step=-1,
                              config_hash=curves[0].config_hash))
            continue
        s = aggregate(ok)
        summaries[(env_id, variant)] = s
        _write_atomic(root / f"summary_{env_id}_{variant}.csv",
                      _csv_text(SUMMARY_SCHEMA, SUMMARY_FIELDS, summary_rows(s)))
        table.append(dict(env=env_id, variant=variant, n_seeds=s.n_seeds, n_failed=n_failed,
                          final10_mean=s.final10_mean, final10_std=s.final10_std,
                          max_average_return=s.max_average_return,
                          max_average_step=s.max_average_step, config_hash=s.config_hash))
    order = {v: i for i, v in enumerate(VARIANTS)}
    table.sort(key=lambda r: (r["env"], order.get(r["variant"], len(order))))
    _write_atomic(root / "ablation.csv", _csv_text(ABLATION_SCHEMA, ABLATION_FIELDS, table))
    if plot and summaries:
        from .plotting import plot_summaries
        for env_id in sorted({e for e, _ in summaries}):
            plot_summaries({v: s for (e, v), s in summaries.items() if e == env_id},
                           root / f"curves_{env_id}.svg", title=env_id)
    return table, summaries


def run_ablation_matrix(config: ExperimentConfig, out_dir=None, plot=True):
    """Every variant in ``config.variants`` for every seed, then aggregation.

    Failed runs are recorded and do not stop the matrix. Returns the
    per-run results and the ablation table rows.
    """
    out_dir = Path(out_dir or config.out_dir)
    jobs = [(config.with_(variant=v), s, out_dir) for v in config.variants for s in config.seeds]
    results = run_many(jobs, config.workers)
    table, _ = aggregate_dir(out_dir, plot=plot)
    return results, table
