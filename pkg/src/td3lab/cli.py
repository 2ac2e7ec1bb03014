"""Command-line entry point: ``td3lab <command> ...``.

Exit status is 0 when every requested run finished, 1 when any run failed
and 2 for invalid configuration or usage.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from .errors import AlignmentError, ConfigError, ContractError, PreconditionError


def _ints(text):
    return tuple(int(x) for x in text.split(",") if x.strip())


def _floats(text):
    return [float(x) for x in text.split(",") if x.strip()]


def cmd_run(args):
    from .harness import load_config, run_seeds

    cfg = load_config(args.config, env=args.env, variant=args.variant, total_steps=args.steps,
                      out_dir=args.out, workers=args.workers,
                      seeds=(args.seed,) if args.seed is not None else None)
    results = run_seeds(cfg)
    for r in results:
        last = r.curve[-1]
        print(f"{r.env} {r.variant} seed={r.seed} status={r.status} step={last['step']} "
              f"return={last['eval_mean']:.2f} dir={r.run_dir}" + (f" error={r.error}" if r.error else ""))
    return 1 if any(r.failed for r in results) else 0


def cmd_ablate(args):
    from .harness import load_config, run_ablation_matrix

    cfg = load_config(args.config, out_dir=args.out, workers=args.workers)
    results, table = run_ablation_matrix(cfg, plot=not args.no_plot)
    for row in table:
        print(f"{row['env']} {row['variant']:>8} final10={row['final10_mean']:.2f} "
              f"+- {row['final10_std']:.2f} max_avg={row['max_average_return']:.2f} "
              f"failed={row['n_failed']}")
    return 1 if any(r.failed for r in results) else 0


def _load_mdp_arg(text, noise):
    from .tabular import load_mdp, noisy_reward_mdp, random_mdp

    if text.startswith("noisy"):
        seed = int(text.split(":", 1)[1]) if ":" in text else 0
        return noisy_reward_mdp(seed, noise_std=1.0 if noise is None else noise)
    try:
        seed = int(text)
    except ValueError:
        return load_mdp(text)
    return random_mdp(seed, noise_std=noise or 0.0)


def cmd_tabular(args):
    from .harness import TABULAR_FIELDS, TABULAR_SCHEMA, _csv_text, _write_atomic
    from .tabular import VARIANTS, run_tabular, value_iteration

    mdp = _load_mdp_arg(args.mdp, args.noise)
    variants = VARIANTS if args.variant == "all" else [args.variant]
    q_star = value_iteration(mdp)
    rows, traces = [], {}
    for v in variants:
        for seed in args.seeds:
            res = run_tabular(mdp, v, args.steps, seed, epsilon=args.epsilon,
                              record_every=args.record_every, q_star=q_star)
            rows += [dict(step=int(c), bias=float(b), variant=v, seed=seed)
                     for c, b in zip(res.checkpoints, res.bias)]
            table = res.tables.estimate(v)
            print(f"{v} seed={seed} final_bias={res.final_bias:.6f} "
                  f"sup_error={res.sup_error(table):.6f} rel_error={res.relative_error(table):.6f}",
                  file=sys.stderr)
        per_seed = np.array([[r["bias"] for r in rows if r["variant"] == v and r["seed"] == s]
                             for s in args.seeds])
        traces[v] = (res.checkpoints, per_seed.mean(axis=0))
    text = _csv_text(TABULAR_SCHEMA, TABULAR_FIELDS, rows)
    if args.out:
        out = Path(args.out)
        _write_atomic(out / "tabular.csv", text)
        from .plotting import plot_tabular
        plot_tabular(traces, out / "tabular.svg", title=f"mdp={args.mdp}")
    else:
        sys.stdout.write(text)
    return 0


def cmd_diagnose_bias(args):
    from .agents import load_agent
    from .diagnostics import estimate_value_bias, horizon_for_tolerance
    from .envs import make_env
    from .replay import ReplayBuffer
    from .seeding import stream

    env = make_env(args.env)
    agent = load_agent(args.snapshot)
    rng = stream(args.seed, "diagnostics")
    if args.replay:
        states = ReplayBuffer.load(args.replay).sample_states(args.states, rng)
    else:
        states = env.observe_batch(env.reset_batch(rng, args.states)[0])
    gamma = agent.config.gamma
    horizon = args.horizon or horizon_for_tolerance(env, gamma, args.tolerance)
    bp = estimate_value_bias(agent, states, env, gamma, args.episodes, rng, horizon=horizon,
                             tolerance=args.tolerance)
    print("estimate_mean,true_mean,gap,n_states,n_episodes,horizon,truncation_bound,truncated")
    print(f"{bp.estimate!r},{bp.true_value!r},{bp.gap!r},{bp.n_states},{bp.n_episodes},"
          f"{bp.horizon},{bp.truncation_bound:.6g},{bp.truncated}")
    return 0


def cmd_diagnose_sweep(args):
    from .diagnostics import tau_sweep
    from .envs import make_env
    from .harness import SWEEP_FIELDS, SWEEP_SCHEMA, _csv_text, _write_atomic

    env = make_env(args.env)
    curves = tau_sweep(env, args.taus, args.fixed_policy, args.steps, args.seeds,
                       record_every=args.record_every, start_steps=args.start_steps)
    rows = [dict(tau=tau, seed=seed, step=int(step), value=float(v))
            for tau in curves.taus
            for seed, row in zip(args.seeds, curves.values[tau])
            for step, v in zip(curves.steps, row)]
    text = _csv_text(SWEEP_SCHEMA, SWEEP_FIELDS, rows,
                     dict(env=args.env, fixed_policy=args.fixed_policy))
    if args.out:
        out = Path(args.out)
        _write_atomic(out / "tau_sweep.csv", text)
        from .plotting import plot_sweep
        plot_sweep(curves, out / "tau_sweep.svg")
    else:
        sys.stdout.write(text)
    return 0


def cmd_aggregate(args):
    from .harness import aggregate_dir

    table, _ = aggregate_dir(args.dir, plot=not args.no_plot)
    for row in table:
        print(f"{row['env']} {row['variant']:>8} n={row['n_seeds']} failed={row['n_failed']} "
              f"final10={row['final10_mean']:.2f} max_avg={row['max_average_return']:.2f}")
    return 1 if any(row["n_failed"] for row in table) else 0


def build_parser():
    p = argparse.ArgumentParser(prog="td3lab", description="TD3 actor-critic laboratory")
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="train one variant over the configured seeds")
    r.add_argument("--config", required=True)
    r.add_argument("--seed", type=int)
    r.add_argument("--env")
    r.add_argument("--variant")
    r.add_argument("--steps", type=int)
    r.add_argument("--out")
    r.add_argument("--workers", type=int)
    r.set_defaults(func=cmd_run)

    a = sub.add_parser("ablate", help="run every ablation variant and aggregate")
    a.add_argument("--config", required=True)
    a.add_argument("--out")
    a.add_argument("--workers", type=int)
    a.add_argument("--no-plot", action="store_true")
    a.set_defaults(func=cmd_ablate)

    t = sub.add_parser("tabular", help="tabular Q / Double Q / Clipped Double Q on a finite MDP")
    t.add_argument("--mdp", required=True,
                   help="MDP file, an integer seed for a random MDP, or noisy[:seed]")
    t.add_argument("--variant", required=True, help="q, double, clipped, clipped_random or all")
    t.add_argument("--steps", type=int, default=100_000)
    t.add_argument("--seeds", type=_ints, default=(0,))
    t.add_argument("--epsilon", type=float, default=0.1)
    t.add_argument("--noise", type=float)
    t.add_argument("--record-every", type=int, default=1000)
    t.add_argument("--out")
    t.set_defaults(func=cmd_tabular)

    d = sub.add_parser("diagnose", help="bias probe or target-rate sweep")
    dsub = d.add_subparsers(dest="probe", required=True)
    b = dsub.add_parser("bias", help="critic estimate vs Monte-Carlo value of a snapshot")
    b.add_argument("--snapshot", required=True)
    b.add_argument("--env", required=True)
    b.add_argument("--replay", help="replay dump to draw states from (default: fresh resets)")
    b.add_argument("--states", type=int, default=1000)
    b.add_argument("--episodes", type=int, default=100)
    b.add_argument("--horizon", type=int)
    b.add_argument("--tolerance", type=float, default=1.0)
    b.add_argument("--seed", type=int, default=0)
    b.set_defaults(func=cmd_diagnose_bias)
    s = dsub.add_parser("tau-sweep", help="value-estimate curves per target rate")
    s.add_argument("--env", default="pendulum")
    s.add_argument("--taus", type=_floats, default=[1.0, 0.1, 0.01])
    s.add_argument("--fixed-policy", action="store_true")
    s.add_argument("--steps", type=int, default=20_000)
    s.add_argument("--seeds", type=_ints, default=(0, 1, 2, 3, 4))
    s.add_argument("--record-every", type=int, default=1000)
    s.add_argument("--start-steps", type=int, default=1000)
    s.add_argument("--out")
    s.set_defaults(func=cmd_diagnose_sweep)

    g = sub.add_parser("aggregate", help="summarise every run directory under DIR")
    g.add_argument("dir")
    g.add_argument("--no-plot", action="store_true")
    g.set_defaults(func=cmd_aggregate)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, AlignmentError, PreconditionError, ContractError, FileNotFoundError) as exc:
        print(f"td3lab: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
