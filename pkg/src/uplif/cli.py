"""Command-line benchmark harness.

Subcommands: gen, bulk-load, bench, train-agent, range-bench. The env var
``UPLIF_SEED`` overrides ``--seed`` everywhere. Exit codes: 0 on success,
2 on validation errors.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

import numpy as np

from . import bench as bc
from .index import IndexConfig, UplifIndex
from .tuner import Action, AgentConfig, QLearningTuner, load_qtable, save_qtable

EXIT_OK = 0
EXIT_VALIDATION = 2


def _resolve_seed(seed: int) -> int:
    env = os.environ.get("UPLIF_SEED")
    if env is not None:
        return int(env)
    return seed


def _load_keys(path: str) -> np.ndarray:
    return bc.load_dataset(path)


def _bulk_index(keys: np.ndarray, stream: bc.OpStream, cfg: IndexConfig) -> UplifIndex:
    return UplifIndex.bulk_load(stream.init_pairs, cfg)


def _cmd_gen(args) -> int:
    seed = _resolve_seed(args.seed)
    if args.dist == "lognormal":
        keys = bc.gen_lognormal(args.n, mu=args.mu, sigma=args.sigma, seed=seed)
    else:
        keys = bc.gen_uniform(args.n, seed=seed)
    bc.write_dataset(args.out, keys)
    print(f"wrote {keys.size} keys to {args.out}")
    return EXIT_OK


def _cmd_bulk_load(args) -> int:
    keys = _load_keys(args.data)
    rng = np.random.default_rng(_resolve_seed(args.seed))
    values = rng.integers(0, bc.VALUE_MAX, size=keys.size, dtype=np.uint64)
    idx = UplifIndex.bulk_load(list(zip((int(k) for k in keys), (int(v) for v in values))), IndexConfig())
    pm = idx.stats()
    stats = {
        "keys": int(keys.size),
        "height": pm.height,
        "segments": pm.segment_count,
        "models": pm.model_count,
        "granularity": pm.granularity,
        "error_scaling": pm.error_scaling,
        "model_error_bound": idx.base_model.error_bound,
        "memory": idx.memory_report(),
    }
    text = json.dumps(stats, indent=2)
    if args.out_stats:
        Path(args.out_stats).write_text(text + "\n", encoding="utf-8")
        print(f"wrote stats to {args.out_stats}")
    else:
        print(text)
    return EXIT_OK


def _make_agent(arg: str) -> QLearningTuner | None:
    if arg == "off":
        return None
    if arg.startswith("qtable:"):
        table = load_qtable(arg.split(":", 1)[1])
        agent = QLearningTuner(AgentConfig(epsilon=1e-9), table=table)
        agent.epsilon = 0.0  # exploit only
        return agent
    raise ValueError("--agent must be 'off' or 'qtable:PATH'")


def _cmd_bench(args) -> int:
    seed = _resolve_seed(args.seed)
    keys = _load_keys(args.data)
    kind = bc.SHORT_KINDS.get(args.workload, args.workload)
    dataset = Path(args.data).stem
    all_metrics = []
    for run in range(args.runs):
        spec = bc.WorkloadSpec(kind=kind, duration_secs=args.secs, seed=seed + run,
                               init_fraction=args.init_fraction)
        stream = bc.generate_workload(spec, keys)
        idx = _bulk_index(keys, stream, IndexConfig())
        agent = _make_agent(args.agent)
        m = bc.run_benchmark(idx, stream, duration_secs=args.secs, agent=agent,
                             workload=kind, dataset=dataset, run_id=run)
        all_metrics.append(m)
        print(
            f"run {run}: {m.ops_completed} ops in {m.elapsed:.2f}s "
            f"({m.throughput:.0f} ops/s), p50 {m.p50_us:.1f}us p99 {m.p99_us:.1f}us"
        )
    mean_tp = sum(m.throughput for m in all_metrics) / len(all_metrics)
    print(f"mean throughput over {args.runs} run(s): {mean_tp:.0f} ops/s")
    if args.report:
        from .plots import render_report_figures

        bc.emit_report(all_metrics, args.report)
        figures = render_report_figures(all_metrics, args.report)
        print(f"report: {args.report}")
        for f in figures:
            print(f"figure: {f}")
    return EXIT_OK


def _cmd_train_agent(args) -> int:
    seed = _resolve_seed(args.seed)
    keys = _load_keys(args.data)
    kind = bc.SHORT_KINDS.get(args.workload, args.workload)
    spec = bc.WorkloadSpec(kind=kind, seed=seed, init_fraction=args.init_fraction)
    stream = bc.generate_workload(spec, keys)
    idx = _bulk_index(keys, stream, IndexConfig())
    agent = QLearningTuner(AgentConfig(), seed=seed)
    it = iter(stream)
    rewards = []
    epsilons = []
    for step in range(args.steps):
        report = agent.tuning_step(idx, it)
        rewards.append(report.reward)
        epsilons.append(report.epsilon)
        if report.ops_run == 0:
            break
    save_qtable(agent.table, args.out_qtable)
    print(f"trained {len(rewards)} steps; q-table: {args.out_qtable} ({len(agent.table)} entries)")
    from .plots import render_training_curve

    fig = render_training_curve(rewards, epsilons, str(Path(args.out_qtable).with_suffix("")) + "_training.png")
    print(f"figure: {fig}")
    return EXIT_OK


def _cmd_range_bench(args) -> int:
    seed = _resolve_seed(args.seed)
    keys = _load_keys(args.data)
    spec = bc.WorkloadSpec(kind="read_only", seed=seed, init_fraction=1.0)
    stream = bc.generate_workload(spec, keys)
    idx = _bulk_index(keys, stream, IndexConfig())
    m = bc.run_range_benchmark(idx, args.queries, args.span, seed=seed)
    print(
        f"{m.ops_completed} range queries in {m.elapsed:.2f}s "
        f"({m.throughput:.0f} q/s), p50 {m.p50_us:.1f}us p99 {m.p99_us:.1f}us"
    )
    if args.report:
        from .plots import render_report_figures

        bc.emit_report([m], args.report)
        for f in render_report_figures([m], args.report):
            print(f"figure: {f}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="uplif", description="updatable learned index benchmark harness")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen", help="generate a key dataset file")
    g.add_argument("--dist", choices=["lognormal", "uniform"], required=True)
    g.add_argument("--n", type=int, required=True)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--mu", type=float, default=0.0)
    g.add_argument("--sigma", type=float, default=1.0)
    g.add_argument("--out", required=True)
    g.set_defaults(func=_cmd_gen)

    b = sub.add_parser("bulk-load", help="bulk load a dataset and print structure stats")
    b.add_argument("--data", required=True)
    b.add_argument("--seed", type=int, default=0)
    b.add_argument("--out-stats", default=None)
    b.set_defaults(func=_cmd_bulk_load)

    r = sub.add_parser("bench", help="run a workload benchmark")
    r.add_argument("--data", required=True)
    r.add_argument("--workload", choices=sorted(set(bc.SHORT_KINDS) | set(bc.WORKLOAD_KINDS)), required=True)
    r.add_argument("--secs", type=float, default=60.0)
    r.add_argument("--seed", type=int, default=0)
    r.add_argument("--agent", default="off", help="'off' or 'qtable:PATH'")
    r.add_argument("--report", default=None)
    r.add_argument("--runs", type=int, default=10)
    r.add_argument("--init-fraction", type=float, default=0.5)
    r.set_defaults(func=_cmd_bench)

    t = sub.add_parser("train-agent", help="pre-train the tuning agent on a workload")
    t.add_argument("--data", required=True)
    t.add_argument("--workload", choices=sorted(set(bc.SHORT_KINDS) | set(bc.WORKLOAD_KINDS)), required=True)
    t.add_argument("--steps", type=int, required=True)
    t.add_argument("--seed", type=int, default=0)
    t.add_argument("--init-fraction", type=float, default=0.5)
    t.add_argument("--out-qtable", required=True)
    t.set_defaults(func=_cmd_train_agent)

    q = sub.add_parser("range-bench", help="run the range-scan benchmark")
    q.add_argument("--data", required=True)
    q.add_argument("--queries", type=int, required=True)
    q.add_argument("--span", type=float, required=True)
    q.add_argument("--seed", type=int, default=0)
    q.add_argument("--report", default=None)
    q.set_defaults(func=_cmd_range_bench)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_VALIDATION if exc.code not in (0, None) else EXIT_OK
    try:
        return args.func(args)
    except (ValueError, OSError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION


if __name__ == "__main__":
    sys.exit(main())
