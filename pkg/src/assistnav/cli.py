"""Command-line entry points: environments, routes, tasks, training, evaluation, reports."""
from __future__ import annotations

import argparse
import glob
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import model as M
from .anna import RouteSystem, Vocab, build_route_system
from .env import ContractError, EnvFormatError, SimConfig, generate_environment, load_graph, save_graph
from .evaluation import (
    REPORT_FIELDS,
    TaskDataset,
    compute_metrics,
    generate_tasks,
    read_report_csv,
    report_csv,
    report_json,
    report_table,
    run_policy,
)
from .rollout import POLICY_NAMES, World
from .training import TrainConfig, TrainingAborted, train

log = logging.getLogger("assistnav")
VOCAB_FILE = "vocab.json"


def _env_files(d) -> list[Path]:
    files = sorted(p for p in Path(d).glob("*.json") if p.name != VOCAB_FILE)
    if not files:
        raise ContractError(f"no environment files in {d}")
    return files


def load_envs(d) -> dict:
    return {p.stem: load_graph(p) for p in _env_files(d)}


def load_world(envs_dir, routes_dir=None, attention_radius: float = 2.0) -> World:
    graphs = load_envs(envs_dir)
    if routes_dir is None:
        return World.build(graphs, attention_radius=attention_radius)
    routes_dir = Path(routes_dir)
    vocab_path = routes_dir / VOCAB_FILE
    vocab = Vocab.from_json(json.loads(vocab_path.read_text())) if vocab_path.exists() else Vocab.default()
    rs = {}
    for name, g in graphs.items():
        p = routes_dir / f"{name}.json"
        if not p.exists():
            raise ContractError(f"no route file {p} for environment {name}")
        rs[name] = RouteSystem.load(g, p, attention_radius, vocab_path if vocab_path.exists() else None)
    return World(graphs, rs, vocab)


# --------------------------------------------------------------------------
# subcommands


def cmd_gen_env(a):
    g = generate_environment(a.nodes, a.radius, a.object_types, a.seed, name=a.name or Path(a.out).stem)
    save_graph(g, a.out)
    print(f"wrote {a.out}: {g.n_nodes} nodes, {len(g.edges)} edges, mean edge {g.mean_edge_length:.2f} m")


def cmd_build_routes(a):
    g = load_graph(a.env)
    rs = build_route_system(g, a.seed, attention_radius=a.attention_radius)
    rs.save(a.out, a.vocab)
    print(f"wrote {a.out}: {len(rs)} routes")


def cmd_gen_tasks(a):
    files = _env_files(a.envs)
    graphs = {p.stem: load_graph(p) for p in files}
    if a.unseen_envs:
        unseen = load_envs(a.unseen_envs)
        seen = graphs
    else:
        n_u = int(round(a.unseen_fraction * len(files))) if len(files) > 1 else 0
        names = sorted(graphs)
        unseen = {k: graphs[k] for k in names[len(names) - n_u:]} if n_u else {}
        seen = {k: graphs[k] for k in names[: len(names) - n_u]}
    counts = {s: a.per_split for s in ("train", "val_seen", "val_unseen", "test_seen", "test_unseen")}
    if not unseen:
        counts["val_unseen"] = counts["test_unseen"] = 0
    if a.train_size is not None:
        counts["train"] = a.train_size
    ds = generate_tasks(seen, unseen, counts, a.seed)
    ds.save(a.out)
    print(f"wrote {a.out}: " + ", ".join(f"{k}={len(v)}" for k, v in ds.splits.items()))


def cmd_train(a):
    world = load_world(a.envs, a.routes)
    ds = TaskDataset.load(a.tasks)
    tcfg = TrainConfig(alpha=a.alpha, lr=a.lr, iterations=a.iters, batch_size=a.batch, seed=a.seed,
                       eval_every=a.eval_every)
    mcfg = M.ModelConfig(vocab_size=len(world.vocab), hidden=a.hidden, heads=a.heads)
    out = Path(a.out)
    curve = a.curve or str(out.with_suffix(".curve.csv"))
    eval_tasks = ds.splits.get(a.eval_split, [])[: a.eval_tasks]
    res = train(world, ds.splits["train"], tcfg, mcfg, eval_tasks=eval_tasks, curve_path=curve)
    meta = dict(train=tcfg.__dict__, envs=str(Path(a.envs).resolve()),
                routes=str(Path(a.routes).resolve()) if a.routes else None)
    M.save_checkpoint(out, res.cfg, res.nav, res.ask, meta)
    print(f"wrote {out} and {curve}")


def cmd_eval(a):
    nav = ask = cfg = None
    meta = {}
    if a.ckpt:
        cfg, nav, ask, meta = M.load_checkpoint(a.ckpt)
    envs = a.envs or meta.get("envs")
    if envs is None:
        raise ContractError("--envs is required when no checkpoint provides it")
    routes = a.routes or (meta.get("routes") if not a.envs else None)
    world = load_world(envs, routes)
    ds = TaskDataset.load(a.tasks)
    if a.split not in ds.splits:
        raise ContractError(f"task file has no split {a.split!r}")
    tasks = ds.splits[a.split]
    traces = run_policy(a.policy, world, tasks, nav, ask, cfg, seed=a.seed, k_forward=a.k_forward,
                        k_ask=a.k_ask)
    rep = compute_metrics(traces, tasks, world)
    Path(a.report).write_text(report_csv([rep.row(a.split, a.policy)]))
    if a.json:
        Path(a.json).write_text(report_json(rep, a.split, a.policy))
    print(f"{a.policy} on {a.split}: SR {rep.SR:.2f} SPL {rep.SPL:.2f} nav error {rep.nav_error:.2f} "
          f"requests/task {rep.requests_per_task:.2f}")


def cmd_report(a):
    paths = []
    for pat in a.inputs:
        paths.extend(sorted(glob.glob(pat)) or [pat])
    rows = []
    for p in paths:
        if not Path(p).exists():
            raise ContractError(f"report {p} does not exist")
        got = read_report_csv(p)
        if got and set(got[0]) != set(REPORT_FIELDS):
            raise EnvFormatError(f"{p}: not an evaluation report")
        rows.extend(got)
    Path(a.out).write_text(report_table(rows))
    print(f"wrote {a.out}: {len(rows)} rows")


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="assistnav", description=__doc__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("gen-env", help="generate a random environment graph")
    s.add_argument("--nodes", type=int, required=True)
    s.add_argument("--radius", type=float, default=3.0)
    s.add_argument("--object-types", type=int, default=4)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--name", default="")
    s.add_argument("--out", required=True)
    s.set_defaults(fn=cmd_gen_env)

    s = sub.add_parser("build-routes", help="build the assistant's route system for an environment")
    s.add_argument("--env", required=True)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--attention-radius", type=float, default=2.0)
    s.add_argument("--out", required=True)
    s.add_argument("--vocab")
    s.set_defaults(fn=cmd_build_routes)

    s = sub.add_parser("gen-tasks", help="sample task splits")
    s.add_argument("--envs", required=True)
    s.add_argument("--unseen-envs")
    s.add_argument("--unseen-fraction", type=float, default=0.3)
    s.add_argument("--per-split", type=int, required=True)
    s.add_argument("--train-size", type=int)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", required=True)
    s.set_defaults(fn=cmd_gen_tasks)

    s = sub.add_parser("train", help="train both networks")
    s.add_argument("--envs", required=True)
    s.add_argument("--routes")
    s.add_argument("--tasks", required=True)
    s.add_argument("--alpha", type=float, default=1.0)
    s.add_argument("--iters", type=int, default=2000)
    s.add_argument("--lr", type=float, default=1e-4)
    s.add_argument("--batch", type=int, default=32)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--hidden", type=int, default=32)
    s.add_argument("--heads", type=int, default=2)
    s.add_argument("--eval-every", type=int, default=0)
    s.add_argument("--eval-split", default="val_seen")
    s.add_argument("--eval-tasks", type=int, default=100)
    s.add_argument("--curve")
    s.add_argument("--out", required=True)
    s.set_defaults(fn=cmd_train)

    s = sub.add_parser("eval", help="evaluate a policy on one split")
    s.add_argument("--ckpt")
    s.add_argument("--envs")
    s.add_argument("--routes")
    s.add_argument("--tasks", required=True)
    s.add_argument("--split", default="test_seen")
    s.add_argument("--policy", choices=POLICY_NAMES, default="learned")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--k-forward", type=int, default=7)
    s.add_argument("--k-ask", type=int, default=5)
    s.add_argument("--report", required=True)
    s.add_argument("--json")
    s.set_defaults(fn=cmd_eval)

    s = sub.add_parser("report", help="merge evaluation CSVs into a markdown table")
    s.add_argument("--inputs", nargs="+", required=True)
    s.add_argument("--out", required=True)
    s.set_defaults(fn=cmd_report)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        args.fn(args)
    except (ContractError, EnvFormatError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except TrainingAborted as exc:
        print(f"training aborted: {exc}", file=sys.stderr)
        return 3
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
