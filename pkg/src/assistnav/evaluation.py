"""Evaluation metrics, baseline agents, task sets and report files."""
from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from . import model as M
from .env import DIST_TOL, ContractError, EnvFormatError, EnvironmentGraph, Pose, SimConfig, Task, goal_set
from .rollout import POLICY_NAMES, World, make_policies, rollout
from .teachers import REASONS, EpisodeTrace, TeacherConfig, curiosity_set, label_trace

SPLITS = ("train", "val_seen", "val_unseen", "test_seen", "test_unseen")
UNSEEN_SPLITS = ("val_unseen", "test_unseen")
MIN_HOPS, MAX_HOPS = 5, 15

REPORT_FIELDS = (
    "split", "policy", "n_tasks", "SR", "SPL", "nav_error", "requests_per_task",
    "nav_mistake_repeat", "help_request_repeat",
) + tuple(f"{r}_{m}" for r in REASONS for m in ("accuracy", "precision", "recall", "f1"))


# --------------------------------------------------------------------------
# metrics


def reason_metrics(pred, true, threshold: float = 0.5) -> dict[str, dict[str, float]]:
    """Per-condition accuracy / precision / recall / F1; undefined ratios are 0."""
    pred = np.asarray(pred, float).reshape(-1, len(REASONS)) >= threshold
    true = np.asarray(true, float).reshape(-1, len(REASONS)) >= 0.5
    out = {}
    for j, name in enumerate(REASONS):
        p, y = pred[:, j], true[:, j]
        tp = int((p & y).sum())
        fp = int((p & ~y).sum())
        fn = int((~p & y).sum())
        n = len(p)
        prec = tp / (tp + fp) if tp + fp else 0.0
        rec = tp / (tp + fn) if tp + fn else 0.0
        f1 = 2 * prec * rec / (prec + rec) if prec + rec else 0.0
        acc = float((p == y).sum()) / n if n else 0.0
        out[name] = dict(accuracy=acc, precision=prec, recall=rec, f1=f1)
    return out


def spl_term(success: bool, shortest: float, travelled: float) -> float:
    if not success:
        return 0.0
    if travelled <= shortest + DIST_TOL:  # path sums may differ from the distance table in the last bits
        return 1.0
    return shortest / travelled


@dataclass
class EvalReport:
    SR: float
    SPL: float
    nav_error: float
    requests_per_task: float
    nav_mistake_repeat: float
    help_request_repeat: float
    reasons: dict = field(default_factory=dict)
    n_tasks: int = 0
    per_task: list = field(default_factory=list)

    def row(self, split: str = "", policy: str = "") -> dict:
        r = dict(split=split, policy=policy, n_tasks=self.n_tasks, SR=self.SR, SPL=self.SPL,
                 nav_error=self.nav_error, requests_per_task=self.requests_per_task,
                 nav_mistake_repeat=self.nav_mistake_repeat, help_request_repeat=self.help_request_repeat)
        for name in REASONS:
            for m in ("accuracy", "precision", "recall", "f1"):
                r[f"{name}_{m}"] = self.reasons.get(name, {}).get(m, "")
        return r


def _graph_of(world_or_graph, task: Task) -> EnvironmentGraph:
    if isinstance(world_or_graph, EnvironmentGraph):
        return world_or_graph
    return world_or_graph.graph(task.env)


def compute_metrics(traces: Sequence[EpisodeTrace], tasks: Sequence[Task], world, teacher=TeacherConfig()) -> EvalReport:
    """Summary metrics in percent (SR, SPL, repeats) and meters (navigation error).

    ``world`` is a World or a single graph shared by every task.
    """
    if len(traces) != len(tasks):
        raise ContractError(f"{len(traces)} traces for {len(tasks)} tasks")
    succ, spl, err, reqs = [], [], [], []
    nav_steps = nav_rep = 0
    n_req = req_rep = 0
    preds, trues = [], []
    per_task = []
    for tr, task in zip(traces, tasks):
        if tr.task is not task and tr.task != task:
            raise ContractError(f"trace does not belong to task {task.task_id}")
        g = _graph_of(world, task)
        final = tr.final_pose.node
        goals = list(task.goals)
        ok = final in task.goals
        # shortest distance from the start to the goal nearest the final location
        d_final = g.distances[final, goals]
        g_near = goals[int(np.argmin(d_final))]
        L_i = float(g.distances[task.start.node, g_near])
        succ.append(ok)
        spl.append(spl_term(ok, L_i, tr.travel))
        err.append(float(d_final.min()))
        reqs.append(tr.requests)
        if not tr.labelled:
            label_trace(tr, teacher)
        # both repeat rates count earlier visits made while executing the same (sub)task
        visited: set[tuple[int, int]] = set()
        for t, st in enumerate(tr.steps):
            if st.nav_decision:
                nav_steps += 1
                if st.nav_slot in curiosity_set(tr, t):
                    nav_rep += 1
            key = (st.pose.node, st.instruction_id)
            if st.asked:
                n_req += 1
                req_rep += key in visited
            visited.add(key)
            if st.p_reason is not None and st.reason is not None:
                preds.append(st.p_reason)
                trues.append(st.reason)
        per_task.append(dict(task=task.task_id, env=task.env, success=bool(ok), spl=spl[-1], nav_error=err[-1],
                             travel=tr.travel, shortest=L_i, requests=tr.requests, steps=len(tr), final=final))
    n = len(tasks)
    return EvalReport(
        SR=100.0 * float(np.mean(succ)) if n else 0.0,
        SPL=100.0 * float(np.mean(spl)) if n else 0.0,
        nav_error=float(np.mean(err)) if n else 0.0,
        requests_per_task=float(np.mean(reqs)) if n else 0.0,
        nav_mistake_repeat=100.0 * nav_rep / nav_steps if nav_steps else 0.0,
        help_request_repeat=100.0 * req_rep / n_req if n_req else 0.0,
        reasons=reason_metrics(preds, trues) if preds else {},
        n_tasks=n,
        per_task=per_task,
    )


def replay_outcomes(traces: Sequence[EpisodeTrace], tasks: Sequence[Task], world) -> tuple[float, float]:
    """SR and navigation error recomputed by stepping through the recorded poses."""
    ok, err = [], []
    for tr, task in zip(traces, tasks):
        g = _graph_of(world, task)
        node = tr.final_pose.node
        for a, b in zip(tr.nodes, tr.nodes[1:] + [node]):
            if a != b and not g.are_adjacent(a, b):
                raise ContractError("trace jumps between non-adjacent nodes")
        ok.append(node in set(task.goals))
        err.append(min(float(g.distances[node, v]) for v in task.goals))
    return 100.0 * float(np.mean(ok)), float(np.mean(err))


# --------------------------------------------------------------------------
# running agents


def run_policy(
    name: str,
    world: World,
    tasks: Sequence[Task],
    nav_params=None,
    ask_params=None,
    cfg: M.ModelConfig | None = None,
    sim: SimConfig = SimConfig(),
    budget: int | None = None,
    seed: int = 0,
    batch_size: int = 64,
    **kw,
) -> list[EpisodeTrace]:
    """Greedy evaluation rollouts. Episode ``i`` draws from ``rng([seed, i])``."""
    if name not in POLICY_NAMES and name != "perfect_interpretation":
        raise ContractError(f"unknown policy {name!r}")
    out: list[EpisodeTrace] = []
    for lo in range(0, len(tasks), batch_size):
        chunk = tasks[lo:lo + batch_size]
        specs = [world.spec(t, seed=[seed, lo + j], budget=budget) for j, t in enumerate(chunk)]
        nav, ask = make_policies(name, nav_params, ask_params, cfg, greedy=True, **kw)
        out.extend(rollout(specs, nav, ask, world.vocab, sim, compat=bool(cfg and cfg.orientation_compat)))
    return out


def run_baseline(name, world, tasks, sim: SimConfig = SimConfig(), nav_params=None, ask_params=None,
                 cfg=None, **kw) -> list[EpisodeTrace]:
    return run_policy(name, world, tasks, nav_params, ask_params, cfg, sim, **kw)


# --------------------------------------------------------------------------
# task sets


@dataclass
class TaskDataset:
    splits: dict[str, list[Task]]
    envs: dict[str, list[str]]
    seed: int = 0

    def to_json(self) -> dict:
        return {"seed": self.seed, "envs": self.envs,
                "splits": {k: [t.to_json() for t in v] for k, v in self.splits.items()}}

    @classmethod
    def from_json(cls, d: dict) -> "TaskDataset":
        try:
            splits = {k: [Task.from_json(t) for t in v] for k, v in d["splits"].items()}
            return cls(splits, {k: list(v) for k, v in d["envs"].items()}, int(d.get("seed", 0)))
        except (KeyError, AttributeError, TypeError) as exc:
            raise EnvFormatError(f"malformed task file: {exc}") from None

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_json(), indent=1))

    @classmethod
    def load(cls, path) -> "TaskDataset":
        try:
            return cls.from_json(json.loads(Path(path).read_text()))
        except json.JSONDecodeError as exc:
            raise EnvFormatError(f"{path}:{exc.lineno}:{exc.colno}: {exc.msg}") from None


def feasible_pairs(g: EnvironmentGraph, sim: SimConfig = SimConfig(), lo: int = MIN_HOPS, hi: int = MAX_HOPS):
    """(start node, object type) pairs whose nearest goal lies lo..hi hops away."""
    out = []
    for ot in g.object_types:
        goals = list(goal_set(g, ot, sim.success_radius))
        hop = g.hops[:, goals].min(axis=1)
        out.extend((int(v), ot) for v in np.flatnonzero((hop >= lo) & (hop <= hi)))
    return sorted(out)


def generate_tasks(
    seen: dict[str, EnvironmentGraph],
    unseen: dict[str, EnvironmentGraph],
    n_per_split: int | dict[str, int],
    seed: int = 0,
    sim: SimConfig = SimConfig(),
) -> TaskDataset:
    """Tasks drawn uniformly (with replacement) over feasible pairs.

    Seen splits use the ``seen`` environments; the unseen splits use the
    ``unseen`` ones, the first half for validation and the rest for test
    when there are at least two.
    """
    if set(seen) & set(unseen):
        raise ContractError("unseen environments overlap the training environments")
    counts = n_per_split if isinstance(n_per_split, dict) else {s: n_per_split for s in SPLITS}
    names_u = sorted(unseen)
    half = max(1, len(names_u) // 2) if len(names_u) >= 2 else len(names_u)
    envs = {s: sorted(seen) for s in ("train", "val_seen", "test_seen")}
    envs["val_unseen"] = names_u[:half]
    envs["test_unseen"] = names_u[half:] if len(names_u) >= 2 else names_u
    graphs = {**seen, **unseen}
    pools = {}
    for s in SPLITS:
        pool = [(e, v, ot) for e in envs[s] for v, ot in feasible_pairs(graphs[e], sim)]
        if counts.get(s, 0) and not pool:
            raise ContractError(f"no feasible task for split {s}")
        pools[s] = pool
    splits = {}
    for k, s in enumerate(SPLITS):
        rng = np.random.default_rng([seed, k])
        n = counts.get(s, 0)
        pool = pools[s]
        tasks = []
        for j in range(n):
            e, v, ot = pool[int(rng.integers(len(pool)))]
            heading = int(rng.integers(1, 13))
            g = graphs[e]
            tasks.append(Task(f"{s}-{j}", e, ot, Pose(v, heading, 0), goal_set(g, ot, sim.success_radius), sim.eval_steps))
        splits[s] = tasks
    return TaskDataset(splits, envs, seed)


# --------------------------------------------------------------------------
# report files


def _fmt(v) -> str:
    if isinstance(v, float):
        return repr(v)
    return str(v)


def report_csv(rows: Sequence[dict]) -> str:
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=REPORT_FIELDS, lineterminator="\n")
    w.writeheader()
    for r in rows:
        w.writerow({k: _fmt(r.get(k, "")) for k in REPORT_FIELDS})
    return buf.getvalue()


def read_report_csv(path) -> list[dict]:
    with open(path, newline="") as f:
        return list(csv.DictReader(f))


def report_table(rows: Sequence[dict], columns=("split", "policy", "SR", "SPL", "nav_error", "requests_per_task",
                                                  "nav_mistake_repeat", "help_request_repeat")) -> str:
    """Markdown table; numbers rounded to two decimals."""

    def cell(v):
        try:
            x = float(v)
        except (TypeError, ValueError):
            return str(v)
        return f"{x:.2f}" if not float(x).is_integer() or "." in str(v) else str(v)

    head = "| " + " | ".join(columns) + " |"
    sep = "|" + "|".join("---" for _ in columns) + "|"
    body = ["| " + " | ".join(cell(r.get(c, "")) for c in columns) + " |" for r in rows]
    return "\n".join([head, sep, *body]) + "\n"


def report_json(report: EvalReport, split: str, policy: str) -> str:
    d = asdict(report)
    d.update(split=split, policy=policy)
    return json.dumps(d, indent=1, sort_keys=True)
