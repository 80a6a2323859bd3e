"""Episode rollouts with the assistant protocol.

Episodes of a batch run in lockstep so the learned networks can evaluate
every active episode in one call. Each episode owns its random generator,
its memories and its pose, so its trajectory does not depend on the other
episodes of the batch (dropout during training is the exception: its masks
are drawn from one shared generator).
"""
from __future__ import annotations

import weakref
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from . import layers as L
from . import model as M
from .anna import HelpResponse, RouteSystem, Vocab, respond
from .env import (
    N_NAV_ACTIONS,
    STOP,
    STOP_SLOT,
    ContractError,
    EnvironmentGraph,
    NavAction,
    Pose,
    SimConfig,
    Task,
    action_for_slot,
    angular_distance,
    render_observation,
    slot_angles,
    step,
    valid_slot_mask,
)
from .env import ANGLE_STEP
from .teachers import MAIN_TASK, SUB_TASK, TASK_INSTRUCTION, EpisodeTrace, StepRecord, nav_teacher_slot

_VIEW_CACHE: "weakref.WeakKeyDictionary[EnvironmentGraph, dict]" = weakref.WeakKeyDictionary()


def views(g: EnvironmentGraph, node: int, cfg: SimConfig) -> np.ndarray:
    per_graph = _VIEW_CACHE.setdefault(g, {})
    key = (node, cfg)
    if key not in per_graph:
        per_graph[key] = render_observation(g, node, cfg)
    return per_graph[key]


def action_table(g: EnvironmentGraph, pose: Pose, cfg: SimConfig, compat: bool = False):
    per_graph = _VIEW_CACHE.setdefault(g, {})
    key = ("act", pose, cfg, compat)
    if key not in per_graph:
        per_graph[key] = M.action_embeddings(g, pose, views(g, pose.node, cfg), compat)
    return per_graph[key]


@dataclass
class EpisodeSpec:
    graph: EnvironmentGraph
    routes: RouteSystem
    task: Task
    seed: int | Sequence[int] = 0
    budget: int | None = None


@dataclass
class EpisodeState:
    """What a policy may look at when acting for one episode."""

    spec: EpisodeSpec
    vocab: Vocab
    sim: SimConfig
    rng: np.random.Generator
    pose: Pose
    mode: str = MAIN_TASK
    instruction: tuple[int, ...] = ()
    instruction_id: int = TASK_INSTRUCTION
    target_view: np.ndarray | None = None
    targets: tuple[int, ...] = ()
    t: int = 0
    prev_action: np.ndarray | None = None
    last_request_t: int = 0
    response: HelpResponse | None = None
    done: bool = False

    @property
    def graph(self) -> EnvironmentGraph:
        return self.spec.graph

    @property
    def in_zone(self) -> bool:
        return self.spec.routes.in_zone(self.pose.node)

    @property
    def cur_views(self) -> np.ndarray:
        return views(self.graph, self.pose.node, self.sim)


@dataclass
class NavDecision:
    slot: int
    p_nav: np.ndarray


@dataclass
class AskDecision:
    ask: bool
    p_ask: np.ndarray | None = None
    p_reason: np.ndarray | None = None


# --------------------------------------------------------------------------
# policies


class NavPolicy:
    def begin(self, states: list[EpisodeState]) -> None:
        pass

    def act(self, states: list[EpisodeState], idx: list[int]) -> list[NavDecision]:
        raise NotImplementedError

    def after_step(self, i: int, reset_inter: bool) -> None:
        pass


class AskPolicy:
    def begin(self, states: list[EpisodeState]) -> None:
        pass

    def act(self, states: list[EpisodeState], idx: list[int], nav: list[NavDecision]) -> list[AskDecision]:
        raise NotImplementedError

    def after_step(self, i: int, reset_inter: bool) -> None:
        pass


def _one_hot(slot: int) -> np.ndarray:
    p = np.zeros(N_NAV_ACTIONS)
    p[slot] = 1.0
    return p


def _draw(p: np.ndarray, rng: np.random.Generator) -> int:
    c = np.cumsum(p)
    k = int(np.searchsorted(c, rng.random() * c[-1], side="right"))
    k = min(k, len(p) - 1)
    while p[k] <= 0:  # never land on a masked slot through rounding
        k -= 1
    return k


class TeacherNav(NavPolicy):
    """Shortest-path teacher toward the active targets."""

    def act(self, states, idx):
        out = []
        for i in idx:
            s = states[i]
            slot = nav_teacher_slot(s.graph, s.pose, s.targets)
            out.append(NavDecision(slot, _one_hot(slot)))
        return out


class RandomWalkNav(NavPolicy):
    """Uniform over the valid panoramic actions, Stop included."""

    def act(self, states, idx):
        out = []
        for i in idx:
            s = states[i]
            m = valid_slot_mask(s.graph, s.pose.node).astype(float)
            p = m / m.sum()
            out.append(NavDecision(_draw(p, s.rng), p))
        return out


class ForwardNav(NavPolicy):
    """Move to the occupied slot nearest the current view direction k times, then Stop."""

    def __init__(self, k: int = 7):
        self.k = k

    def act(self, states, idx):
        out = []
        for i in idx:
            s = states[i]
            if s.t >= self.k:
                slot = STOP_SLOT
            else:
                slot = min(
                    s.graph.layout(s.pose.node),
                    key=lambda q: (angular_distance(s.pose.psi, s.pose.omega, *(a * ANGLE_STEP for a in slot_angles(q))), q),
                )
            out.append(NavDecision(slot, _one_hot(slot)))
        return out


class ScriptedNav(NavPolicy):
    """Slots from a callback ``fn(state) -> slot``; used for hand-traced cases."""

    def __init__(self, fn: Callable[[EpisodeState], int]):
        self.fn = fn

    def act(self, states, idx):
        out = []
        for i in idx:
            slot = int(self.fn(states[i]))
            out.append(NavDecision(slot, _one_hot(slot)))
        return out


class NeverAsk(AskPolicy):
    def act(self, states, idx, nav):
        return [AskDecision(False) for _ in idx]


class RandomAsk(AskPolicy):
    def __init__(self, p: float = 0.2):
        self.p = p

    def act(self, states, idx, nav):
        return [AskDecision(states[i].in_zone and states[i].rng.random() < self.p) for i in idx]


class EveryKAsk(AskPolicy):
    """Request at the first in-zone step once k steps have passed since the last request."""

    def __init__(self, k: int = 5):
        self.k = k

    def act(self, states, idx, nav):
        return [AskDecision(states[i].in_zone and states[i].t - states[i].last_request_t >= self.k) for i in idx]


class ScriptedAsk(AskPolicy):
    def __init__(self, fn: Callable[[EpisodeState], bool]):
        self.fn = fn

    def act(self, states, idx, nav):
        return [AskDecision(bool(self.fn(states[i]))) for i in idx]


@dataclass
class StepCache:
    """Forward caches of one lockstep step of a learned network."""

    rows: list[int]  # episode index per row
    ts: list[int]
    cache: tuple
    logp: np.ndarray
    reason_logit: np.ndarray | None = None


class _LearnedNet:
    def __init__(self, params, cfg: M.ModelConfig, greedy: bool, drop: L.Dropout, keep_cache: bool):
        self.P, self.cfg, self.greedy, self.drop, self.keep = params, cfg, greedy, drop, keep_cache
        self.mem: list[M.AgentMemory] = []
        self.caches: list[StepCache] = []

    def begin(self, states):
        self.mem = [M.AgentMemory(self.cfg.hidden) for _ in states]
        self.caches = []

    def after_step(self, i, reset_inter):
        if reset_inter:
            self.mem[i].reset_inter()

    def _inputs(self, states, idx, **kw):
        ss = [states[i] for i in idx]
        return M.build_inputs(
            self.cfg, [self.mem[i] for i in idx], [s.instruction for s in ss],
            np.stack([s.cur_views for s in ss]), [s.target_view for s in ss],
            np.stack([s.prev_action for s in ss]), **kw,
        )

    def _run(self, states, idx, X):
        out, cache = M.forward_step(self.P, self.cfg, X, self.drop)
        for r, i in enumerate(idx):
            self.mem[i].update(out, r)
        if self.keep:
            self.caches.append(StepCache(list(idx), [states[i].t for i in idx], cache, out["logp"], out.get("reason_logit")))
        return out


class LearnedNav(_LearnedNet, NavPolicy):
    def act(self, states, idx):
        compat = self.cfg.orientation_compat
        embs = [action_table(states[i].graph, states[i].pose, states[i].sim, compat) for i in idx]
        X = self._inputs(states, idx, act_emb=np.stack([e for e, _ in embs]), act_mask=np.stack([m for _, m in embs]))
        out = self._run(states, idx, X)
        res = []
        for r, i in enumerate(idx):
            p = out["p"][r]
            slot = int(np.argmax(p)) if self.greedy else _draw(p, states[i].rng)
            res.append(NavDecision(slot, p.copy()))
        return res


class LearnedAsk(_LearnedNet, AskPolicy):
    def act(self, states, idx, nav):
        ask_mask = np.array([[True, states[i].in_zone] for i in idx])
        X = self._inputs(states, idx, p_nav=np.stack([d.p_nav for d in nav]), ask_mask=ask_mask)
        out = self._run(states, idx, X)
        res = []
        for r, i in enumerate(idx):
            p = out["p"][r]
            a = int(np.argmax(p)) if self.greedy else _draw(p, states[i].rng)
            res.append(AskDecision(a == M.REQUEST_HELP, p.copy(), out["reason_p"][r].copy()))
        return res


class SubtaskTeacherNav(NavPolicy):
    """Wraps a navigation policy and overrides its choice with the teacher's in sub_task mode."""

    def __init__(self, inner: NavPolicy):
        self.inner = inner

    def begin(self, states):
        self.inner.begin(states)

    def after_step(self, i, reset_inter):
        self.inner.after_step(i, reset_inter)

    def act(self, states, idx):
        out = self.inner.act(states, idx)
        for d, i in zip(out, idx):
            s = states[i]
            if s.mode == SUB_TASK:
                d.slot = nav_teacher_slot(s.graph, s.pose, s.targets)
        return out


# --------------------------------------------------------------------------
# the protocol


def _start_state(spec: EpisodeSpec, vocab: Vocab, sim: SimConfig, feat_dim: int) -> EpisodeState:
    rng = np.random.default_rng(spec.seed)
    t = spec.task
    return EpisodeState(
        spec, vocab, sim, rng, t.start, MAIN_TASK, vocab.task_command(t.object_type), TASK_INSTRUCTION,
        None, tuple(t.goals), 0, np.zeros(feat_dim + M.ORIENT_DIM),
    )


def rollout(
    specs: Sequence[EpisodeSpec],
    nav: NavPolicy,
    ask: AskPolicy,
    vocab: Vocab,
    sim: SimConfig = SimConfig(),
    budget: int | None = None,
    compat: bool = False,
) -> list[EpisodeTrace]:
    """Run every episode to Stop in the main task or to the step budget.

    Per step: the help-request policy may request help (honoured only inside
    a zone of attention). A request switches to the assistant's route
    instruction with the departure view as target and forces the move to
    the route start. Otherwise the navigation action is executed; Stop ends
    the episode in the main task, and in a subtask it restores the task
    command with the goal view as target while staying in place. Both
    instruction switches clear the inter-task memories.
    """
    states = [_start_state(s, vocab, sim, sim.feature_dim) for s in specs]
    traces = [EpisodeTrace(s.task, s.graph) for s in specs]
    budgets = [s.budget or budget or s.task.budget for s in specs]
    nav.begin(states)
    ask.begin(states)
    active = list(range(len(specs)))
    while active:
        nav_d = nav.act(states, active)
        ask_d = ask.act(states, active, nav_d)
        for i, nd, ad in zip(active, nav_d, ask_d):
            s, tr = states[i], traces[i]
            g = s.graph
            zone = s.in_zone
            rec = StepRecord(
                s.pose, s.instruction_id, s.mode, s.targets, s.target_view is not None, zone,
                p_nav=nd.p_nav, p_ask=ad.p_ask, p_reason=ad.p_reason,
            )
            before = s.pose
            switched = False
            if ad.ask and zone:
                resp = respond(s.spec.routes, g, s.pose, s.spec.task.goals, sim, render=lambda v: views(g, v, sim))
                r = resp.route
                action = NavAction(r.start, r.start_heading - s.pose.heading, r.start_elevation - s.pose.elevation, None)
                s.mode, s.instruction, s.instruction_id = SUB_TASK, resp.instruction, resp.route_index
                s.target_view, s.targets, s.response = resp.departure_view, (resp.departure,), resp
                s.last_request_t = s.t
                rec.asked = True
                tr.requests += 1
                switched = True
            else:
                rec.nav_decision = True
                rec.nav_slot = nd.slot
                if nd.slot == STOP_SLOT:
                    action = STOP
                    if s.mode == MAIN_TASK:
                        tr.stopped = True
                        s.done = True
                    else:
                        resp = s.response
                        s.mode, s.instruction, s.instruction_id = MAIN_TASK, vocab.task_command(s.spec.task.object_type), TASK_INSTRUCTION
                        s.target_view, s.targets = resp.goal_view, tuple(s.spec.task.goals)
                        switched = True
                else:
                    action = action_for_slot(g, s.pose, nd.slot)
            if action.is_stop:
                s.prev_action = np.zeros_like(s.prev_action)
            else:
                s.pose = step(g, s.pose, action)
                if s.pose.node != before.node:
                    tr.travel += g.edge_length(before.node, s.pose.node)
                s.prev_action = M.executed_action_embedding(g, before, views(g, before.node, sim), action, compat)
            tr.steps.append(rec)
            s.t += 1
            if s.t >= budgets[i]:
                s.done = True
            nav.after_step(i, switched)
            ask.after_step(i, switched)
        for i in active:
            if states[i].done:
                traces[i].final_pose = states[i].pose
        active = [i for i in active if not states[i].done]
    return traces


def make_policies(
    name: str,
    nav_params=None,
    ask_params=None,
    cfg: M.ModelConfig | None = None,
    greedy: bool = True,
    drop: L.Dropout = L.NO_DROPOUT,
    keep_cache: bool = False,
    k_forward: int = 7,
    k_ask: int = 5,
    p_random_ask: float = 0.2,
) -> tuple[NavPolicy, AskPolicy]:
    """Navigation and help-request policies for a named agent."""

    def learned_nav():
        if nav_params is None:
            raise ContractError(f"policy {name!r} needs trained navigation parameters")
        return LearnedNav(nav_params, cfg, greedy, drop, keep_cache)

    def learned_ask():
        if ask_params is None:
            raise ContractError(f"policy {name!r} needs trained help-request parameters")
        return LearnedAsk(ask_params, cfg, greedy, drop, keep_cache)

    if name == "learned":
        return learned_nav(), learned_ask()
    if name == "no_ask":
        return learned_nav(), NeverAsk()
    if name == "random_ask":
        return learned_nav(), RandomAsk(p_random_ask)
    if name == "ask_every_k":
        return learned_nav(), EveryKAsk(k_ask)
    if name in ("perfect", "perfect_interpretation"):
        return SubtaskTeacherNav(learned_nav()), learned_ask()
    if name == "random_walk":
        return RandomWalkNav(), NeverAsk()
    if name == "forward_k":
        return ForwardNav(k_forward), NeverAsk()
    if name == "shortest":
        return TeacherNav(), NeverAsk()
    raise ContractError(f"unknown policy {name!r}")


POLICY_NAMES = ("learned", "no_ask", "random_ask", "ask_every_k", "random_walk", "forward_k", "shortest", "perfect")


@dataclass
class World:
    """Environments and their assistants, keyed by environment name."""

    graphs: dict[str, EnvironmentGraph]
    routes: dict[str, RouteSystem]
    vocab: Vocab

    def graph(self, name: str) -> EnvironmentGraph:
        if name not in self.graphs:
            raise ContractError(f"task refers to unknown environment {name!r}")
        return self.graphs[name]

    def spec(self, task: Task, seed=0, budget: int | None = None) -> EpisodeSpec:
        return EpisodeSpec(self.graph(task.env), self.routes[task.env], task, seed, budget)

    @classmethod
    def build(cls, graphs: dict[str, EnvironmentGraph], seed: int = 0, attention_radius: float = 2.0,
              vocab: Vocab | None = None) -> "World":
        from .anna import build_route_system

        vocab = vocab or Vocab.default()
        rs = {k: build_route_system(g, seed=seed, vocab=vocab, attention_radius=attention_radius)
              for k, g in graphs.items()}
        return cls(dict(graphs), rs, vocab)
