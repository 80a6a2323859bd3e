"""Episode traces and the supervision computed from them: the shortest-path
navigation teacher, the retrospective help-request teacher with its reason
vector, navigation efficiency, and the curiosity (already-tried mistake) set."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .env import (
    DIST_TOL,
    N_NAV_ACTIONS,
    STOP,
    STOP_SLOT,
    ContractError,
    EnvironmentGraph,
    NavAction,
    Pose,
    action_for_slot,
    slot_of_neighbour,
)

MAIN_TASK = "main_task"
SUB_TASK = "sub_task"
TASK_INSTRUCTION = -1  # instruction id of the task command; routes use their index
REASONS = ("lost", "uncertain_wrong", "never_asked")


@dataclass(frozen=True)
class TeacherConfig:
    gamma: float = 0.25
    entropy_base: int = N_NAV_ACTIONS

    def __post_init__(self):
        if not 0.0 <= self.gamma <= 1.0:
            raise ValueError("gamma must lie in [0, 1]")


@dataclass
class StepRecord:
    pose: Pose
    instruction_id: int
    mode: str
    targets: tuple[int, ...]  # departure node in a subtask, else the goal set
    has_target_view: bool
    in_zone: bool
    p_nav: np.ndarray | None = None
    p_ask: np.ndarray | None = None
    p_reason: np.ndarray | None = None
    nav_slot: int | None = None  # executed slot; None for forced in-place turns
    nav_decision: bool = False  # the navigation policy chose this step's action
    asked: bool = False
    # retrospective labels
    teacher_slot: int | None = None
    ask_label: bool | None = None
    reason: tuple[int, int, int] | None = None


@dataclass
class EpisodeTrace:
    task: "object"
    graph: EnvironmentGraph
    steps: list[StepRecord] = field(default_factory=list)
    final_pose: Pose | None = None
    travel: float = 0.0
    stopped: bool = False  # ended by Stop in the main task (not by budget)
    requests: int = 0

    def __len__(self) -> int:
        return len(self.steps)

    @property
    def nodes(self) -> list[int]:
        return [s.pose.node for s in self.steps]

    @property
    def labelled(self) -> bool:
        return all(s.teacher_slot is not None and s.ask_label is not None for s in self.steps)


# --------------------------------------------------------------------------
# navigation teacher


def _dist_to(g: EnvironmentGraph, node: int, targets: Sequence[int]) -> float:
    return float(g.distances[node, list(targets)].min())


def nav_teacher(g: EnvironmentGraph, pose: Pose, targets: Sequence[int] | int) -> NavAction:
    """Next move on a shortest path to the nearest target; Stop on a target.

    Equal-length successors resolve to the smaller node id.
    """
    if isinstance(targets, (int, np.integer)):
        targets = (int(targets),)
    targets = tuple(targets)
    v = pose.node
    if v in targets:
        return STOP
    best, best_d = None, math.inf
    for w in g.adjacency[v]:
        d = g.edge_length(v, w) + _dist_to(g, w, targets)
        if d < best_d - DIST_TOL:
            best, best_d = w, d
    if best is None:
        raise ContractError(f"no target reachable from {v}")
    return action_for_slot(g, pose, slot_of_neighbour(g, v, best))


def nav_teacher_slot(g: EnvironmentGraph, pose: Pose, targets) -> int:
    a = nav_teacher(g, pose, targets)
    return STOP_SLOT if a.is_stop else a.slot


def efficiency(p: np.ndarray, base: int = N_NAV_ACTIONS) -> float:
    """Shannon entropy in the given base, with 0 log 0 = 0."""
    p = np.asarray(p, dtype=np.float64)
    nz = p[p > 0]
    return float(-(nz * np.log(nz)).sum() / math.log(base))


# --------------------------------------------------------------------------
# retrospective help-request teacher


def lost_flags(g: EnvironmentGraph, trace: EpisodeTrace) -> list[bool]:
    out = []
    nodes = trace.nodes
    for t, st in enumerate(trace.steps):
        here = _dist_to(g, nodes[t], st.targets)
        out.append(not any(_dist_to(g, nodes[u], st.targets) < here - DIST_TOL for u in range(t + 1, len(nodes))))
    return out


def retrospective_ask_teacher(
    trace: EpisodeTrace, cfg: TeacherConfig = TeacherConfig(), g: EnvironmentGraph | None = None
) -> list[tuple[bool, tuple[int, int, int]]]:
    """Per step (request_help?, (lost, uncertain_wrong, never_asked)).

    Requires every step to carry ``p_nav``. Fills ``teacher_slot`` when it is
    missing, then writes ``ask_label`` and ``reason`` into the trace.
    """
    g = g or trace.graph
    if not trace.steps:
        raise ContractError("empty trace")
    for st in trace.steps:
        if st.p_nav is None:
            raise ContractError("trace step lacks a navigation distribution")
        if st.teacher_slot is None:
            st.teacher_slot = nav_teacher_slot(g, st.pose, st.targets)
    lost = lost_flags(g, trace)
    asked_at: set[int] = set()
    out = []
    for t, st in enumerate(trace.steps):
        uw = efficiency(st.p_nav, cfg.entropy_base) >= cfg.gamma and int(np.argmax(st.p_nav)) != st.teacher_slot
        never = st.pose.node not in asked_at
        label = (lost[t] or uw) and never and st.in_zone
        reason = (int(lost[t]), int(uw), int(never))
        st.ask_label, st.reason = bool(label), reason
        out.append((bool(label), reason))
        if st.asked:
            asked_at.add(st.pose.node)
    return out


def curiosity_set(trace: EpisodeTrace, t: int) -> set[int]:
    """Slots the policy already chose wrongly at this node under this instruction."""
    if not 0 <= t < len(trace.steps):
        raise ContractError(f"step {t} outside the trace")
    cur = trace.steps[t]
    out = set()
    for st in trace.steps[:t]:
        if (
            st.nav_decision
            and st.pose.node == cur.pose.node
            and st.instruction_id == cur.instruction_id
            and st.nav_slot != st.teacher_slot
        ):
            out.add(st.nav_slot)
    return out


def label_trace(trace: EpisodeTrace, cfg: TeacherConfig = TeacherConfig()) -> EpisodeTrace:
    g = trace.graph
    for st in trace.steps:
        st.teacher_slot = nav_teacher_slot(g, st.pose, st.targets)
    if all(st.p_nav is not None for st in trace.steps):
        retrospective_ask_teacher(trace, cfg, g)
    return trace
