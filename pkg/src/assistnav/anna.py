"""Simulated assistants: a language-assisted route system built on binary
ancestor jumps of a shortest-path spanning tree, zones of attention, and the
route / departure / goal selection that answers a help request."""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Callable, Iterable, Sequence

import numpy as np

from .env import (
    ANGLE_STEP,
    DIST_TOL,
    N_LANDMARKS,
    N_VIEWS,
    ContractError,
    EnvironmentGraph,
    Pose,
    SimConfig,
    landmark_of,
    render_observation,
    slot_angles,
    slot_of_neighbour,
    wrap_heading,
)

MAX_INSTRUCTION_LEN = 50
TURN_TOKENS = ("straight", "slight_left", "left", "slight_right", "right", "back")


@dataclass(frozen=True)
class Vocab:
    tokens: tuple[str, ...]

    @classmethod
    def default(cls, n_object_types: int = 16, n_landmarks: int = N_LANDMARKS) -> "Vocab":
        toks = ["<find>", "<stop>", *TURN_TOKENS]
        toks += [f"lm_{k}" for k in range(n_landmarks)]
        toks += [f"obj_{k}" for k in range(n_object_types)]
        return cls(tuple(toks))

    @cached_property
    def index(self) -> dict[str, int]:
        return {t: i for i, t in enumerate(self.tokens)}

    def __len__(self) -> int:
        return len(self.tokens)

    def id(self, token: str) -> int:
        try:
            return self.index[token]
        except KeyError:
            raise ContractError(f"token {token!r} not in vocabulary") from None

    def decode(self, ids: Iterable[int]) -> list[str]:
        return [self.tokens[i] for i in ids]

    @property
    def n_object_types(self) -> int:
        return sum(t.startswith("obj_") for t in self.tokens)

    def task_command(self, object_type: int) -> tuple[int, ...]:
        return (self.id("<find>"), self.id(f"obj_{object_type}"))

    def to_json(self) -> dict:
        return {str(i): t for i, t in enumerate(self.tokens)}

    @classmethod
    def from_json(cls, data: dict) -> "Vocab":
        return cls(tuple(data[str(i)] for i in range(len(data))))


@dataclass(frozen=True)
class Route:
    start_heading: int  # heading index 1..12
    start_elevation: int
    path: tuple[int, ...]
    instruction: tuple[int, ...]

    @property
    def start(self) -> int:
        return self.path[0]

    @property
    def start_psi(self) -> float:
        return self.start_heading * ANGLE_STEP

    @property
    def start_omega(self) -> float:
        return self.start_elevation * ANGLE_STEP


@dataclass(frozen=True)
class HelpResponse:
    route: Route
    route_index: int
    departure: int
    departure_view: np.ndarray
    goal: int
    goal_view: np.ndarray

    @property
    def instruction(self) -> tuple[int, ...]:
        return self.route.instruction


# --------------------------------------------------------------------------
# spanning tree with binary ancestor jumps


class SpanningTree:
    """Shortest-path tree rooted at node 0; ties go to the smaller predecessor."""

    def __init__(self, g: EnvironmentGraph, root: int = 0):
        d = g.distances[root]
        n = g.n_nodes
        parent = [-1] * n
        for v in range(n):
            if v == root:
                continue
            for u in g.adjacency[v]:
                if abs(d[u] + g.edge_length(u, v) - d[v]) <= DIST_TOL * max(1.0, d[v]) and d[u] < d[v]:
                    parent[v] = u
                    break
        depth = [0] * n
        for v in sorted(range(n), key=lambda x: d[x]):
            if parent[v] >= 0:
                depth[v] = depth[parent[v]] + 1
        self.root = root
        self.parent = parent
        self.depth = depth
        levels = max(1, math.ceil(math.log2(max(n, 2))))
        up = [[p if p >= 0 else v for v, p in enumerate(parent)]]
        for _ in range(1, levels + 1):
            prev = up[-1]
            up.append([prev[prev[v]] for v in range(n)])
        self.up = up

    def ancestor(self, v: int, k: int) -> int:
        if k > self.depth[v]:
            raise ContractError(f"node {v} has no ancestor {k} levels up")
        i = 0
        while k:
            if k & 1:
                v = self.up[i][v]
            k >>= 1
            i += 1
        return v

    def lca(self, u: int, v: int) -> int:
        if self.depth[u] < self.depth[v]:
            u, v = v, u
        u = self.ancestor(u, self.depth[u] - self.depth[v])
        if u == v:
            return u
        for i in range(len(self.up) - 1, -1, -1):
            if self.up[i][u] != self.up[i][v]:
                u, v = self.up[i][u], self.up[i][v]
        return self.parent[u]

    def path_up(self, v: int, k: int) -> tuple[int, ...]:
        out = [v]
        for _ in range(k):
            v = self.parent[v]
            out.append(v)
        return tuple(out)


# --------------------------------------------------------------------------
# instructions


def turn_bucket(delta: float) -> str:
    """Turn token for a heading change in radians (positive = counter-clockwise = left)."""
    delta = (delta + math.pi) % (2 * math.pi) - math.pi
    a = abs(delta)
    if a <= math.pi / 12 + 1e-12:
        return "straight"
    if a >= 3 * math.pi / 4 - 1e-12:
        return "back"
    side = "left" if delta > 0 else "right"
    return f"slight_{side}" if a <= math.pi / 4 + 1e-12 else side


def synth_instruction(g: EnvironmentGraph, path: Sequence[int], vocab: Vocab) -> tuple[int, ...]:
    """One (turn, landmark) pair per hop, then a stop token.

    Turns compare consecutive hop bearings; the first hop is always straight
    because a route is entered facing it. Long routes are cut so the token
    sequence fits the instruction length limit.
    """
    path = list(path)
    if len(path) < 2:
        raise ContractError("a route needs at least two nodes")
    max_hops = (MAX_INSTRUCTION_LEN - 1) // 2
    toks: list[int] = []
    prev = None
    for a, b in list(zip(path, path[1:]))[:max_hops]:
        psi, _ = g.direction(a, b)
        turn = "straight" if prev is None else turn_bucket(psi - prev)
        toks.append(vocab.id(turn))
        toks.append(vocab.id(f"lm_{landmark_of(g, b) % N_LANDMARKS}"))
        prev = psi
    toks.append(vocab.id("<stop>"))
    return tuple(toks)


def make_route(g: EnvironmentGraph, path: Sequence[int], vocab: Vocab) -> Route:
    path = tuple(int(v) for v in path)
    for a, b in zip(path, path[1:]):
        if not g.are_adjacent(a, b):
            raise ContractError(f"route hop {a}->{b} is not an edge")
    if len(g.adjacency[path[0]]) <= N_VIEWS:
        h, e = slot_angles(slot_of_neighbour(g, path[0], path[1]))
    else:
        # too many neighbours for the panoramic layout: face the quantised bearing
        psi, omega = g.direction(path[0], path[1])
        h, e = wrap_heading(round(psi / ANGLE_STEP)), max(-1, min(1, round(omega / ANGLE_STEP)))
    return Route(h, e, path, synth_instruction(g, path, vocab))


# --------------------------------------------------------------------------
# route system


@dataclass
class RouteSystem:
    graph: EnvironmentGraph
    routes: list[Route]
    attention_radius: float = 2.0
    vocab: Vocab = field(default_factory=Vocab.default)
    seed: int = 0

    def __post_init__(self):
        self.by_start: dict[int, list[int]] = {}
        self.by_endpoints: dict[tuple[int, int], int] = {}
        for i, r in enumerate(self.routes):
            self.by_start.setdefault(r.start, []).append(i)
            self.by_endpoints.setdefault((r.path[0], r.path[-1]), i)
        self._enterable: dict[int, list[int]] = {}
        self._goal_tables: dict[tuple[int, ...], np.ndarray] = {}

    def __len__(self) -> int:
        return len(self.routes)

    @cached_property
    def tree(self) -> SpanningTree:
        return SpanningTree(self.graph)

    def enterable_indices(self, node: int) -> list[int]:
        if node not in self._enterable:
            g = self.graph
            starts = [node] + [
                w for w in g.adjacency[node] if g.edge_length(node, w) <= self.attention_radius + DIST_TOL
            ]
            idx = sorted(i for s in starts for i in self.by_start.get(s, ()))
            self._enterable[node] = idx
        return self._enterable[node]

    def goal_distance_table(self, goals) -> np.ndarray:
        """Per route, the shortest distance from any route node to the goal set."""
        key = tuple(sorted(int(v) for v in goals))
        if key not in self._goal_tables:
            dnode = self.graph.distances[:, list(key)].min(axis=1)
            self._goal_tables[key] = np.array([dnode[list(r.path)].min() for r in self.routes])
        return self._goal_tables[key]

    def in_zone(self, node: int) -> bool:
        return bool(self.enterable_indices(node))

    # file IO -----------------------------------------------------------
    def to_json(self) -> list[dict]:
        return [
            {
                "start_heading": r.start_psi,
                "start_elevation": r.start_omega,
                "path": list(r.path),
                "instruction": list(r.instruction),
            }
            for r in self.routes
        ]

    def save(self, path, vocab_path=None) -> None:
        Path(path).write_text(json.dumps(self.to_json()) + "\n")
        if vocab_path is not None:
            Path(vocab_path).write_text(json.dumps(self.vocab.to_json(), indent=0) + "\n")

    @classmethod
    def from_json(cls, g: EnvironmentGraph, data: list, attention_radius: float = 2.0, vocab=None) -> "RouteSystem":
        routes = []
        for i, d in enumerate(data):
            p = Pose.from_angles(d["path"][0], float(d["start_heading"]), float(d["start_elevation"]))
            path = tuple(int(v) for v in d["path"])
            if len(path) < 2 or any(not g.are_adjacent(a, b) for a, b in zip(path, path[1:])):
                raise ContractError(f"route {i}: path is not a walk on the graph")
            if not d["instruction"]:
                raise ContractError(f"route {i}: empty instruction")
            routes.append(Route(p.heading, p.elevation, path, tuple(int(t) for t in d["instruction"])))
        return cls(g, routes, attention_radius, vocab or Vocab.default())

    @classmethod
    def load(cls, g: EnvironmentGraph, path, attention_radius: float = 2.0, vocab_path=None) -> "RouteSystem":
        vocab = None
        if vocab_path is not None:
            vocab = Vocab.from_json(json.loads(Path(vocab_path).read_text()))
        return cls.from_json(g, json.loads(Path(path).read_text()), attention_radius, vocab)


def build_route_system(
    g: EnvironmentGraph, seed: int = 0, vocab: Vocab | None = None, attention_radius: float = 2.0
) -> RouteSystem:
    """Routes from every node to each of its 2^i-th tree ancestors (for all
    2^i <= depth) plus the reverse routes. The construction is deterministic;
    ``seed`` is only recorded."""
    vocab = vocab or Vocab.default()
    tree = SpanningTree(g)
    routes = []
    for v in range(g.n_nodes):
        k = 1
        while k <= tree.depth[v]:
            up = tree.path_up(v, k)
            routes.append(make_route(g, up, vocab))
            routes.append(make_route(g, up[::-1], vocab))
            k *= 2
    rs = RouteSystem(g, routes, attention_radius, vocab, seed)
    rs.__dict__["tree"] = tree
    return rs


def route_bound(n: int) -> int:
    return 2 * n * math.ceil(math.log2(n)) if n > 1 else 0


def compose_plan(rs: RouteSystem, g: EnvironmentGraph, u: int, v: int) -> list[Route]:
    """Routes walking u -> lca(u, v) -> v along the tree, each leg split
    greedily into descending powers of two."""
    if u == v:
        raise ContractError("compose_plan needs distinct endpoints")
    tree = rs.tree
    w = tree.lca(u, v)
    plan = []
    x, remaining = u, tree.depth[u] - tree.depth[w]
    while remaining:
        k = 1 << (remaining.bit_length() - 1)
        y = tree.ancestor(x, k)
        plan.append(rs.routes[rs.by_endpoints[(x, y)]])
        x, remaining = y, remaining - k
    x, remaining = w, tree.depth[v] - tree.depth[w]
    while remaining:
        k = 1 << (remaining.bit_length() - 1)
        y = tree.ancestor(v, remaining - k)
        plan.append(rs.routes[rs.by_endpoints[(x, y)]])
        x, remaining = y, remaining - k
    return plan


# --------------------------------------------------------------------------
# answering a request


def enterable_routes(rs: RouteSystem, g: EnvironmentGraph, pose: Pose) -> list[Route]:
    return [rs.routes[i] for i in rs.enterable_indices(pose.node)]


def route_goal_distance(g: EnvironmentGraph, route: Route, goals: Sequence[int]) -> float:
    return float(g.distances[np.ix_(list(route.path), list(goals))].min())


def select_route(candidates: Sequence[Route], g: EnvironmentGraph, goals: Sequence[int]) -> Route:
    return candidates[_select_route_index(candidates, g, goals)]


def _select_route_index(candidates, g, goals) -> int:
    if not candidates:
        raise ContractError("no enterable route to select from")
    goals = sorted(goals)
    best, best_d = 0, math.inf
    for i, r in enumerate(candidates):
        d = route_goal_distance(g, r, goals)
        if d < best_d:
            best, best_d = i, d
    return best


def select_departure_and_goal(route: Route, g: EnvironmentGraph, goals: Sequence[int]) -> tuple[int, int]:
    goals = sorted(goals)
    if not route.path:
        raise ContractError("empty route")
    best_v, best_d = route.path[0], math.inf
    for v in route.path:
        for gl in goals:
            d = g.distances[v, gl]
            if d < best_d:
                best_v, best_d = v, d
    dists = [g.distances[gl, best_v] for gl in goals]
    return best_v, goals[int(np.argmin(dists))]


def respond(
    rs: RouteSystem,
    g: EnvironmentGraph,
    pose: Pose,
    goals: Sequence[int],
    cfg: SimConfig = SimConfig(),
    render: Callable[[int], np.ndarray] | None = None,
) -> HelpResponse:
    idx = rs.enterable_indices(pose.node)
    if not idx:
        raise ContractError(f"node {pose.node} is outside every zone of attention")
    # same minimiser as select_route (first index on ties), from a cached per-goal-set table
    k = int(np.argmin(rs.goal_distance_table(goals)[idx]))
    route = rs.routes[idx[k]]
    v_d, g_star = select_departure_and_goal(route, g, goals)
    render = render or (lambda v: render_observation(g, v, cfg))
    return HelpResponse(route, idx[k], v_d, render(v_d), g_star, render(g_star))
