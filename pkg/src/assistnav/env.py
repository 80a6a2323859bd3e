"""Graph navigation world: poses, the panoramic action space, transitions,
synthetic panoramic observations and shortest-path distances.

Angles are stored as integer multiples of pi/6. A heading index lies in
1..12 (so heading 2*pi is index 12 and there is no index 0) and an elevation
index lies in -1..1. The 36 view slots are world-frame directions, with
``slot = heading_slot * 3 + elevation_slot``, where ``heading_slot = heading % 12``
and ``elevation_slot = elevation + 1``. Slot 36 is Stop.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import shortest_path

ANGLE_STEP = math.pi / 6
N_HEADINGS = 12
N_ELEVATIONS = 3
N_VIEWS = N_HEADINGS * N_ELEVATIONS
STOP_SLOT = N_VIEWS
N_NAV_ACTIONS = N_VIEWS + 1
N_LANDMARKS = 64
DIST_TOL = 1e-9


class ContractError(ValueError):
    """Raised when an operation is called outside its preconditions."""


class EnvFormatError(ValueError):
    """Raised when an environment file violates the graph invariants."""


@dataclass(frozen=True)
class SimConfig:
    success_radius: float = 2.0
    attention_radius: float = 2.0
    train_steps: int = 20
    eval_steps: int = 50
    feature_dim: int = 32
    noise_scale: float = 0.05
    # strength of the neighbour-landmark / object cues mixed into each view
    landmark_cue: float = 0.6
    object_cue: float = 0.6

    def __post_init__(self):
        if self.success_radius <= 0 or self.attention_radius <= 0:
            raise ValueError("radii must be positive")
        if self.train_steps < 1 or self.eval_steps < 1:
            raise ValueError("time budgets must be >= 1")


# --------------------------------------------------------------------------
# angles, poses and actions


def wrap_heading(h: int) -> int:
    """Map any integer heading onto 1..12."""
    return (h - 1) % N_HEADINGS + 1


def clamp_elevation(e: int) -> int:
    return max(-1, min(1, e))


def slot_index(heading: int, elevation: int) -> int:
    return (heading % N_HEADINGS) * N_ELEVATIONS + (elevation + 1)


def slot_angles(slot: int) -> tuple[int, int]:
    """(heading index in 1..12, elevation index in -1..1) of a view slot."""
    hs, es = divmod(slot, N_ELEVATIONS)
    return wrap_heading(hs), es - 1


def heading_delta(target: int, current: int) -> int:
    """Signed heading change in -5..6 steps taking ``current`` to ``target``."""
    d = (target - current) % N_HEADINGS
    return d - N_HEADINGS if d > N_HEADINGS // 2 else d


def angular_distance(psi1, omega1, psi2, omega2):
    """Great-circle angle between two viewing directions, in radians."""
    c = np.sin(omega1) * np.sin(omega2) + np.cos(omega1) * np.cos(omega2) * np.cos(psi1 - psi2)
    return np.arccos(np.clip(c, -1.0, 1.0))


@dataclass(frozen=True)
class Pose:
    node: int
    heading: int = 12
    elevation: int = 0

    def __post_init__(self):
        if not 1 <= self.heading <= N_HEADINGS:
            raise ContractError(f"heading index {self.heading} outside 1..12")
        if not -1 <= self.elevation <= 1:
            raise ContractError(f"elevation index {self.elevation} outside -1..1")

    @property
    def psi(self) -> float:
        return self.heading * ANGLE_STEP

    @property
    def omega(self) -> float:
        return self.elevation * ANGLE_STEP

    @classmethod
    def from_angles(cls, node: int, psi: float, omega: float) -> "Pose":
        h = round(psi / ANGLE_STEP)
        e = round(omega / ANGLE_STEP)
        if not math.isclose(h * ANGLE_STEP, psi, abs_tol=1e-9) or not math.isclose(
            e * ANGLE_STEP, omega, abs_tol=1e-9
        ):
            raise ContractError("angles must be multiples of pi/6")
        return cls(node, wrap_heading(h), e)


@dataclass(frozen=True)
class NavAction:
    """Stop (``target is None``) or a move to ``target`` with a camera change
    of ``dpsi`` / ``domega`` angle steps. ``slot`` is the view slot the move
    occupies in the panoramic layout, or None for forced in-place turns."""

    target: int | None = None
    dpsi: int = 0
    domega: int = 0
    slot: int | None = STOP_SLOT

    @property
    def is_stop(self) -> bool:
        return self.target is None

    @property
    def dpsi_rad(self) -> float:
        return self.dpsi * ANGLE_STEP

    @property
    def domega_rad(self) -> float:
        return self.domega * ANGLE_STEP


STOP = NavAction()


# --------------------------------------------------------------------------
# the graph


@dataclass(frozen=True, eq=False)
class EnvironmentGraph:
    positions: np.ndarray  # (N, 3) meters
    scene_seeds: tuple[int, ...]
    edges: tuple[tuple[int, int], ...]
    objects: tuple[tuple[int, int], ...] = ()  # (object type, node)
    name: str = ""
    _validate: bool = field(default=True, repr=False)

    def __post_init__(self):
        pos = np.asarray(self.positions, dtype=np.float64)
        object.__setattr__(self, "positions", pos)
        object.__setattr__(self, "edges", tuple(tuple(sorted(map(int, e))) for e in self.edges))
        object.__setattr__(self, "objects", tuple((int(t), int(v)) for t, v in self.objects))
        object.__setattr__(self, "scene_seeds", tuple(int(s) for s in self.scene_seeds))
        if self._validate:
            problems = self.invariant_violations()
            if problems:
                raise ContractError("; ".join(problems))

    @property
    def n_nodes(self) -> int:
        return len(self.positions)

    def invariant_violations(self) -> list[str]:
        out = []
        n = self.n_nodes
        if self.positions.ndim != 2 or self.positions.shape[1] != 3:
            return ["positions must be an (N, 3) array"]
        if not np.all(np.isfinite(self.positions)):
            out.append("non-finite node position")
        if len(self.scene_seeds) != n:
            out.append("one scene seed per node required")
        seen = set()
        for i, (u, v) in enumerate(self.edges):
            if not (0 <= u < n and 0 <= v < n):
                out.append(f"edge {i} references a missing node")
                continue
            if u == v:
                out.append(f"edge {i} is a self-loop")
            elif (u, v) in seen:
                out.append(f"edge {i} duplicates ({u}, {v})")
            elif np.linalg.norm(self.positions[u] - self.positions[v]) <= 0:
                out.append(f"edge {i} has zero length")
            seen.add((u, v))
        for i, (_, v) in enumerate(self.objects):
            if not 0 <= v < n:
                out.append(f"object {i} placed on missing node {v}")
        if not out and n and not self._connected():
            out.append("graph is not connected")
        return out

    def _connected(self) -> bool:
        adj = self.adjacency
        seen = {0}
        stack = [0]
        while stack:
            for w in adj[stack.pop()]:
                if w not in seen:
                    seen.add(w)
                    stack.append(w)
        return len(seen) == self.n_nodes

    @cached_property
    def adjacency(self) -> dict[int, tuple[int, ...]]:
        adj: dict[int, list[int]] = {v: [] for v in range(self.n_nodes)}
        for u, v in self.edges:
            adj[u].append(v)
            adj[v].append(u)
        return {v: tuple(sorted(ns)) for v, ns in adj.items()}

    def edge_length(self, u: int, v: int) -> float:
        return float(np.linalg.norm(self.positions[u] - self.positions[v]))

    def are_adjacent(self, u: int, v: int) -> bool:
        return v in self.adjacency[u]

    @cached_property
    def mean_edge_length(self) -> float:
        if not self.edges:
            return 0.0
        return float(np.mean([self.edge_length(u, v) for u, v in self.edges]))

    @cached_property
    def distances(self) -> np.ndarray:
        """All-pairs shortest-path distances in meters, shape (N, N)."""
        n = self.n_nodes
        if not self.edges:
            return np.zeros((n, n))
        u, v = np.array(self.edges).T
        w = np.linalg.norm(self.positions[u] - self.positions[v], axis=1)
        m = csr_matrix((np.r_[w, w], (np.r_[u, v], np.r_[v, u])), shape=(n, n))
        return shortest_path(m, method="D", directed=False)

    @cached_property
    def hops(self) -> np.ndarray:
        """All-pairs shortest-path hop counts."""
        n = self.n_nodes
        if not self.edges:
            return np.zeros((n, n))
        u, v = np.array(self.edges).T
        ones = np.ones(len(u))
        m = csr_matrix((np.r_[ones, ones], (np.r_[u, v], np.r_[v, u])), shape=(n, n))
        return shortest_path(m, method="D", directed=False, unweighted=True)

    @cached_property
    def objects_by_node(self) -> dict[int, list[int]]:
        out: dict[int, set[int]] = {}
        for t, v in self.objects:
            out.setdefault(v, set()).add(t)
        return {v: sorted(ts) for v, ts in out.items()}

    def objects_of_type(self, object_type: int) -> list[int]:
        return sorted({v for t, v in self.objects if t == object_type})

    @cached_property
    def object_types(self) -> list[int]:
        return sorted({t for t, _ in self.objects})

    def direction(self, u: int, v: int) -> tuple[float, float]:
        """World-frame (heading, elevation) in radians of the bearing u -> v.
        Heading is measured counter-clockwise from +x and lies in (0, 2*pi]."""
        dx, dy, dz = self.positions[v] - self.positions[u]
        psi = math.atan2(dy, dx) % (2 * math.pi)
        if psi <= 0:
            psi += 2 * math.pi
        omega = math.atan2(dz, math.hypot(dx, dy))
        return psi, omega

    @cached_property
    def _layouts(self) -> dict[int, dict[int, int]]:
        return {}

    def layout(self, node: int) -> dict[int, int]:
        """Pose-independent mapping view slot -> neighbour at ``node``."""
        cache = self._layouts
        if node not in cache:
            cache[node] = _assign_slots(self, node)
        return cache[node]

    # serialisation -------------------------------------------------------
    def to_json(self) -> dict:
        return {
            "nodes": [
                {"id": i, "pos": [float(c) for c in p], "scene_seed": s}
                for i, (p, s) in enumerate(zip(self.positions, self.scene_seeds))
            ],
            "edges": [[u, v] for u, v in self.edges],
            "objects": [{"type": t, "node": v} for t, v in self.objects],
        }


def shortest_distances(g: EnvironmentGraph, source: int) -> dict[int, float]:
    if not 0 <= source < g.n_nodes:
        raise ContractError(f"node {source} does not exist")
    return {v: float(d) for v, d in enumerate(g.distances[source])}


def distance_to_set(g: EnvironmentGraph, node: int, targets: Iterable[int]) -> float:
    t = list(targets)
    return float(g.distances[node, t].min())


def is_success(g: EnvironmentGraph, final_node: int, goals: Iterable[int], success_radius: float) -> bool:
    return distance_to_set(g, final_node, goals) <= success_radius + DIST_TOL


# --------------------------------------------------------------------------
# panoramic action space

_SLOT_PSI = np.array([slot_angles(s)[0] * ANGLE_STEP for s in range(N_VIEWS)])
_SLOT_OMEGA = np.array([slot_angles(s)[1] * ANGLE_STEP for s in range(N_VIEWS)])


def _assign_slots(g: EnvironmentGraph, node: int) -> dict[int, int]:
    neighbours = g.adjacency[node]
    if len(neighbours) > N_VIEWS:
        raise ContractError(f"node {node} has more than {N_VIEWS} neighbours")
    dists = {}
    for w in neighbours:
        psi, omega = g.direction(node, w)
        omega = min(max(omega, -ANGLE_STEP), ANGLE_STEP)
        dists[w] = angular_distance(psi, omega, _SLOT_PSI, _SLOT_OMEGA)
    # closest neighbours claim their slot first; the rest take the nearest free one
    order = sorted(neighbours, key=lambda w: (float(dists[w].min()), w))
    layout: dict[int, int] = {}
    for w in order:
        for s in np.lexsort((np.arange(N_VIEWS), dists[w])):
            if int(s) not in layout:
                layout[int(s)] = w
                break
    return dict(sorted(layout.items()))


def panoramic_actions(g: EnvironmentGraph, pose: Pose) -> list[NavAction]:
    """Valid navigation actions at ``pose``: one Move per occupied slot, then Stop."""
    out = []
    for s, w in g.layout(pose.node).items():
        h, e = slot_angles(s)
        out.append(NavAction(w, heading_delta(h, pose.heading), e - pose.elevation, s))
    out.append(STOP)
    return out


def action_for_slot(g: EnvironmentGraph, pose: Pose, slot: int) -> NavAction:
    if slot == STOP_SLOT:
        return STOP
    w = g.layout(pose.node).get(slot)
    if w is None:
        raise ContractError(f"slot {slot} is empty at node {pose.node}")
    h, e = slot_angles(slot)
    return NavAction(w, heading_delta(h, pose.heading), e - pose.elevation, slot)


def slot_of_neighbour(g: EnvironmentGraph, node: int, neighbour: int) -> int:
    for s, w in g.layout(node).items():
        if w == neighbour:
            return s
    raise ContractError(f"{neighbour} is not adjacent to {node}")


def valid_slot_mask(g: EnvironmentGraph, node: int) -> np.ndarray:
    m = np.zeros(N_NAV_ACTIONS, dtype=bool)
    m[list(g.layout(node))] = True
    m[STOP_SLOT] = True
    return m


def step(g: EnvironmentGraph, pose: Pose, action: NavAction) -> Pose:
    """Apply a navigation action. A move whose target is the current node is an
    in-place camera turn (used by the forced actions of the episode protocol)."""
    if action.is_stop:
        return pose
    if action.target != pose.node and not g.are_adjacent(pose.node, action.target):
        raise ContractError(f"node {action.target} is not adjacent to {pose.node}")
    return Pose(
        action.target,
        wrap_heading(pose.heading + action.dpsi),
        clamp_elevation(pose.elevation + action.domega),
    )


# --------------------------------------------------------------------------
# synthetic observations


def _unit_rows(rng: np.random.Generator, n: int, dim: int) -> np.ndarray:
    x = rng.standard_normal((n, dim))
    return x / np.linalg.norm(x, axis=1, keepdims=True)


_ATLAS_CACHE: dict[tuple[int, int], np.ndarray] = {}


def cue_atlas(kind: int, dim: int, size: int = 256) -> np.ndarray:
    """Fixed unit vectors shared by every scene: kind 0 = landmarks, 1 = objects."""
    key = (kind, dim)
    if key not in _ATLAS_CACHE:
        _ATLAS_CACHE[key] = _unit_rows(np.random.default_rng([0xA7A5, kind, dim]), size, dim)
    return _ATLAS_CACHE[key]


def landmark_of(g: EnvironmentGraph, node: int) -> int:
    return g.scene_seeds[node] % N_LANDMARKS


def render_observation(g: EnvironmentGraph, node: int, cfg: SimConfig = SimConfig()) -> np.ndarray:
    """Panoramic feature set of ``node``: a (36, feature_dim) array of unit rows.

    Each view is a scene-seeded random direction, a small fixed-seed
    perturbation, and cues for what the view faces: the landmark of the
    neighbour in that slot and any objects placed there (a node's own objects
    show in all of its views).
    """
    if not 0 <= node < g.n_nodes:
        raise ContractError(f"node {node} does not exist")
    dim = cfg.feature_dim
    base = _unit_rows(np.random.default_rng([g.scene_seeds[node] & 0xFFFFFFFFFFFFFFFF, 1]), N_VIEWS, dim)
    pert = np.random.default_rng([0x5EED, node]).standard_normal((N_VIEWS, dim))
    x = base + cfg.noise_scale * pert
    lm, ob = cue_atlas(0, dim), cue_atlas(1, dim)
    for t in _objects_at(g, node):
        x += cfg.object_cue * ob[t % len(ob)]
    for s, w in g.layout(node).items():
        x[s] += cfg.landmark_cue * lm[landmark_of(g, w)]
        for t in _objects_at(g, w):
            x[s] += cfg.object_cue * ob[t % len(ob)]
    return x / np.linalg.norm(x, axis=1, keepdims=True)


def _objects_at(g: EnvironmentGraph, node: int) -> list[int]:
    return g.objects_by_node.get(node, [])


# --------------------------------------------------------------------------
# generation and file IO


def generate_environment(
    n_nodes: int,
    radius: float = 3.0,
    n_object_types: int = 4,
    seed: int = 0,
    instances_per_type: int = 2,
    min_separation: float = 1.0,
    max_attempts: int = 200,
    name: str = "",
) -> EnvironmentGraph:
    """Random geometric graph in a 2:1 box sized for a mean degree near six.

    Positions are resampled until the radius graph is connected.
    """
    if n_nodes < 2:
        raise ContractError("n_nodes must be >= 2")
    if radius <= min_separation:
        raise ContractError("radius must exceed the minimum node separation")
    rng = np.random.default_rng(seed)
    area = n_nodes * math.pi * radius**2 / 6.0
    width = math.sqrt(area / 2.0)
    length = 2.0 * width
    if n_nodes == 2:
        length, width = radius * 0.9, 0.0
    for _ in range(max_attempts):
        pos = _sample_positions(rng, n_nodes, length, width, min_separation)
        if pos is None:
            continue
        d = np.linalg.norm(pos[:, None] - pos[None], axis=2)
        iu, iv = np.nonzero(np.triu(d <= radius, k=1))
        edges = tuple(zip(iu.tolist(), iv.tolist()))
        seeds = tuple(int(s) for s in rng.integers(0, 2**63 - 1, size=n_nodes))
        objects = []
        for t in range(n_object_types):
            k = min(instances_per_type, n_nodes)
            for v in sorted(rng.choice(n_nodes, size=k, replace=False).tolist()):
                objects.append((t, v))
        g = EnvironmentGraph(pos, seeds, edges, tuple(objects), name=name, _validate=False)
        if g.invariant_violations():
            continue
        return EnvironmentGraph(pos, seeds, edges, tuple(objects), name=name)
    raise ContractError(
        f"no connected graph after {max_attempts} attempts "
        f"(n_nodes={n_nodes}, radius={radius}); increase the radius"
    )


def _sample_positions(rng, n, length, width, min_sep, tries_per_node=200):
    pts: list[np.ndarray] = []
    for _ in range(n):
        for _ in range(tries_per_node):
            p = np.array([rng.uniform(0, length), rng.uniform(0, width), rng.uniform(0, 1.0)])
            if all(np.linalg.norm(p - q) >= min_sep for q in pts):
                pts.append(p)
                break
        else:
            return None
    return np.array(pts)


def _element_lines(text: str, key: str) -> list[int]:
    """1-based line of each element in the top-level list ``key``."""
    dec = json.JSONDecoder()
    i = text.find(f'"{key}"')
    if i < 0:
        return []
    i = text.find("[", i)
    lines = []
    i += 1
    while True:
        while i < len(text) and text[i] in " \t\r\n,":
            i += 1
        if i >= len(text) or text[i] == "]":
            return lines
        lines.append(text.count("\n", 0, i) + 1)
        _, i = dec.raw_decode(text, i)


def graph_from_json(data: dict, source: str = "<env>", text: str | None = None) -> EnvironmentGraph:
    def where(key, idx):
        if text is not None:
            lines = _element_lines(text, key)
            if idx < len(lines):
                return f"{source}:{lines[idx]}: {key}[{idx}]"
        return f"{source}: {key}[{idx}]"

    for key in ("nodes", "edges", "objects"):
        if not isinstance(data.get(key), list):
            raise EnvFormatError(f"{source}: missing list '{key}'")
    nodes = data["nodes"]
    for i, nd in enumerate(nodes):
        if not isinstance(nd, dict) or {"id", "pos", "scene_seed"} - nd.keys():
            raise EnvFormatError(f"{where('nodes', i)}: needs id, pos, scene_seed")
        if nd["id"] != i:
            raise EnvFormatError(f"{where('nodes', i)}: ids must be 0..N-1 in order, got {nd['id']}")
        if len(nd["pos"]) != 3 or not all(math.isfinite(float(c)) for c in nd["pos"]):
            raise EnvFormatError(f"{where('nodes', i)}: pos must be 3 finite numbers")
    n = len(nodes)
    if n < 1:
        raise EnvFormatError(f"{source}: no nodes")
    pos = np.array([nd["pos"] for nd in nodes], dtype=np.float64)
    seen = set()
    for i, e in enumerate(data["edges"]):
        if len(e) != 2:
            raise EnvFormatError(f"{where('edges', i)}: edge must be [u, v]")
        u, v = sorted(int(x) for x in e)
        if not (0 <= u < n and 0 <= v < n):
            raise EnvFormatError(f"{where('edges', i)}: unknown node")
        if u == v:
            raise EnvFormatError(f"{where('edges', i)}: self-loop")
        if (u, v) in seen:
            raise EnvFormatError(f"{where('edges', i)}: duplicate edge")
        if np.linalg.norm(pos[u] - pos[v]) <= 0:
            raise EnvFormatError(f"{where('edges', i)}: zero-length edge")
        seen.add((u, v))
    for i, ob in enumerate(data["objects"]):
        if not 0 <= int(ob["node"]) < n:
            raise EnvFormatError(f"{where('objects', i)}: object on unknown node")
    g = EnvironmentGraph(
        pos,
        tuple(int(nd["scene_seed"]) for nd in nodes),
        tuple(tuple(e) for e in data["edges"]),
        tuple((int(o["type"]), int(o["node"])) for o in data["objects"]),
        name=str(data.get("name", Path(source).stem)),
        _validate=False,
    )
    if not g._connected():
        raise EnvFormatError(f"{source}: graph is not connected")
    return g


def dumps_graph(g: EnvironmentGraph) -> str:
    d = g.to_json()
    lines = ["{", f'  "name": {json.dumps(g.name)},', '  "nodes": [']
    lines.append(",\n".join("    " + json.dumps(nd) for nd in d["nodes"]))
    lines.append("  ],")
    lines.append('  "edges": [')
    lines.append(",\n".join("    " + json.dumps(e) for e in d["edges"]))
    lines.append("  ],")
    lines.append('  "objects": [')
    lines.append(",\n".join("    " + json.dumps(o) for o in d["objects"]))
    lines.append("  ]")
    lines.append("}")
    return "\n".join(lines) + "\n"


def save_graph(g: EnvironmentGraph, path) -> None:
    Path(path).write_text(dumps_graph(g))


def load_graph(path) -> EnvironmentGraph:
    path = Path(path)
    text = path.read_text()
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise EnvFormatError(f"{path}:{exc.lineno}:{exc.colno}: {exc.msg}") from None
    return graph_from_json(data, str(path), text)


def chain_graph(n: int, spacing: float = 1.0, objects: Sequence[tuple[int, int]] = ()) -> EnvironmentGraph:
    """Straight chain 0-1-...-(n-1) along +x; handy for hand-checked cases."""
    pos = np.array([[i * spacing, 0.0, 0.0] for i in range(n)])
    return EnvironmentGraph(pos, tuple(range(1000, 1000 + n)), tuple((i, i + 1) for i in range(n - 1)), tuple(objects))


# --------------------------------------------------------------------------
# tasks


def goal_set(g: EnvironmentGraph, object_type: int, success_radius: float) -> tuple[int, ...]:
    """V_goal: every node within ``success_radius`` meters of an instance of the type."""
    inst = g.objects_of_type(object_type)
    if not inst:
        raise ContractError(f"object type {object_type} does not occur in the environment")
    d = g.distances[:, inst].min(axis=1)
    return tuple(int(v) for v in np.flatnonzero(d <= success_radius + DIST_TOL))


@dataclass(frozen=True)
class Task:
    task_id: str
    env: str
    object_type: int
    start: Pose
    goals: tuple[int, ...]
    budget: int = 50

    def __post_init__(self):
        if not self.goals:
            raise ContractError(f"task {self.task_id}: empty goal set")
        if self.budget < 1:
            raise ContractError(f"task {self.task_id}: budget must be positive")

    def hops(self, g: EnvironmentGraph) -> int:
        return int(g.hops[self.start.node, list(self.goals)].min())

    def to_json(self) -> dict:
        return {
            "id": self.task_id,
            "env": self.env,
            "object_type": self.object_type,
            "start": [self.start.node, self.start.heading, self.start.elevation],
            "goals": list(self.goals),
            "budget": self.budget,
        }

    @classmethod
    def from_json(cls, d: dict) -> "Task":
        try:
            node, heading, elev = d["start"]
            return cls(str(d["id"]), str(d["env"]), int(d["object_type"]), Pose(int(node), int(heading), int(elev)),
                       tuple(int(v) for v in d["goals"]), int(d.get("budget", 50)))
        except (KeyError, TypeError, ValueError) as exc:
            raise EnvFormatError(f"malformed task record {d!r}: {exc}") from None


def make_task(g: EnvironmentGraph, object_type: int, start: Pose, cfg: SimConfig = SimConfig(),
              budget: int | None = None, task_id: str = "", env: str = "") -> Task:
    return Task(task_id, env or g.name, object_type, start, goal_set(g, object_type, cfg.success_radius),
                cfg.eval_steps if budget is None else budget)


def task_success(g: EnvironmentGraph, task: Task, final_node: int) -> bool:
    return final_node in set(task.goals)
