"""Walk through one simulated assistant.

Generates a 40-node environment, builds the assistant's language-assisted
routes, then asks for help from a few locations and prints what the assistant
says: the chosen route, its instruction, where to leave it and which goal it
is heading for. Finishes with the route-count bound and a composed plan.

    python3 demos/01_assistant_routes.py
"""
import math

from assistnav.anna import build_route_system, compose_plan, respond, route_bound
from assistnav.env import Pose, SimConfig, generate_environment, goal_set

sim = SimConfig()
g = generate_environment(40, seed=11, name="demo")
rs = build_route_system(g)
print(f"environment: {g.n_nodes} nodes, {len(g.edges)} edges, mean edge {g.mean_edge_length:.2f} m")
print(f"routes: {len(rs)} (bound 2 N ceil(log2 N) = {route_bound(g.n_nodes)})")

obj = g.object_types[0]
goals = goal_set(g, obj, sim.success_radius)
print(f"\ntask: find object type {obj}; goal nodes {list(goals)}")

asked = 0
for v in range(g.n_nodes):
    if not rs.in_zone(v) or v in goals:
        continue
    r = respond(rs, g, Pose(v), goals, sim)
    words = " ".join(rs.vocab.decode(r.route.instruction))
    print(f"\nhelp requested at node {v}:")
    print(f"  route {r.route_index}: {' -> '.join(map(str, r.route.path))}")
    print(f"  instruction: {words}")
    print(f"  leave the route at node {r.departure} (goal {r.goal} is "
          f"{g.distances[r.departure, r.goal]:.2f} m away, start was {g.distances[v, list(goals)].min():.2f} m)")
    asked += 1
    if asked == 3:
        break

u, w = 0, g.n_nodes - 1
plan = compose_plan(rs, g, u, w)
print(f"\nplan {u} -> {w}: {len(plan)} routes (at most {2 * math.ceil(math.log2(g.n_nodes))})")
for r in plan:
    print("  " + " -> ".join(map(str, r.path)))
