import numpy as np
import pytest

from assistnav import model as M
from assistnav.anna import RouteSystem, Vocab, build_route_system, make_route
from assistnav.env import (
    STOP_SLOT,
    ContractError,
    Pose,
    SimConfig,
    chain_graph,
    make_task,
    render_observation,
    slot_of_neighbour,
)
from assistnav.rollout import (
    EpisodeSpec,
    EveryKAsk,
    LearnedAsk,
    LearnedNav,
    NavPolicy,
    NeverAsk,
    ScriptedAsk,
    ScriptedNav,
    World,
    make_policies,
    rollout,
)
from assistnav.teachers import MAIN_TASK, SUB_TASK, TASK_INSTRUCTION

V = Vocab.default()
SIM = SimConfig()
G = chain_graph(8, objects=[(0, 7)])  # goals: nodes within 2 m of node 7
GOALS = (5, 6, 7)


def task(start=Pose(0, 12, 0), budget=50):
    return make_task(G, 0, start, SIM, budget=budget, task_id="t", env="chain")


def fwd(s):
    return slot_of_neighbour(G, s.pose.node, s.pose.node + 1)


def run(routes, nav_fn, ask_fn=None, start=Pose(0, 12, 0), budget=50):
    rs = RouteSystem(G, [make_route(G, p, V) for p in routes])
    spec = EpisodeSpec(G, rs, task(start, budget), seed=0)
    ask = NeverAsk() if ask_fn is None else ScriptedAsk(ask_fn)
    return rollout([spec], ScriptedNav(nav_fn), ask, V, SIM)[0], rs


def summary(tr):
    return [(s.pose.node, s.mode, s.instruction_id, s.targets, s.has_target_view, s.asked, s.nav_decision)
            for s in tr.steps]


def test_immediate_stop():
    tr, _ = run([(2, 3)], lambda s: STOP_SLOT)
    assert len(tr) == 1 and tr.final_pose == Pose(0, 12, 0) and tr.stopped and tr.travel == 0


def test_request_subtask_and_return():
    seen = []

    def nav(s):
        seen.append((s.t, s.instruction, None if s.target_view is None else s.target_view.copy()))
        if s.mode == SUB_TASK and s.pose.node == s.targets[0]:
            return STOP_SLOT
        if s.mode == MAIN_TASK and s.target_view is not None:
            return STOP_SLOT
        return fwd(s)

    tr, rs = run([(2, 3, 4, 5)], nav, ask_fn=lambda s: s.t == 1)
    M_, S_ = MAIN_TASK, SUB_TASK
    assert summary(tr) == [
        (0, M_, TASK_INSTRUCTION, GOALS, False, False, True),
        (1, M_, TASK_INSTRUCTION, GOALS, False, True, False),  # forced entry to node 2
        (2, S_, 0, (5,), True, False, True),
        (3, S_, 0, (5,), True, False, True),
        (4, S_, 0, (5,), True, False, True),
        (5, S_, 0, (5,), True, False, True),  # Stop at the departure node
        (5, M_, TASK_INSTRUCTION, GOALS, True, False, True),  # goal view active; Stop ends the episode
    ]
    assert tr.stopped and tr.final_pose.node == 5 and tr.requests == 1
    assert tr.travel == pytest.approx(5.0)
    # instruction and target views seen by the policy at each step
    assert seen[2][1] == rs.routes[0].instruction
    assert np.array_equal(seen[2][2], render_observation(G, 5))
    assert seen[6][1] == V.task_command(0)
    assert np.array_equal(seen[6][2], render_observation(G, 5))  # goal nearest the departure
    assert tr.steps[1].nav_slot is None and tr.steps[5].nav_slot == STOP_SLOT


def test_request_outside_zone_is_ignored():
    tr, _ = run([(6, 7)], lambda s: fwd(s) if s.t < 2 else STOP_SLOT, ask_fn=lambda s: True)
    assert [s.asked for s in tr.steps] == [False] * 3
    assert all(s.nav_decision for s in tr.steps)
    assert tr.requests == 0 and [s.pose.node for s in tr.steps] == [0, 1, 2]
    assert [s.in_zone for s in tr.steps] == [False, False, False]


def test_budget_exhaustion():
    tr, _ = run([(6, 7)], fwd, budget=4)
    assert len(tr) == 4 and not tr.stopped and tr.final_pose.node == 4


def test_forced_entry_turns_in_place():
    # agent at node 3 facing west; the route leaves node 3 heading east
    tr, rs = run([(3, 4)], lambda s: STOP_SLOT, ask_fn=lambda s: s.t == 0, start=Pose(3, 6, 1), budget=2)
    r = rs.routes[0]
    assert tr.steps[0].asked and tr.steps[1].pose == Pose(3, r.start_heading, r.start_elevation)
    assert tr.travel == 0
    # Stop in the subtask at the departure node (4 is the route's node nearest the goals)
    assert tr.steps[1].targets == (4,)


def test_second_request_resets_instruction():
    def nav(s):
        return fwd(s)

    tr, _ = run([(1, 2), (3, 4, 5)], nav, ask_fn=lambda s: s.t in (0, 2), budget=6)
    assert [s.instruction_id for s in tr.steps] == [-1, 0, 0, 1, 1, 1]
    assert [s.asked for s in tr.steps] == [True, False, True, False, False, False]


def test_every_k_waits_k_steps():
    rs = RouteSystem(G, [make_route(G, (v, v + 1), V) for v in range(7)])
    spec = EpisodeSpec(G, rs, task(budget=12), seed=0)

    def shuttle(s):  # back and forth between nodes 0 and 1
        return slot_of_neighbour(G, 1, 0) if s.pose.node == 1 else fwd(s)

    tr = rollout([spec], ScriptedNav(shuttle), EveryKAsk(5), V, SIM)[0]
    asked_at = [t for t, s in enumerate(tr.steps) if s.asked]
    assert asked_at[0] == 5
    assert all(b - a >= 5 for a, b in zip(asked_at, asked_at[1:]))


class MemoryProbe(NavPolicy):
    """Wraps a learned policy and records memory sizes before each step."""

    def __init__(self, inner):
        self.inner, self.log = inner, []

    def begin(self, states):
        self.inner.begin(states)

    def after_step(self, i, reset):
        self.inner.after_step(i, reset)

    def act(self, states, idx):
        m = self.inner.mem[0]
        self.log.append((states[0].instruction_id, m.inter_steps, len(m.inter_in), len(m.intra_in),
                         m.eta_loc.copy()))
        return self.inner.act(states, idx)


def test_memory_reset_contract():
    cfg = M.ModelConfig(vocab_size=len(V), hidden=16)
    rng = np.random.default_rng(0)
    nav = MemoryProbe(LearnedNav(M.init_params(cfg, False, rng), cfg, True, M.L.NO_DROPOUT, False))
    ask = ScriptedAsk(lambda s: s.t in (1, 4))
    rs = RouteSystem(G, [make_route(G, p, V) for p in [(1, 2), (3, 2)]] + [make_route(G, (v, v + 1), V) for v in range(7)])
    spec = EpisodeSpec(G, rs, task(budget=9), seed=0)
    tr = rollout([spec], nav, ask, V, SIM)[0]
    last_switch = 0
    eta_after_reset = []
    for t, (iid, steps, n_inter, n_intra, eta) in enumerate(nav.log):
        if t and iid != nav.log[t - 1][0]:
            last_switch = t
        assert steps == n_inter == t - last_switch
        assert n_intra == t
        if steps == 0:
            eta_after_reset.append(eta)
    assert len(eta_after_reset) >= 2 and all(np.all(e == 0) for e in eta_after_reset)
    assert len(tr) == len(nav.log)


def small_world():
    from assistnav.env import generate_environment

    g = generate_environment(30, seed=2, name="w")
    return World.build({"w": g}), g


def test_batch_independence():
    world, g = small_world()
    cfg = M.ModelConfig(vocab_size=len(world.vocab), hidden=16)
    rng = np.random.default_rng(1)
    nav_P, ask_P = M.init_params(cfg, False, rng), M.init_params(cfg, True, rng)
    tasks = [make_task(g, k % 4, Pose(v, 3, 0), SIM, task_id=str(v)) for k, v in enumerate((0, 5, 9, 14))]
    specs = [world.spec(t, seed=[7, i]) for i, t in enumerate(tasks)]
    sample = dict(greedy=False)
    together = rollout(specs, *make_policies("learned", nav_P, ask_P, cfg, **sample), world.vocab, SIM, budget=12)
    for i, spec in enumerate(specs):
        alone = rollout([spec], *make_policies("learned", nav_P, ask_P, cfg, **sample), world.vocab, SIM, budget=12)[0]
        a, b = together[i], alone
        assert [s.pose for s in a.steps] == [s.pose for s in b.steps]
        assert all(np.allclose(x.p_nav, y.p_nav, atol=1e-12) for x, y in zip(a.steps, b.steps))


def test_learned_distributions_valid():
    world, g = small_world()
    cfg = M.ModelConfig(vocab_size=len(world.vocab), hidden=16)
    rng = np.random.default_rng(2)
    nav, ask = make_policies("learned", M.init_params(cfg, False, rng), M.init_params(cfg, True, rng), cfg,
                             greedy=False)
    t = make_task(g, 1, Pose(3), SIM)
    tr = rollout([world.spec(t, seed=3)], nav, ask, world.vocab, SIM, budget=15)[0]
    from assistnav.env import valid_slot_mask

    for s in tr.steps:
        assert abs(s.p_nav.sum() - 1) < 1e-6 and abs(s.p_ask.sum() - 1) < 1e-6
        assert np.all(s.p_nav[~valid_slot_mask(g, s.pose.node)] == 0)
        if not s.in_zone:
            assert s.p_ask[1] == 0


def test_shortest_policy_reaches_goal():
    world, g = small_world()
    t = make_task(g, 0, Pose(0), SIM)
    tr = rollout([world.spec(t)], *make_policies("shortest"), world.vocab, SIM)[0]
    assert tr.stopped and tr.final_pose.node in t.goals
    assert tr.travel == pytest.approx(g.distances[0, list(t.goals)].min())


def test_policy_factory_errors():
    with pytest.raises(ContractError):
        make_policies("learned")
    with pytest.raises(ContractError):
        make_policies("nope")
    world, _ = small_world()
    with pytest.raises(ContractError):
        world.graph("missing")


def test_world_routes_built():
    world, g = small_world()
    assert len(world.routes["w"]) == len(build_route_system(g))
