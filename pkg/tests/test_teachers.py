import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from assistnav.env import N_NAV_ACTIONS, STOP, STOP_SLOT, ContractError, EnvironmentGraph, Pose, chain_graph
from assistnav.teachers import (
    MAIN_TASK,
    SUB_TASK,
    EpisodeTrace,
    StepRecord,
    TeacherConfig,
    curiosity_set,
    efficiency,
    label_trace,
    lost_flags,
    nav_teacher,
    nav_teacher_slot,
    retrospective_ask_teacher,
)

from conftest import random_graph
from oracles import future_progress

UNIFORM = np.full(N_NAV_ACTIONS, 1.0 / N_NAV_ACTIONS)


def one_hot(k):
    p = np.zeros(N_NAV_ACTIONS)
    p[k] = 1.0
    return p


def make_trace(g, nodes, targets=(4,), p=None, instr=None, nav_slots=None, asked=None, in_zone=True,
               mode=MAIN_TASK):
    steps = []
    for t, v in enumerate(nodes):
        steps.append(StepRecord(
            pose=Pose(v), instruction_id=-1 if instr is None else instr[t], mode=mode, targets=tuple(targets),
            has_target_view=mode == SUB_TASK, in_zone=in_zone, p_nav=UNIFORM if p is None else p[t],
            nav_slot=None if nav_slots is None else nav_slots[t], nav_decision=True,
            asked=False if asked is None else asked[t],
        ))
    return EpisodeTrace(None, g, steps)


# ---------------------------------------------------------------- navigation teacher

def test_teacher_stops_at_target(chain5):
    assert nav_teacher(chain5, Pose(4), [4]) == STOP
    assert nav_teacher_slot(chain5, Pose(4), 4) == STOP_SLOT


def test_teacher_follows_shortest_path(chain5):
    a = nav_teacher(chain5, Pose(1), [4])
    assert a.target == 2


def test_teacher_tie_smaller_successor():
    # square 0-1-3, 0-2-3 with equal sides
    pos = np.array([[0, 0, 0], [1.0, 0, 0], [0, 1.0, 0], [1.0, 1.0, 0]])
    g = EnvironmentGraph(pos, (0, 1, 2, 3), ((0, 1), (0, 2), (1, 3), (2, 3)))
    assert nav_teacher(g, Pose(0), [3]).target == 1
    assert nav_teacher(g, Pose(3), [0]).target == 1


def test_teacher_nearest_of_goal_set(chain5):
    assert nav_teacher(chain5, Pose(1), [0, 4]).target == 0


@given(st.integers(3, 30), st.integers(0, 10_000), st.data())
def test_teacher_makes_optimal_progress(n, seed, data):
    g = random_graph(n, seed)
    targets = sorted(set(data.draw(st.lists(st.integers(0, n - 1), min_size=1, max_size=3))))
    d = g.distances[:, targets].min(axis=1)
    for v in range(n):
        a = nav_teacher(g, Pose(v), targets)
        if v in targets:
            assert a.is_stop
        else:
            assert math.isclose(g.edge_length(v, a.target) + d[a.target], d[v], abs_tol=1e-9)


# ---------------------------------------------------------------- efficiency

def test_efficiency_examples():
    assert math.isclose(efficiency(UNIFORM), 1.0)
    assert efficiency(one_hot(3)) == 0.0
    p = np.zeros(N_NAV_ACTIONS)
    p[[0, 5]] = 0.5
    assert math.isclose(efficiency(p), math.log(2) / math.log(37))
    assert round(efficiency(p), 4) == 0.1920


@given(st.lists(st.floats(0, 1), min_size=N_NAV_ACTIONS, max_size=N_NAV_ACTIONS), st.randoms())
def test_efficiency_range_and_permutation(w, rnd):
    w = np.asarray(w)
    if w.sum() == 0:
        w[0] = 1.0
    p = w / w.sum()
    e = efficiency(p)
    assert -1e-12 <= e <= 1 + 1e-12
    perm = list(range(N_NAV_ACTIONS))
    rnd.shuffle(perm)
    assert math.isclose(efficiency(p[perm]), e, abs_tol=1e-12)


# ---------------------------------------------------------------- lost condition

def test_lost_future_progress(chain5):
    # distances to node 4 along the trace: 4, 3, 4
    tr = make_trace(chain5, [0, 1, 0])
    assert lost_flags(chain5, tr) == [False, True, True]


def test_final_step_always_lost(chain5):
    for nodes in ([0], [3, 4], [4, 4]):
        assert lost_flags(chain5, make_trace(chain5, nodes))[-1]


def test_lost_uses_each_steps_own_target(chain5):
    # subtask towards node 0 for two steps then the main task towards node 4
    tr = make_trace(chain5, [2, 3, 3])
    tr.steps[0].targets = tr.steps[1].targets = (0,)
    # step 0: later nodes 3, 3 are not closer to 0 -> lost
    assert lost_flags(chain5, tr) == [True, True, True]


def test_one_hot_on_teacher_not_uncertain(chain5):
    tr = make_trace(chain5, [1, 2], p=[one_hot(nav_teacher_slot(chain5, Pose(1), [4])), UNIFORM])
    for gamma in (0.0, 0.5, 1.0):
        retrospective_ask_teacher(tr, TeacherConfig(gamma=gamma))
        assert tr.steps[0].reason[1] == 0


def test_uncertain_wrong_fires(chain5):
    wrong = nav_teacher_slot(chain5, Pose(0), [0])  # stop
    p = np.full(N_NAV_ACTIONS, 0.5 / (N_NAV_ACTIONS - 1))
    p[wrong] = 0.5
    tr = make_trace(chain5, [1, 2, 3, 4], p=[p, UNIFORM, UNIFORM, UNIFORM])
    labels = retrospective_ask_teacher(tr)
    assert labels[0] == (True, (0, 1, 1))


def test_never_asked_per_node(chain5):
    tr = make_trace(chain5, [1, 1, 2, 1], asked=[True, False, False, False])
    retrospective_ask_teacher(tr)
    assert [s.reason[2] for s in tr.steps] == [1, 0, 1, 0]


def test_out_of_zone_never_requests(chain5):
    tr = make_trace(chain5, [0, 0, 0], in_zone=False)
    assert all(not a for a, _ in retrospective_ask_teacher(tr))


def test_ask_teacher_requires_distributions(chain5):
    tr = make_trace(chain5, [0, 1])
    tr.steps[1].p_nav = None
    with pytest.raises(ContractError):
        retrospective_ask_teacher(tr)
    with pytest.raises(ContractError):
        retrospective_ask_teacher(EpisodeTrace(None, chain5, []))


@given(st.lists(st.integers(0, 4), min_size=1, max_size=8), st.lists(st.booleans(), min_size=8, max_size=8),
       st.integers(0, 4))
def test_ask_rule_matches_oracle(nodes, asked, target):
    g = chain_graph(5)
    tr = make_trace(g, nodes, targets=(target,), asked=asked[: len(nodes)],
                    p=[one_hot(k % N_NAV_ACTIONS) for k in range(len(nodes))])
    labels = retrospective_ask_teacher(tr)
    d = [abs(v - target) for v in nodes]
    prior = set()
    for t, (lab, (lost, uw, never)) in enumerate(labels):
        assert lost == int(not future_progress(d, t))
        assert uw == 0  # one-hot distributions have zero entropy
        assert never == int(nodes[t] not in prior)
        assert lab == bool((lost or uw) and never)
        if asked[t]:
            prior.add(nodes[t])


def test_teacher_deterministic(env40):
    rng = np.random.default_rng(0)
    nodes = [0]
    for _ in range(12):
        nodes.append(int(rng.choice(env40.adjacency[nodes[-1]])))
    ps = [rng.dirichlet(np.ones(N_NAV_ACTIONS)) for _ in nodes]
    a = retrospective_ask_teacher(make_trace(env40, nodes, targets=(17,), p=ps))
    b = retrospective_ask_teacher(make_trace(env40, nodes, targets=(17,), p=ps))
    assert a == b


# ---------------------------------------------------------------- curiosity set

def test_curiosity_first_visit_empty(chain5):
    tr = label_trace(make_trace(chain5, [0, 1, 2], nav_slots=[5, 5, 5]))
    assert all(curiosity_set(tr, t) == set() for t in range(3))


def test_curiosity_revisit_same_instruction(chain5):
    tr = make_trace(chain5, [2, 1, 2], nav_slots=[5, 1, 5])
    tr.steps[0].teacher_slot = 9
    tr.steps[1].teacher_slot = 1
    tr.steps[2].teacher_slot = 9
    assert curiosity_set(tr, 2) == {5}


def test_curiosity_other_instruction(chain5):
    tr = make_trace(chain5, [2, 1, 2], nav_slots=[5, 1, 5], instr=[-1, -1, 0])
    tr.steps[0].teacher_slot = 9
    assert curiosity_set(tr, 2) == set()


def test_curiosity_ignores_forced_steps(chain5):
    tr = make_trace(chain5, [2, 2], nav_slots=[5, 5])
    tr.steps[0].teacher_slot = 9
    tr.steps[0].nav_decision = False
    assert curiosity_set(tr, 1) == set()


def test_curiosity_out_of_range(chain5):
    with pytest.raises(ContractError):
        curiosity_set(make_trace(chain5, [0]), 3)


@given(st.lists(st.tuples(st.integers(0, 4), st.integers(0, 3)), min_size=1, max_size=10))
def test_curiosity_excludes_reference_actions(seq):
    g = chain_graph(5)
    nodes = [v for v, _ in seq]
    tr = make_trace(g, nodes, nav_slots=[0] * len(nodes))
    label_trace(tr)
    # the agent takes the teacher action whenever the coin says 0, else slot 1 or stop
    for st_, (_, c) in zip(tr.steps, seq):
        st_.nav_slot = st_.teacher_slot if c == 0 else (STOP_SLOT if st_.teacher_slot != STOP_SLOT else 1)
    for t in range(len(nodes)):
        A = curiosity_set(tr, t)
        for u in range(t):
            s = tr.steps[u]
            if s.pose.node == nodes[t] and s.nav_slot == s.teacher_slot:
                assert s.teacher_slot not in A or any(
                    w.pose.node == nodes[t] and w.nav_slot == s.teacher_slot and w.nav_slot != w.teacher_slot
                    for w in tr.steps[:t])
        assert A == {s.nav_slot for s in tr.steps[:t] if s.pose.node == nodes[t] and s.nav_slot != s.teacher_slot}


def test_teacher_config_validates():
    with pytest.raises(ValueError):
        TeacherConfig(gamma=1.5)
    assert TeacherConfig().gamma == 0.25 and TeacherConfig().entropy_base == 37
