import csv
import json
from collections import deque

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from assistnav import model as M
from assistnav.cli import main
from assistnav.env import ContractError, Pose, SimConfig, Task, chain_graph, generate_environment, goal_set
from assistnav.evaluation import (
    REPORT_FIELDS,
    SPLITS,
    TaskDataset,
    compute_metrics,
    feasible_pairs,
    generate_tasks,
    read_report_csv,
    reason_metrics,
    replay_outcomes,
    report_csv,
    report_table,
    run_policy,
    spl_term,
)
from assistnav.rollout import RandomAsk, RandomWalkNav, World, rollout
from assistnav.teachers import MAIN_TASK, EpisodeTrace, StepRecord

SIM = SimConfig()


def bfs_hops(g, s):
    d = {s: 0}
    q = deque([s])
    while q:
        u = q.popleft()
        for v in g.adjacency[u]:
            if v not in d:
                d[v] = d[u] + 1
                q.append(v)
    return d


def fake_trace(task, g, final, travel):
    st_ = StepRecord(Pose(task.start.node), -1, MAIN_TASK, task.goals, False, False, teacher_slot=36,
                     ask_label=False, reason=(0, 0, 0))
    return EpisodeTrace(task, g, [st_], Pose(final), travel, True, 0)


@pytest.fixture(scope="module")
def world40():
    graphs = {"a": generate_environment(40, seed=11, name="a"), "b": generate_environment(40, seed=12, name="b")}
    return World.build(graphs), graphs


# ---------------------------------------------------------------- SPL

@pytest.mark.parametrize("ok,L,P,want", [(True, 10.0, 10.0, 1.0), (False, 10.0, 10.0, 0.0),
                                         (False, 10.0, 3.0, 0.0), (True, 10.0, 20.0, 0.5)])
def test_spl_term_examples(ok, L, P, want):
    assert spl_term(ok, L, P) == want


def spl_case(final, travel):
    g = chain_graph(11)
    task = Task("t", "c", 0, Pose(0), (10,))
    return compute_metrics([fake_trace(task, g, final, travel)], [task], g)


def test_spl_metric_examples():
    assert spl_case(10, 10.0).SPL == 100.0
    assert spl_case(7, 7.0).SPL == 0.0
    rep = spl_case(10, 20.0)
    assert rep.SPL == 50.0 and rep.SR == 100.0 and rep.nav_error == 0.0
    assert spl_case(7, 7.0).nav_error == pytest.approx(3.0)


def test_spl_length_uses_goal_nearest_final_location():
    # goals at both ends; the agent finishes at node 0, so L is measured to node 0
    g = chain_graph(11)
    task = Task("t", "c", 0, Pose(4), (0, 10))
    rep = compute_metrics([fake_trace(task, g, 0, 8.0)], [task], g)
    assert rep.per_task[0]["shortest"] == pytest.approx(4.0)
    assert rep.SPL == pytest.approx(50.0)


@given(st.lists(st.tuples(st.booleans(), st.floats(0.5, 20), st.floats(0, 60)), min_size=1, max_size=30))
def test_spl_never_exceeds_sr(rows):
    terms = [spl_term(ok, L, P) for ok, L, P in rows]
    assert all(0.0 <= t <= float(ok) for t, (ok, _, _) in zip(terms, rows))
    assert np.mean(terms) <= np.mean([ok for ok, _, _ in rows])


def test_metric_contract_errors():
    g = chain_graph(11)
    task = Task("t", "c", 0, Pose(0), (10,))
    with pytest.raises(ContractError):
        compute_metrics([], [task], g)
    other = Task("u", "c", 0, Pose(1), (10,))
    with pytest.raises(ContractError):
        compute_metrics([fake_trace(other, g, 10, 9.0)], [task], g)


def test_help_request_repeat_counts_visits_under_the_same_task():
    g = chain_graph(11)
    task = Task("t", "c", 0, Pose(0), (10,))

    def rec(node, instr, asked):
        return StepRecord(Pose(node), instr, MAIN_TASK, (10,), False, True, teacher_slot=36, ask_label=False,
                          reason=(0, 0, 0), asked=asked)

    # node 2 seen in the main task (-1), then under route 0; requests at node 2 in each
    steps = [rec(2, -1, False), rec(3, -1, True), rec(2, 0, True), rec(3, 0, False), rec(2, -1, True)]
    tr = EpisodeTrace(task, g, steps, Pose(2), 3.0, True, 3)
    rep = compute_metrics([tr], [task], g)
    # request at 3 (first visit): no; at 2 under route 0 (only seen in the main task): no; at 2 in main: yes
    assert rep.help_request_repeat == pytest.approx(100.0 / 3)


# ---------------------------------------------------------------- reasons

def test_reason_metrics_perfect_and_degenerate():
    y = np.array([[1, 0, 1], [0, 0, 1], [1, 0, 0]])
    m = reason_metrics(y.astype(float), y)
    assert all(m[k]["accuracy"] == 1.0 for k in m)
    assert [m[k]["f1"] for k in m] == [1.0, 0.0, 1.0]  # column 2 has no positives: ratios default to 0


def test_reason_metrics_confusion_counts():
    # one each of TP, FP, FN, TN on every condition
    pred = np.repeat([[0.9], [0.8], [0.1], [0.2]], 3, axis=1)
    true = np.repeat([[1], [0], [1], [0]], 3, axis=1)
    for v in reason_metrics(pred, true).values():
        assert v == dict(accuracy=0.5, precision=0.5, recall=0.5, f1=0.5)


# ---------------------------------------------------------------- baselines

def test_random_ask_rate(world40):
    world, _ = world40
    ds = generate_tasks({"a": world.graph("a")}, {}, dict(train=400), seed=3)
    in_zone = asked = 0
    i = 0
    while in_zone < 10000:
        specs = [world.spec(t, seed=[7, i, j], budget=50) for j, t in enumerate(ds.splits["train"])]
        for tr in rollout(specs, RandomWalkNav(), RandomAsk(0.2), world.vocab, SIM):
            for s in tr.steps:
                in_zone += s.in_zone
                asked += s.asked
                assert s.in_zone or not s.asked
        i += 1
    assert abs(asked / in_zone - 0.2) <= 0.01


def test_no_ask_never_requests(world40):
    world, graphs = world40
    ds = generate_tasks(graphs, {}, dict(test_seen=30), seed=4)
    cfg = M.ModelConfig(vocab_size=len(world.vocab), hidden=8)
    rng = np.random.default_rng(0)
    nav, ask = M.init_params(cfg, False, rng), M.init_params(cfg, True, rng)
    traces = run_policy("no_ask", world, ds.splits["test_seen"], nav, ask, cfg)
    assert compute_metrics(traces, ds.splits["test_seen"], world).requests_per_task == 0.0


def test_shortest_reaches_every_goal_and_replay_agrees(world40):
    world, graphs = world40
    tasks = generate_tasks(graphs, {}, dict(test_seen=60), seed=5).splits["test_seen"]
    traces = run_policy("shortest", world, tasks)
    rep = compute_metrics(traces, tasks, world)
    assert (rep.SR, rep.SPL, rep.nav_error) == (100.0, 100.0, 0.0)
    assert replay_outcomes(traces, tasks, world) == (rep.SR, rep.nav_error)


@pytest.mark.parametrize("name", ["random_walk", "forward_k", "random_ask", "ask_every_k", "perfect"])
def test_every_baseline_report_is_consistent(world40, name):
    world, graphs = world40
    tasks = generate_tasks(graphs, {}, dict(test_seen=20), seed=6).splits["test_seen"]
    cfg = M.ModelConfig(vocab_size=len(world.vocab), hidden=8)
    rng = np.random.default_rng(1)
    nav, ask = M.init_params(cfg, False, rng), M.init_params(cfg, True, rng)
    traces = run_policy(name, world, tasks, nav, ask, cfg)
    rep = compute_metrics(traces, tasks, world)
    assert 0.0 <= rep.SPL <= rep.SR <= 100.0
    assert replay_outcomes(traces, tasks, world) == pytest.approx((rep.SR, rep.nav_error))


def test_unknown_policy():
    with pytest.raises(ContractError):
        run_policy("teleport", None, [])


# ---------------------------------------------------------------- task sets

def test_generated_tasks_satisfy_hop_constraint(world40):
    _, graphs = world40
    ds = generate_tasks({"a": graphs["a"]}, {"b": graphs["b"]}, 50, seed=0)
    assert ds.envs["train"] == ["a"] and ds.envs["test_unseen"] == ["b"]
    for split, tasks in ds.splits.items():
        assert len(tasks) == 50
        for t in tasks:
            g = graphs[t.env]
            assert t.goals == goal_set(g, t.object_type, SIM.success_radius)
            hops = bfs_hops(g, t.start.node)
            assert 5 <= min(hops[v] for v in t.goals if v in hops) <= 15
            assert (t.env == "b") == (split in ("val_unseen", "test_unseen"))


def test_feasible_pairs_match_bfs(world40):
    _, graphs = world40
    g = graphs["a"]
    want = []
    for ot in g.object_types:
        goals = goal_set(g, ot, SIM.success_radius)
        for s in range(g.n_nodes):
            h = bfs_hops(g, s)
            if 5 <= min(h.get(v, 10**9) for v in goals) <= 15:
                want.append((s, ot))
    assert feasible_pairs(g) == sorted(want)


def test_task_generation_deterministic_and_roundtrips(world40, tmp_path):
    _, graphs = world40
    a = generate_tasks({"a": graphs["a"]}, {"b": graphs["b"]}, 10, seed=9)
    b = generate_tasks({"a": graphs["a"]}, {"b": graphs["b"]}, 10, seed=9)
    c = generate_tasks({"a": graphs["a"]}, {"b": graphs["b"]}, 10, seed=10)
    assert a.to_json() == b.to_json() != c.to_json()
    a.save(tmp_path / "t.json")
    assert TaskDataset.load(tmp_path / "t.json").to_json() == a.to_json()


def test_task_generation_errors(world40, tmp_path):
    _, graphs = world40
    with pytest.raises(ContractError, match="overlap"):
        generate_tasks(graphs, {"a": graphs["a"]}, 5)
    with pytest.raises(ContractError, match="no feasible"):
        generate_tasks({"c": chain_graph(3, objects=[(2, 0)])}, {}, dict(train=5))
    (tmp_path / "bad.json").write_text('{"splits": \n [}')
    from assistnav.env import EnvFormatError
    with pytest.raises(EnvFormatError, match=r"bad.json:2:"):
        TaskDataset.load(tmp_path / "bad.json")


# ---------------------------------------------------------------- reports

def test_report_csv_and_table(tmp_path):
    row = dict(split="test_seen", policy="shortest", n_tasks=2, SR=100.0, SPL=87.5, nav_error=0.0,
               requests_per_task=1.25, nav_mistake_repeat=0.0, help_request_repeat=33.33333333333333)
    text = report_csv([row])
    assert text.splitlines()[0] == ",".join(REPORT_FIELDS)
    (tmp_path / "r.csv").write_text(text)
    back = read_report_csv(tmp_path / "r.csv")
    assert float(back[0]["help_request_repeat"]) == row["help_request_repeat"]  # full precision kept
    table = report_table(back).splitlines()
    assert table[0].startswith("| split | policy | SR | SPL")
    assert table[2] == "| test_seen | shortest | 100.00 | 87.50 | 0.00 | 1.25 | 0.00 | 33.33 |"


# ---------------------------------------------------------------- command line

def test_cli_end_to_end(tmp_path, capsys):
    envs, routes = tmp_path / "envs", tmp_path / "routes"
    envs.mkdir()
    routes.mkdir()
    for i, seed in enumerate((11, 12, 13)):
        assert main(["gen-env", "--nodes", "40", "--seed", str(seed), "--out", str(envs / f"e{i}.json")]) == 0
        assert main(["build-routes", "--env", str(envs / f"e{i}.json"), "--out", str(routes / f"e{i}.json"),
                     "--vocab", str(routes / "vocab.json")]) == 0
    tasks = tmp_path / "tasks.json"
    assert main(["gen-tasks", "--envs", str(envs), "--per-split", "6", "--unseen-fraction", "0.34",
                 "--seed", "1", "--out", str(tasks)]) == 0
    ds = TaskDataset.load(tasks)
    assert set(ds.envs["train"]).isdisjoint(ds.envs["test_unseen"]) and list(ds.splits) == list(SPLITS)
    ck = tmp_path / "ck.npz"
    assert main(["train", "--envs", str(envs), "--routes", str(routes), "--tasks", str(tasks), "--iters", "2",
                 "--batch", "2", "--hidden", "8", "--eval-tasks", "2", "--out", str(ck)]) == 0
    curve = list(csv.DictReader(open(tmp_path / "ck.curve.csv")))
    assert len(curve) == 2 and curve[-1]["eval_SR"] != ""
    reports = []
    for pol in ("learned", "shortest", "random_walk"):
        out = tmp_path / f"{pol}.csv"
        assert main(["eval", "--ckpt", str(ck), "--tasks", str(tasks), "--split", "test_unseen", "--policy", pol,
                     "--report", str(out), "--json", str(tmp_path / f"{pol}.json")]) == 0
        reports.append(str(out))
        rep = json.loads((tmp_path / f"{pol}.json").read_text())
        assert rep["n_tasks"] == 6 and rep["SPL"] <= rep["SR"]
    assert read_report_csv(tmp_path / "shortest.csv")[0]["SR"] == "100.0"
    assert main(["report", "--inputs", *reports, "--out", str(tmp_path / "table.md")]) == 0
    assert len((tmp_path / "table.md").read_text().splitlines()) == 2 + 3


def test_cli_error_exit_codes(tmp_path, capsys):
    assert main(["build-routes", "--env", str(tmp_path / "missing.json"), "--out", str(tmp_path / "r.json")]) == 2
    (tmp_path / "bad.json").write_text("{\n  nodes: 1\n}\n")
    assert main(["build-routes", "--env", str(tmp_path / "bad.json"), "--out", str(tmp_path / "r.json")]) == 2
    assert "bad.json:2" in capsys.readouterr().err
    assert main(["eval", "--tasks", str(tmp_path / "t.json"), "--report", str(tmp_path / "r.csv"),
                 "--policy", "shortest"]) == 2
    (tmp_path / "x.csv").write_text("a,b\n1,2\n")
    assert main(["report", "--inputs", str(tmp_path / "x.csv"), "--out", str(tmp_path / "o.md")]) == 2
