"""How the help-request teacher labels a finished episode.

An agent wanders on a 5-node chain towards node 4: it steps forward, hesitates,
backs off, then comes back. After the episode is over, every step gets its
reasons (lost, uncertain_wrong, never_asked) and a request/no-request label.

    python3 demos/02_retrospective_teacher.py
"""
import numpy as np

from assistnav.env import N_NAV_ACTIONS, Pose, chain_graph
from assistnav.teachers import (
    MAIN_TASK,
    EpisodeTrace,
    StepRecord,
    efficiency,
    nav_teacher_slot,
    retrospective_ask_teacher,
)

g = chain_graph(5)
walk = [0, 1, 1, 0, 1, 2]
asked = [False, False, True, False, False, False]
rng = np.random.default_rng(0)

steps = []
for v, a in zip(walk, asked):
    if v < 2:  # unsure near the start
        p = rng.dirichlet(np.full(N_NAV_ACTIONS, 0.3))
    else:  # confident and right once it is on its way
        p = np.full(N_NAV_ACTIONS, 0.01 / (N_NAV_ACTIONS - 1))
        p[nav_teacher_slot(g, Pose(v), [4])] = 0.99
    steps.append(StepRecord(Pose(v), -1, MAIN_TASK, (4,), False, True, p, asked=a))
trace = EpisodeTrace(None, g, steps)

labels = retrospective_ask_teacher(trace)
print("step node asked efficiency  lost unc_wrong never -> request?")
for t, (st, (lab, (lost, uw, never))) in enumerate(zip(steps, labels)):
    print(f"{t:4d} {st.pose.node:4d} {str(st.asked):5s} {efficiency(st.p_nav):10.3f}  "
          f"{lost:4d} {uw:9d} {never:5d} -> {'request' if lab else '-'}")
print("\nThe agent is 'lost' at step t when no later step gets strictly closer to the goal;")
print("help is requested only where it never asked before and some reason fires.")
print("The final step is always lost: nothing comes after it.")
