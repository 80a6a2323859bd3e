"""Train both networks on the desk suite and compare against the baselines.

The desk suite has five 40-node training environments and two held-out ones.
A short run (a few minutes on one core) already shows the assisted agent
pulling away from the no-help and random baselines; the acceptance run uses
2,000 iterations.

    python3 demos/03_train_and_compare.py --iters 300
    python3 demos/03_train_and_compare.py --iters 2000 --alpha 0   # no curiosity term
"""
import argparse
import logging
import time

from assistnav.evaluation import compute_metrics, report_table, run_policy
from assistnav.suite import desk_suite
from assistnav.training import TrainConfig, train

ap = argparse.ArgumentParser()
ap.add_argument("--iters", type=int, default=300)
ap.add_argument("--alpha", type=float, default=1.0)
ap.add_argument("--split", default="test_seen")
ap.add_argument("--curve")
args = ap.parse_args()
logging.basicConfig(level=logging.INFO, format="%(message)s")

world, ds = desk_suite()
print("splits: " + ", ".join(f"{k}={len(v)}" for k, v in ds.splits.items()))
t0 = time.time()
res = train(world, ds.splits["train"], TrainConfig(alpha=args.alpha, iterations=args.iters),
            eval_tasks=ds.splits["val_seen"][:50], curve_path=args.curve)
print(f"trained {args.iters} iterations in {time.time() - t0:.0f} s; "
      f"last losses: " + ", ".join(f"{k} {v:.3f}" for k, v in res.curve[-1].items()
                                   if k.startswith("L_") and v != ""))

tasks = ds.splits[args.split]
rows = []
for name in ("learned", "no_ask", "random_ask", "ask_every_k", "forward_k", "random_walk", "shortest"):
    rep = compute_metrics(run_policy(name, world, tasks, res.nav, res.ask, res.cfg), tasks, world)
    rows.append(rep.row(args.split, name))
print()
print(report_table(rows))
