"""The fixed-seed desk-scale benchmark used by the demos and the acceptance tests."""
from __future__ import annotations

from dataclasses import dataclass

from .env import SimConfig, generate_environment
from .evaluation import TaskDataset, generate_tasks
from .rollout import World


@dataclass(frozen=True)
class SuiteConfig:
    n_train_envs: int = 5
    n_unseen_envs: int = 2
    n_nodes: int = 40
    n_train_tasks: int = 1000
    n_eval_tasks: int = 200
    env_seed: int = 100
    task_seed: int = 0


def desk_suite(cfg: SuiteConfig = SuiteConfig(), sim: SimConfig = SimConfig()) -> tuple[World, TaskDataset]:
    seen = {f"seen{i:02d}": generate_environment(cfg.n_nodes, seed=cfg.env_seed + i, name=f"seen{i:02d}")
            for i in range(cfg.n_train_envs)}
    unseen = {f"unseen{i:02d}": generate_environment(cfg.n_nodes, seed=cfg.env_seed + 1000 + i, name=f"unseen{i:02d}")
              for i in range(cfg.n_unseen_envs)}
    counts = dict(train=cfg.n_train_tasks, val_seen=cfg.n_eval_tasks, val_unseen=cfg.n_eval_tasks,
                  test_seen=cfg.n_eval_tasks, test_unseen=cfg.n_eval_tasks)
    ds = generate_tasks(seen, unseen, counts, cfg.task_seed, sim)
    return World.build({**seen, **unseen}), ds
