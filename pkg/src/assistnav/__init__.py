"""Language-assisted navigation with a simulated route-following assistant.

Graph environments with panoramic observations, an assistant defined by
language-assisted routes, retrospective teachers, numpy policy networks with
hand-written gradients, imitation training and evaluation.
"""
from .anna import RouteSystem, Vocab, build_route_system, compose_plan, respond
from .env import (
    ContractError,
    EnvFormatError,
    EnvironmentGraph,
    NavAction,
    Pose,
    SimConfig,
    Task,
    generate_environment,
    load_graph,
    save_graph,
)
from .evaluation import EvalReport, TaskDataset, compute_metrics, generate_tasks, run_baseline, run_policy
from .model import ModelConfig, load_checkpoint, save_checkpoint
from .rollout import World
from .training import LossBreakdown, TrainConfig, train

__version__ = "0.1.0"
