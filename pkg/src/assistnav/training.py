"""Imitation learning of the navigation and help-request networks.

Each iteration rolls out a batch of episodes with sampled actions, lets the
retrospective teachers label the finished traces, and takes one Adam step on
    L = L_nav_NL + alpha * L_curious + L_ask_NL + L_reason.
"""
from __future__ import annotations

import csv
import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from . import layers as L
from . import model as M
from .env import ContractError, SimConfig, Task
from .rollout import EpisodeSpec, StepCache, World, make_policies, rollout
from .teachers import EpisodeTrace, TeacherConfig, curiosity_set, label_trace

log = logging.getLogger(__name__)

CURVE_FIELDS = ("iteration", "L_nav_NL", "L_curious", "L_ask_NL", "L_reason", "eval_SR", "eval_SPL")
LOG_FLOOR = 1e-300


class TrainingAborted(RuntimeError):
    def __init__(self, msg: str, iteration: int | None = None):
        super().__init__(msg if iteration is None else f"iteration {iteration}: {msg}")
        self.iteration = iteration


@dataclass(frozen=True)
class TrainConfig:
    alpha: float = 1.0
    lr: float = 1e-4
    iterations: int = 2000
    batch_size: int = 32
    train_steps: int = 20
    eval_steps: int = 50
    seed: int = 0
    eval_every: int = 0  # 0 disables periodic evaluation
    gamma: float = 0.25

    def __post_init__(self):
        if self.alpha < 0:
            raise ValueError("alpha must be non-negative")
        if self.lr <= 0:
            raise ValueError("learning rate must be positive")
        if self.iterations < 0 or self.batch_size < 1:
            raise ValueError("iterations must be >= 0 and batch size >= 1")


@dataclass(frozen=True)
class LossBreakdown:
    L_nav_NL: float
    L_curious: float
    L_ask_NL: float
    L_reason: float
    alpha: float = 1.0

    @property
    def total(self) -> float:
        return self.L_nav_NL + self.alpha * self.L_curious + self.L_ask_NL + self.L_reason


def _log(p) -> float:
    return math.log(max(float(p), LOG_FLOOR))


def _bce(p: np.ndarray, y) -> float:
    p = np.clip(np.asarray(p, float), LOG_FLOOR, 1.0 - 1e-16)
    y = np.asarray(y, float)
    return float(-(y * np.log(p) + (1 - y) * np.log1p(-p)).mean())


def compute_losses(traces: Sequence[EpisodeTrace], alpha: float = 1.0, ask: bool = True) -> LossBreakdown:
    """Loss terms from labelled traces and the distributions they recorded.

    Navigation terms average over steps where the navigation policy chose
    the action (forced moves excluded); help-request terms average over all
    steps.
    """
    nav_nl, cur, n_nav = 0.0, 0.0, 0
    ask_nl, reason, n_all = 0.0, 0.0, 0
    for tr in traces:
        for t, st in enumerate(tr.steps):
            if st.teacher_slot is None:
                raise ContractError("trace is not labelled")
            if st.nav_decision:
                n_nav += 1
                nav_nl -= _log(st.p_nav[st.teacher_slot])
                A = curiosity_set(tr, t)
                if A:
                    cur += sum(_log(st.p_nav[a]) for a in A) / len(A)
            if ask:
                if st.p_ask is None or st.ask_label is None:
                    raise ContractError("trace lacks help-request outputs or labels")
                n_all += 1
                ask_nl -= _log(st.p_ask[int(st.ask_label)])
                reason += _bce(st.p_reason, st.reason)
    return LossBreakdown(
        nav_nl / max(n_nav, 1), cur / max(n_nav, 1), ask_nl / max(n_all, 1), reason / max(n_all, 1), alpha
    )


def loss_seeds(traces, caches: list[StepCache], alpha: float, network: str):
    """dLoss/dlogP (and dLoss/d reason logits) for each cached forward step."""
    n_nav = sum(st.nav_decision for tr in traces for st in tr.steps)
    n_all = sum(len(tr) for tr in traces)
    out = []
    for c in caches:
        dlogp = np.zeros_like(c.logp)
        dz = None if c.reason_logit is None else np.zeros_like(c.reason_logit)
        for r, (i, t) in enumerate(zip(c.rows, c.ts)):
            st = traces[i].steps[t]
            if network == "nav":
                if not st.nav_decision:
                    continue
                dlogp[r, st.teacher_slot] -= 1.0 / n_nav
                A = curiosity_set(traces[i], t)
                for a in A:
                    dlogp[r, a] += alpha / (n_nav * len(A))
            else:
                dlogp[r, int(st.ask_label)] -= 1.0 / n_all
                dz[r] = (L.sigmoid(c.reason_logit[r]) - np.asarray(st.reason, float)) / (3.0 * n_all)
        out.append((dlogp, dz))
    return out


def accumulate_gradients(P, caches, seeds) -> dict[str, np.ndarray]:
    grads = M.zero_grads(P)
    for c, (dlogp, dz) in zip(caches, seeds):
        if not dlogp.any() and (dz is None or not dz.any()):
            continue
        M.backward_gradients(P, c.cache, dlogp, dz, grads)
    return grads


class Adam:
    def __init__(self, lr: float = 1e-4, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}
        self.t = 0

    def step(self, params: dict, grads: dict) -> None:
        adam_step(params, grads, self)


def adam_step(params: dict, grads: dict, state: Adam) -> None:
    """In-place Adam update with bias correction; rejects non-finite gradients."""
    for k, g in grads.items():
        if k not in params or params[k].shape != g.shape:
            raise ContractError(f"gradient {k} does not match a parameter")
        if not np.isfinite(g).all():
            raise TrainingAborted(f"non-finite gradient for {k}")
    state.t += 1
    b1, b2 = state.beta1, state.beta2
    c1, c2 = 1.0 - b1**state.t, 1.0 - b2**state.t
    for k, g in grads.items():
        m = state.m.setdefault(k, np.zeros_like(g))
        v = state.v.setdefault(k, np.zeros_like(g))
        m *= b1
        m += (1 - b1) * g
        v *= b2
        v += (1 - b2) * g * g
        params[k] -= state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)


@dataclass
class TrainResult:
    cfg: M.ModelConfig
    nav: dict
    ask: dict
    curve: list[dict] = field(default_factory=list)


def train_iteration(world: World, tasks: Sequence[Task], nav_P, ask_P, mcfg, tcfg: TrainConfig, it: int,
                    opt_nav: Adam, opt_ask: Adam, sim: SimConfig) -> LossBreakdown:
    rng = np.random.default_rng([tcfg.seed, it, 1])
    pick = rng.integers(0, len(tasks), tcfg.batch_size)
    specs = [world.spec(tasks[k], seed=[tcfg.seed, it, b, 2]) for b, k in enumerate(pick)]
    drop = L.Dropout(mcfg.dropout, np.random.default_rng([tcfg.seed, it, 3]), training=True)
    nav, ask = make_policies("learned", nav_P, ask_P, mcfg, greedy=False, drop=drop, keep_cache=True)
    traces = rollout(specs, nav, ask, world.vocab, sim, budget=tcfg.train_steps, compat=mcfg.orientation_compat)
    tc = TeacherConfig(gamma=tcfg.gamma)
    for tr in traces:
        label_trace(tr, tc)
    losses = compute_losses(traces, tcfg.alpha)
    if not math.isfinite(losses.total):
        raise TrainingAborted("non-finite loss", it)
    g_nav = accumulate_gradients(nav_P, nav.caches, loss_seeds(traces, nav.caches, tcfg.alpha, "nav"))
    g_ask = accumulate_gradients(ask_P, ask.caches, loss_seeds(traces, ask.caches, tcfg.alpha, "ask"))
    try:
        opt_nav.step(nav_P, g_nav)
        opt_ask.step(ask_P, g_ask)
    except TrainingAborted as exc:
        raise TrainingAborted(str(exc), it) from None
    return losses


def train(
    world: World,
    tasks: Sequence[Task],
    tcfg: TrainConfig = TrainConfig(),
    mcfg: M.ModelConfig | None = None,
    sim: SimConfig = SimConfig(),
    eval_tasks: Sequence[Task] = (),
    curve_path=None,
    init: tuple[dict, dict] | None = None,
) -> TrainResult:
    if not tasks:
        raise ContractError("no training tasks")
    mcfg = mcfg or M.ModelConfig(vocab_size=len(world.vocab), feature_dim=sim.feature_dim)
    if init is None:
        rng = np.random.default_rng([tcfg.seed, 0])
        nav_P, ask_P = M.init_params(mcfg, False, rng), M.init_params(mcfg, True, rng)
    else:
        nav_P, ask_P = ({k: v.copy() for k, v in d.items()} for d in init)
    opt_nav, opt_ask = Adam(tcfg.lr), Adam(tcfg.lr)
    res = TrainResult(mcfg, nav_P, ask_P)

    def evaluate_now():
        from .evaluation import compute_metrics, run_policy

        traces = run_policy("learned", world, eval_tasks, nav_P, ask_P, mcfg, sim, budget=tcfg.eval_steps)
        rep = compute_metrics(traces, eval_tasks, world)
        return rep.SR, rep.SPL

    writer = None
    fh = None
    if curve_path is not None:
        fh = open(curve_path, "w", newline="")
        writer = csv.DictWriter(fh, fieldnames=CURVE_FIELDS)
        writer.writeheader()
    try:
        for it in range(tcfg.iterations):
            losses = train_iteration(world, tasks, nav_P, ask_P, mcfg, tcfg, it, opt_nav, opt_ask, sim)
            row = {k: getattr(losses, k) for k in CURVE_FIELDS[1:5]}
            row.update(iteration=it, eval_SR="", eval_SPL="")
            last = it == tcfg.iterations - 1
            if eval_tasks and ((tcfg.eval_every and it % tcfg.eval_every == 0) or last):
                row["eval_SR"], row["eval_SPL"] = evaluate_now()
                log.info("iteration %d loss %.4f SR %.2f SPL %.2f", it, losses.total, row["eval_SR"], row["eval_SPL"])
            res.curve.append(row)
            if writer:
                writer.writerow(row)
                fh.flush()
    finally:
        if fh:
            fh.close()
    return res


def config_dict(tcfg: TrainConfig) -> dict:
    return asdict(tcfg)
