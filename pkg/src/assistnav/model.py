"""Hierarchical memory-augmented navigation and help-request networks.

One forward step maps batched per-episode inputs (instruction tokens, the
current and target panoramas, memories from earlier steps) to an action
distribution plus the new recurrent states. Memory entries written at
earlier steps enter as constants, so the backward pass of one step is exact
for that step and truncated at memory reads.
"""
from __future__ import annotations

import io
import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from . import layers as L
from .env import N_NAV_ACTIONS, N_VIEWS, STOP_SLOT, ContractError, EnvironmentGraph, NavAction, Pose, slot_angles
from .env import ANGLE_STEP

CHECKPOINT_FORMAT = "assistnav-checkpoint"
CHECKPOINT_VERSION = 1
N_ASK_ACTIONS = 2  # 0 = do_nothing, 1 = request_help
DO_NOTHING, REQUEST_HELP = 0, 1
N_REASONS = 3
ORIENT_DIM = 4


@dataclass(frozen=True)
class ModelConfig:
    vocab_size: int
    hidden: int = 32
    heads: int = 2
    feature_dim: int = 32
    action_dim: int = 32
    ffn_mult: int = 4
    dropout: float = 0.3
    max_len: int = 50
    orientation_compat: bool = False  # literal published feature [sin, cos, sin dw, sin dw]

    def __post_init__(self):
        if self.hidden % self.heads:
            raise ValueError("hidden size must be divisible by the number of heads")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError("dropout must lie in [0, 1)")

    @property
    def act_in(self) -> int:
        return self.feature_dim + ORIENT_DIM

    def to_json(self) -> dict:
        return asdict(self)

    @classmethod
    def from_json(cls, d: dict) -> "ModelConfig":
        return cls(**d)


# --------------------------------------------------------------------------
# parameters


def parameter_shapes(cfg: ModelConfig, ask: bool) -> dict[str, tuple[int, ...]]:
    H, F, A, D = cfg.hidden, cfg.feature_dim, cfg.act_in, cfg.action_dim
    Hf = cfg.ffn_mult * H
    s: dict[str, tuple[int, ...]] = {"emb": (cfg.vocab_size, H)}

    def attn(p):
        for k in ("Wq", "Wk", "Wv", "Wo"):
            s[f"{p}.{k}"] = (H, H)
        s[f"{p}.ln.g"] = (H,)
        s[f"{p}.ln.b"] = (H,)

    def ffn(p):
        s[f"{p}.W1"], s[f"{p}.b1"] = (Hf, H), (Hf,)
        s[f"{p}.W2"], s[f"{p}.b2"] = (H, Hf), (H,)
        s[f"{p}.ln.g"] = (H,)
        s[f"{p}.ln.b"] = (H,)

    attn("enc.attn")
    ffn("enc.ffn")
    for p, fan in (("inc.loc", H), ("inc.glob", 2 * H)):
        s[f"{p}.W"], s[f"{p}.b"] = (H, fan), (H,)
        s[f"{p}.ln.g"], s[f"{p}.ln.b"] = (H,), (H,)
    s["dot.inter.W"] = (F, H)
    s["W_inter"] = (H, F + A + N_VIEWS)
    attn("inter.attn")
    attn("text.attn")
    ffn("text.ffn")
    s["dot.cur.W"] = (F, H)
    s["dot.tgt.W"] = (F, H)
    s["W_intra"] = (H, H + 2 * F + N_VIEWS + (N_NAV_ACTIONS if ask else 0))
    attn("intra.attn")
    ffn("intra.ffn")
    s["gate.W"], s["gate.b"] = (H, 2 * H), (H,)
    s["out.W"] = (D, H)
    if ask:
        s["ask.E"] = (N_ASK_ACTIONS, D)
        s["reason.E"], s["reason.b"] = (N_REASONS, H), (N_REASONS,)
    else:
        s["act.W"] = (D, A)
    return s


def init_params(cfg: ModelConfig, ask: bool, rng: np.random.Generator) -> dict[str, np.ndarray]:
    P = {}
    for name, shape in parameter_shapes(cfg, ask).items():
        if name.endswith(".ln.g"):
            P[name] = np.ones(shape)
        elif name.endswith(".ln.b") or (len(shape) == 1 and not name.startswith("inc.")):
            P[name] = np.zeros(shape)
        elif len(shape) == 1:
            # time operators start from the zero vector; a non-zero bias keeps them off the ReLU kink
            P[name] = rng.normal(0.0, 0.5, shape)
        elif name == "emb":
            P[name] = rng.normal(0.0, 1.0, shape)
        else:
            P[name] = rng.normal(0.0, 1.0 / math.sqrt(shape[1]), shape)
    return P


def validate_params(P: dict, cfg: ModelConfig, ask: bool) -> None:
    want = parameter_shapes(cfg, ask)
    missing = sorted(set(want) - set(P))
    extra = sorted(set(P) - set(want))
    if missing or extra:
        raise ContractError(f"parameter names differ: missing {missing}, unexpected {extra}")
    for k, shp in want.items():
        if tuple(P[k].shape) != shp:
            raise ContractError(f"parameter {k} has shape {P[k].shape}, expected {shp}")


def zero_grads(P: dict) -> dict[str, np.ndarray]:
    return {k: np.zeros_like(v) for k, v in P.items()}


# --------------------------------------------------------------------------
# feature helpers


def sinusoid_table(length: int, dim: int) -> np.ndarray:
    pos = np.arange(length)[:, None]
    i = np.arange(dim)[None, :]
    ang = pos / np.power(10000.0, (2 * (i // 2)) / dim)
    return np.where(i % 2 == 0, np.sin(ang), np.cos(ang))


def target_similarity(cur: np.ndarray | None, tgt: np.ndarray | None) -> np.ndarray:
    """delta_i = max_j cos(cur_i, tgt_j); zeros when no target view is active."""
    if tgt is None or cur is None:
        n = N_VIEWS if cur is None else cur.shape[-2]
        return np.zeros(n)
    return L.cosine_matrix(cur, tgt).max(-1)


def orientation_features(dpsi: float, domega: float, compat: bool = False) -> np.ndarray:
    last = math.sin(domega) if compat else math.cos(domega)
    return np.array([math.sin(dpsi), math.cos(dpsi), math.sin(domega), last])


def action_embeddings(
    g: EnvironmentGraph, pose: Pose, views: np.ndarray, compat: bool = False
) -> tuple[np.ndarray, np.ndarray]:
    """(37, F+4) embedding table and validity mask for the panoramic actions.

    A slot holding a neighbour is its view feature followed by the relative
    orientation of that slot; empty slots and Stop are zero rows.
    """
    F = views.shape[1]
    E = np.zeros((N_NAV_ACTIONS, F + ORIENT_DIM))
    mask = np.zeros(N_NAV_ACTIONS, dtype=bool)
    mask[STOP_SLOT] = True
    for slot in g.layout(pose.node):
        h, e = slot_angles(slot)
        E[slot, :F] = views[slot]
        E[slot, F:] = orientation_features((h - pose.heading) * ANGLE_STEP, (e - pose.elevation) * ANGLE_STEP, compat)
        mask[slot] = True
    return E, mask


def executed_action_embedding(
    g: EnvironmentGraph, pose: Pose, views: np.ndarray, action: NavAction, compat: bool = False
) -> np.ndarray:
    """Embedding of an executed action, used as the next step's a_{t-1} input."""
    F = views.shape[1]
    out = np.zeros(F + ORIENT_DIM)
    if action.is_stop:
        return out
    if action.target != pose.node:
        slot = next(s for s, v in g.layout(pose.node).items() if v == action.target)
        out[:F] = views[slot]
    out[F:] = orientation_features(action.dpsi_rad, action.domega_rad, compat)
    return out


# --------------------------------------------------------------------------
# batched step inputs and per-episode memory


@dataclass
class StepInputs:
    tokens: np.ndarray  # (N, Lt) int
    tmask: np.ndarray  # (N, Lt) bool
    cur: np.ndarray  # (N, 36, F)
    tgt: np.ndarray  # (N, 36, F)
    tgt_mask: np.ndarray  # (N, 36) bool, all False without a target
    delta: np.ndarray  # (N, 36)
    prev_action: np.ndarray  # (N, F+4)
    h_inter_prev: np.ndarray  # (N, H)
    eta_loc_prev: np.ndarray  # (N, H)
    eta_glob_prev: np.ndarray  # (N, H)
    inter_K: np.ndarray  # (N, Mi, H)
    inter_V: np.ndarray
    inter_mask: np.ndarray  # (N, Mi)
    intra_K: np.ndarray  # (N, Ms, H)
    intra_V: np.ndarray
    intra_mask: np.ndarray
    act_emb: np.ndarray | None = None  # (N, 37, F+4) navigation network only
    act_mask: np.ndarray | None = None  # (N, 37)
    p_nav: np.ndarray | None = None  # (N, 37) help-request network only
    ask_mask: np.ndarray | None = None  # (N, 2)

    @property
    def n(self) -> int:
        return self.tokens.shape[0]


@dataclass
class AgentMemory:
    """Recurrent state of one network for one episode."""

    hidden: int
    inter_in: list = field(default_factory=list)
    inter_out: list = field(default_factory=list)
    intra_in: list = field(default_factory=list)
    intra_out: list = field(default_factory=list)
    eta_loc: np.ndarray | None = None
    eta_glob: np.ndarray | None = None
    h_inter: np.ndarray | None = None
    inter_steps: int = 0

    def __post_init__(self):
        z = np.zeros(self.hidden)
        self.eta_loc = z.copy() if self.eta_loc is None else self.eta_loc
        self.eta_glob = z.copy() if self.eta_glob is None else self.eta_glob
        self.h_inter = z.copy() if self.h_inter is None else self.h_inter

    def reset_inter(self) -> None:
        self.inter_in, self.inter_out = [], []
        self.eta_loc = np.zeros(self.hidden)
        self.h_inter = np.zeros(self.hidden)
        self.inter_steps = 0

    def update(self, out: dict, i: int) -> None:
        """Append row ``i`` of a forward step's states."""
        self.inter_in.append(out["q_inter"][i].copy())
        self.inter_out.append(out["h_inter"][i].copy())
        self.intra_in.append(out["q_intra"][i].copy())
        self.intra_out.append(out["h"][i].copy())
        self.eta_loc = out["eta_loc"][i].copy()
        self.eta_glob = out["eta_glob"][i].copy()
        self.h_inter = out["h_inter"][i].copy()
        self.inter_steps += 1


def pad_memory(mems: list[list[np.ndarray]], hidden: int) -> tuple[np.ndarray, np.ndarray]:
    """Stack ragged memories into (N, M, H) with a validity mask; M >= 1."""
    m = max(1, max((len(x) for x in mems), default=0))
    out = np.zeros((len(mems), m, hidden))
    mask = np.zeros((len(mems), m), dtype=bool)
    for i, x in enumerate(mems):
        if x:
            out[i, : len(x)] = np.asarray(x)
            mask[i, : len(x)] = True
    return out, mask


def pad_tokens(seqs: list[tuple[int, ...]], vocab_size: int, max_len: int) -> tuple[np.ndarray, np.ndarray]:
    if any(len(s) == 0 for s in seqs):
        raise ContractError("empty instruction")
    if any(len(s) > max_len for s in seqs):
        raise ContractError(f"instruction longer than {max_len} tokens")
    lt = max(len(s) for s in seqs)
    tok = np.zeros((len(seqs), lt), dtype=np.int64)
    mask = np.zeros((len(seqs), lt), dtype=bool)
    for i, s in enumerate(seqs):
        a = np.asarray(s, dtype=np.int64)
        if a.min() < 0 or a.max() >= vocab_size:
            raise ContractError(f"unknown token id in {list(s)}")
        tok[i, : len(s)] = a
        mask[i, : len(s)] = True
    return tok, mask


def build_inputs(
    cfg: ModelConfig,
    mems: list[AgentMemory],
    instructions: list[tuple[int, ...]],
    cur: np.ndarray,
    tgt: list[np.ndarray | None],
    prev_action: np.ndarray,
    act_emb=None,
    act_mask=None,
    p_nav=None,
    ask_mask=None,
) -> StepInputs:
    N, H, F = len(mems), cfg.hidden, cfg.feature_dim
    tok, tmask = pad_tokens(instructions, cfg.vocab_size, cfg.max_len)
    tgt_arr = np.zeros((N, N_VIEWS, F))
    tgt_mask = np.zeros((N, N_VIEWS), dtype=bool)
    delta = np.zeros((N, N_VIEWS))
    has = [i for i, t in enumerate(tgt) if t is not None]
    if has:
        tgt_arr[has] = np.stack([tgt[i] for i in has])
        tgt_mask[has] = True
        delta[has] = L.cosine_matrix(cur[has], tgt_arr[has]).max(-1)
    iK, imask = pad_memory([m.inter_in for m in mems], H)
    iV, _ = pad_memory([m.inter_out for m in mems], H)
    sK, smask = pad_memory([m.intra_in for m in mems], H)
    sV, _ = pad_memory([m.intra_out for m in mems], H)
    return StepInputs(
        tok, tmask, cur, tgt_arr, tgt_mask, delta, prev_action,
        np.stack([m.h_inter for m in mems]), np.stack([m.eta_loc for m in mems]),
        np.stack([m.eta_glob for m in mems]), iK, iV, imask, sK, sV, smask,
        act_emb, act_mask, p_nav, ask_mask,
    )


# --------------------------------------------------------------------------
# stage forwards and backwards


def encode_instruction(P, cfg: ModelConfig, tokens, tmask, drop=L.NO_DROPOUT):
    """Text memory: one vector per token from a one-layer Transformer encoder."""
    tokens = np.asarray(tokens)
    if tokens.ndim == 1:
        M, _ = encode_instruction(P, cfg, tokens[None], np.ones((1, tokens.size), dtype=bool), drop)
        return M[0], None
    if tokens.shape[1] == 0:
        raise ContractError("empty instruction")
    if tokens.shape[1] > cfg.max_len:
        raise ContractError(f"instruction longer than {cfg.max_len} tokens")
    if tokens.min() < 0 or tokens.max() >= cfg.vocab_size:
        raise ContractError("unknown token id")
    x0 = P["emb"][tokens] + sinusoid_table(tokens.shape[1], cfg.hidden)
    a, ca = L.mha_f(x0, x0, x0, tmask, P, "enc.attn", cfg.heads, drop)
    x1, cl = L.layer_norm_f(x0 + a, P["enc.attn.ln.g"], P["enc.attn.ln.b"])
    M, cf = L.ffn_f(x1, P, "enc.ffn", drop)
    return M, (tokens, ca, cl, cf)


def encode_instruction_b(dM, cache, P, grads):
    tokens, ca, cl, cf = cache
    dx1 = L.ffn_b(dM, cf, P, "enc.ffn", grads)
    dx0 = L.layer_norm_b(dx1, cl, grads, "enc.attn.ln.g", "enc.attn.ln.b")
    dq, dk, dv = L.mha_b(dx0, ca, P, "enc.attn", grads, need_kv=True)
    dx0 = dx0 + dq + dk + dv
    dE = np.zeros_like(P["emb"])
    np.add.at(dE, tokens.ravel(), dx0.reshape(-1, dx0.shape[-1]))
    L._acc(grads, "emb", dE)


def inc_time(P, prefix, x, ctx=None):
    """IncTime: LayerNorm(x + ReLU(W z + b)), z = x, or z = [ctx; x] for the global clock."""
    z = x if ctx is None else np.concatenate([ctx, x], -1)
    pre, cz = L.linear_f(z, P[f"{prefix}.W"], P[f"{prefix}.b"])
    r, pos = L.relu_f(pre)
    y, cl = L.layer_norm_f(x + r, P[f"{prefix}.ln.g"], P[f"{prefix}.ln.b"])
    return y, (cz, pos, cl, ctx is not None, x.shape[-1])


def inc_time_b(dy, cache, P, prefix, grads):
    """Returns the gradient w.r.t. the context part (None for the local clock)."""
    cz, pos, cl, has_ctx, h = cache
    dx = L.layer_norm_b(dy, cl, grads, f"{prefix}.ln.g", f"{prefix}.ln.b")
    dz = L.linear_b(L.relu_b(dx, pos), cz, P[f"{prefix}.W"], grads, f"{prefix}.W", f"{prefix}.b")
    return dz[..., :-h] if has_ctx else None


def sim_attend(q, K, V):
    """Unbatched convenience wrapper: q (D,), K (M, D), V (M, Dv)."""
    K = np.asarray(K, dtype=float).reshape(-1, len(q))
    V = np.asarray(V, dtype=float)
    if len(K) == 0:
        return np.zeros(V.shape[-1] if V.ndim == 2 else len(q))
    out, _ = L.sim_attend_f(np.asarray(q, float)[None], K[None], V[None], np.ones((1, len(K)), dtype=bool))
    return out[0]


def inter_task_step(P, cfg, X: StepInputs, drop=L.NO_DROPOUT):
    """Returns (states dict, cache). States: eta_loc, eta_glob, q_inter, h_inter,
    c_text, c_cur, c_tgt."""
    c = {}
    eta_loc, c["loc"] = inc_time(P, "inc.loc", X.eta_loc_prev)
    eta_glob, c["glob"] = inc_time(P, "inc.glob", X.eta_glob_prev, ctx=eta_loc)
    all_views = np.ones(X.cur.shape[:2], dtype=bool)
    c_inter, c["dinter"] = L.dot_attend_f(X.h_inter_prev, X.cur, all_views, P["dot.inter.W"])
    x_inter = np.concatenate([c_inter, X.prev_action, X.delta], -1)
    q_inter = x_inter @ P["W_inter"].T + eta_loc
    c["x_inter"] = x_inter
    h_inter, c["inter"] = L.multi_attend_f(q_inter, X.inter_K, X.inter_V, X.inter_mask, P, "inter.attn", cfg.heads, drop)
    M, c["enc"] = encode_instruction(P, cfg, X.tokens, X.tmask, drop)
    ct, c["tattn"] = L.multi_attend_f(h_inter, M, M, X.tmask, P, "text.attn", cfg.heads, drop)
    c_text, c["tffn"] = L.ffn_f(ct, P, "text.ffn", drop)
    c_cur, c["dcur"] = L.dot_attend_f(c_text, X.cur, all_views, P["dot.cur.W"])
    c_tgt, c["dtgt"] = L.dot_attend_f(c_text, X.tgt, X.tgt_mask, P["dot.tgt.W"])
    states = dict(eta_loc=eta_loc, eta_glob=eta_glob, q_inter=q_inter, h_inter=h_inter,
                  c_text=c_text, c_cur=c_cur, c_tgt=c_tgt)
    return states, c


def inter_task_step_b(d, c, P, grads):
    """``d`` holds gradients for c_text, c_cur, c_tgt and eta_glob."""
    dc_text = d["c_text"] + L.dot_attend_b(d["c_cur"], c["dcur"], P["dot.cur.W"], grads, "dot.cur.W")
    dc_text = dc_text + L.dot_attend_b(d["c_tgt"], c["dtgt"], P["dot.tgt.W"], grads, "dot.tgt.W")
    dct = L.ffn_b(dc_text, c["tffn"], P, "text.ffn", grads)
    dh_inter, dMk, dMv = L.multi_attend_b(dct, c["tattn"], P, "text.attn", grads, need_kv=True)
    encode_instruction_b(dMk + dMv, c["enc"], P, grads)
    dq_inter = L.multi_attend_b(dh_inter, c["inter"], P, "inter.attn", grads)
    L._acc(grads, "W_inter", dq_inter.T @ c["x_inter"])
    F = P["dot.inter.W"].shape[0]
    dc_inter = (dq_inter @ P["W_inter"])[:, :F]
    L.dot_attend_b(dc_inter, c["dinter"], P["dot.inter.W"], grads, "dot.inter.W")
    deta_loc = dq_inter + inc_time_b(d["eta_glob"], c["glob"], P, "inc.glob", grads)
    inc_time_b(deta_loc, c["loc"], P, "inc.loc", grads)


def intra_task_step(P, cfg, X: StepInputs, s: dict, drop=L.NO_DROPOUT):
    """Gated dissimilarity state h = h_bar - beta * h_tilde."""
    c = {}
    parts = [s["c_text"], s["c_cur"], s["c_tgt"], X.delta]
    if X.p_nav is not None:
        parts.append(X.p_nav)
    x_intra = np.concatenate(parts, -1)
    q_intra = x_intra @ P["W_intra"].T + s["eta_glob"]
    c["x_intra"] = x_intra
    s_intra, c["intra"] = L.multi_attend_f(q_intra, X.intra_K, X.intra_V, X.intra_mask, P, "intra.attn", cfg.heads, drop)
    h_bar, c["iffn"] = L.ffn_f(s_intra, P, "intra.ffn", drop)
    h_tilde, c["sim"] = L.sim_attend_f(q_intra, X.intra_K, X.intra_V, X.intra_mask)
    gin = np.concatenate([h_bar, h_tilde], -1)
    beta = L.sigmoid(gin @ P["gate.W"].T + P["gate.b"])
    h = h_bar - beta * h_tilde
    c.update(gin=gin, beta=beta, h_tilde=h_tilde)
    return dict(q_intra=q_intra, h_bar=h_bar, h_tilde=h_tilde, beta=beta, h=h), c


def intra_task_step_b(dh, c, P, grads):
    """Returns gradients w.r.t. c_text, c_cur, c_tgt and eta_glob."""
    beta, h_tilde = c["beta"], c["h_tilde"]
    H = dh.shape[-1]
    dz = (-dh * h_tilde) * beta * (1.0 - beta)
    L._acc(grads, "gate.W", dz.T @ c["gin"])
    L._acc(grads, "gate.b", dz.sum(0))
    dgin = dz @ P["gate.W"]
    dh_bar = dh + dgin[:, :H]
    dh_tilde = -dh * beta + dgin[:, H:]
    dq = L.sim_attend_b(dh_tilde, c["sim"])
    ds = L.ffn_b(dh_bar, c["iffn"], P, "intra.ffn", grads)
    dq = dq + L.multi_attend_b(ds, c["intra"], P, "intra.attn", grads)
    L._acc(grads, "W_intra", dq.T @ c["x_intra"])
    dx = dq @ P["W_intra"]
    F = P["dot.cur.W"].shape[0]
    Hc = P["text.ffn.ln.g"].shape[0]
    return dict(c_text=dx[:, :Hc], c_cur=dx[:, Hc:Hc + F], c_tgt=dx[:, Hc + F:Hc + 2 * F], eta_glob=dq)


def nav_distribution(P, h, act_emb, act_mask):
    """log P^nav over the 37 panoramic slots, softmax restricted to valid slots."""
    act_mask = np.asarray(act_mask, dtype=bool)
    if not act_mask[..., STOP_SLOT].all():
        raise ContractError("Stop must always be a valid action")
    u = h @ P["out.W"].T
    Ae = act_emb @ P["act.W"].T
    logits = np.einsum("nd,nkd->nk", u, Ae)
    logp = L.masked_log_softmax(logits, act_mask)
    p = np.where(act_mask, np.exp(logp), 0.0)
    return dict(logits=logits, logp=logp, p=p), (h, u, Ae, act_emb, act_mask, p)


def nav_distribution_b(dlogp, c, P, grads):
    h, u, Ae, act_emb, act_mask, p = c
    dlog = L.masked_log_softmax_b(dlogp, p, act_mask)
    du = np.einsum("nk,nkd->nd", dlog, Ae)
    dAe = dlog[:, :, None] * u[:, None, :]
    L._acc(grads, "act.W", L._flat(dAe).T @ L._flat(act_emb))
    L._acc(grads, "out.W", du.T @ h)
    return du @ P["out.W"]


def ask_distribution(P, h, ask_mask):
    """log P^ask over (do_nothing, request_help) and three reason logits."""
    ask_mask = np.asarray(ask_mask, dtype=bool)
    u = h @ P["out.W"].T
    logits = u @ P["ask.E"].T
    logp = L.masked_log_softmax(logits, ask_mask)
    p = np.where(ask_mask, np.exp(logp), 0.0)
    z = h @ P["reason.E"].T + P["reason.b"]
    return dict(logits=logits, logp=logp, p=p, reason_logit=z, reason_p=L.sigmoid(z)), (h, u, ask_mask, p)


def ask_distribution_b(dlogp, dz, c, P, grads):
    h, u, ask_mask, p = c
    dlog = L.masked_log_softmax_b(dlogp, p, ask_mask)
    L._acc(grads, "ask.E", dlog.T @ u)
    du = dlog @ P["ask.E"]
    L._acc(grads, "out.W", du.T @ h)
    dh = du @ P["out.W"]
    if dz is not None:
        L._acc(grads, "reason.E", dz.T @ h)
        L._acc(grads, "reason.b", dz.sum(0))
        dh = dh + dz @ P["reason.E"]
    return dh


# --------------------------------------------------------------------------
# full step


def forward_step(P, cfg: ModelConfig, X: StepInputs, drop=L.NO_DROPOUT):
    """One step of either network (the ask network is recognised by ``X.p_nav``)."""
    s, c_inter = inter_task_step(P, cfg, X, drop)
    t, c_intra = intra_task_step(P, cfg, X, s, drop)
    if X.p_nav is not None:
        head, c_head = ask_distribution(P, t["h"], X.ask_mask)
    else:
        head, c_head = nav_distribution(P, t["h"], X.act_emb, X.act_mask)
    out = {**s, **t, **head}
    return out, (c_inter, c_intra, c_head, X.p_nav is not None)


def backward_gradients(P, cache, dlogp, d_reason_logit=None, grads=None) -> dict[str, np.ndarray]:
    """Reverse pass of :func:`forward_step` given dLoss/dlogP (and, for the ask
    network, dLoss/d reason logits). Accumulates into ``grads`` if given."""
    c_inter, c_intra, c_head, is_ask = cache
    grads = zero_grads(P) if grads is None else grads
    h = c_head[0]
    if dlogp.shape != (h.shape[0], N_ASK_ACTIONS if is_ask else N_NAV_ACTIONS):
        raise ContractError(f"gradient shape {dlogp.shape} does not match the output")
    if is_ask:
        if d_reason_logit is not None and d_reason_logit.shape != (h.shape[0], N_REASONS):
            raise ContractError("reason gradient shape mismatch")
        dh = ask_distribution_b(dlogp, d_reason_logit, c_head, P, grads)
    else:
        dh = nav_distribution_b(dlogp, c_head, P, grads)
    d = intra_task_step_b(dh, c_intra, P, grads)
    inter_task_step_b(d, c_inter, P, grads)
    return grads


# --------------------------------------------------------------------------
# checkpoints


def save_checkpoint(path, cfg: ModelConfig, nav: dict, ask: dict, meta: dict | None = None) -> None:
    arrays = {f"nav/{k}": v for k, v in nav.items()}
    arrays.update({f"ask/{k}": v for k, v in ask.items()})
    header = dict(format=CHECKPOINT_FORMAT, version=CHECKPOINT_VERSION, config=cfg.to_json(), meta=meta or {})
    arrays["__header__"] = np.array(json.dumps(header, sort_keys=True))
    buf = io.BytesIO()
    np.savez(buf, **arrays)
    with open(path, "wb") as f:
        f.write(buf.getvalue())


def load_checkpoint(path) -> tuple[ModelConfig, dict, dict, dict]:
    with np.load(path, allow_pickle=False) as z:
        if "__header__" not in z.files:
            raise ContractError(f"{path}: not a checkpoint (missing header)")
        header = json.loads(str(z["__header__"]))
        if header.get("format") != CHECKPOINT_FORMAT or header.get("version") != CHECKPOINT_VERSION:
            raise ContractError(f"{path}: unsupported checkpoint {header.get('format')} v{header.get('version')}")
        cfg = ModelConfig.from_json(header["config"])
        nav = {k[4:]: z[k] for k in z.files if k.startswith("nav/")}
        ask = {k[4:]: z[k] for k in z.files if k.startswith("ask/")}
    validate_params(nav, cfg, ask=False)
    validate_params(ask, cfg, ask=True)
    return cfg, nav, ask, header.get("meta", {})
