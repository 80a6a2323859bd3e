"""Batched numpy layers with hand-written reverse-mode gradients.

Every ``*_f`` forward returns ``(out, cache)`` and the matching ``*_b``
backward takes the upstream gradient and the cache. Parameter gradients are
accumulated into a ``grads`` dict under the parameter names passed in.
Leading axes are batch axes.
"""
from __future__ import annotations

import numpy as np

LN_EPS = 1e-5
NORM_EPS = 1e-12


def _acc(grads, name, value):
    if name in grads:
        grads[name] += value
    else:
        grads[name] = value.copy()


def _flat(x):
    return x.reshape(-1, x.shape[-1])


class Dropout:
    """Inverted dropout; inactive unless ``training`` and ``p > 0``."""

    def __init__(self, p: float = 0.0, rng: np.random.Generator | None = None, training: bool = False):
        self.p = p
        self.rng = rng
        self.active = training and p > 0 and rng is not None

    def mask(self, shape):
        if not self.active:
            return None
        return (self.rng.random(shape) >= self.p) / (1.0 - self.p)


NO_DROPOUT = Dropout()


def apply_mask(x, m):
    return x if m is None else x * m


# --------------------------------------------------------------------------
# affine, activations, normalisation


def linear_f(x, W, b=None):
    y = x @ W.T
    if b is not None:
        y = y + b
    return y, x


def linear_b(dy, x, W, grads, wname, bname=None):
    _acc(grads, wname, _flat(dy).T @ _flat(x))
    if bname is not None:
        _acc(grads, bname, _flat(dy).sum(0))
    return dy @ W


def relu_f(x):
    return np.maximum(x, 0.0), x > 0


def relu_b(dy, pos):
    return dy * pos


def sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def layer_norm_f(x, g, b):
    mu = x.mean(-1, keepdims=True)
    xc = x - mu
    inv = 1.0 / np.sqrt((xc * xc).mean(-1, keepdims=True) + LN_EPS)
    xh = xc * inv
    return g * xh + b, (xh, inv, g)


def layer_norm_b(dy, cache, grads, gname, bname):
    xh, inv, g = cache
    _acc(grads, gname, _flat(dy * xh).sum(0))
    _acc(grads, bname, _flat(dy).sum(0))
    dxh = dy * g
    return inv * (dxh - dxh.mean(-1, keepdims=True) - xh * (dxh * xh).mean(-1, keepdims=True))


# --------------------------------------------------------------------------
# softmax helpers


def masked_softmax(s, mask):
    """Softmax over the last axis restricted to ``mask``; all-masked rows give zeros."""
    s = np.where(mask, s, -np.inf)
    mx = s.max(-1, keepdims=True)
    mx = np.where(np.isfinite(mx), mx, 0.0)
    e = np.exp(s - mx) * mask
    den = e.sum(-1, keepdims=True)
    return e / np.where(den > 0, den, 1.0)


def masked_softmax_b(dw, w):
    return w * (dw - (w * dw).sum(-1, keepdims=True))


def masked_log_softmax(s, mask):
    s = np.where(mask, s, -np.inf)
    mx = s.max(-1, keepdims=True)
    mx = np.where(np.isfinite(mx), mx, 0.0)
    z = s - mx
    tot = np.exp(z).sum(-1, keepdims=True)
    # all-masked rows stay at -inf instead of turning into nan
    return z - np.log(np.where(tot > 0, tot, 1.0))


def masked_log_softmax_b(dlogp, p, mask):
    dlogp = np.where(mask, dlogp, 0.0)
    return dlogp - p * dlogp.sum(-1, keepdims=True)


# --------------------------------------------------------------------------
# attention


def mha_f(q, K, V, mask, P, prefix, n_heads, drop=NO_DROPOUT):
    """Multi-head attention of queries ``q`` (N, Lq, Dq) over keys ``K`` (N, M, Dk)
    and values ``V`` (N, M, Dv) with key mask (N, M). Rows without any valid
    key attend to nothing and return zeros."""
    Wq, Wk, Wv, Wo = (P[f"{prefix}.{k}"] for k in ("Wq", "Wk", "Wv", "Wo"))
    N, Lq, _ = q.shape
    M = K.shape[1]
    H = Wq.shape[0]
    dh = H // n_heads
    Q = (q @ Wq.T).reshape(N, Lq, n_heads, dh).transpose(0, 2, 1, 3)
    Kp = (K @ Wk.T).reshape(N, M, n_heads, dh).transpose(0, 2, 1, 3)
    Vp = (V @ Wv.T).reshape(N, M, n_heads, dh).transpose(0, 2, 1, 3)
    scale = 1.0 / np.sqrt(dh)
    s = (Q @ Kp.transpose(0, 1, 3, 2)) * scale
    w = masked_softmax(s, mask[:, None, None, :])
    ctx = (w @ Vp).transpose(0, 2, 1, 3).reshape(N, Lq, H)
    out = ctx @ Wo.T
    dm = drop.mask(out.shape)
    cache = (q, K, V, Q, Kp, Vp, w, ctx, scale, n_heads, dm)
    return apply_mask(out, dm), cache


def mha_b(dout, cache, P, prefix, grads, need_kv=False):
    q, K, V, Q, Kp, Vp, w, ctx, scale, n_heads, dm = cache
    Wq, Wk, Wv, Wo = (P[f"{prefix}.{k}"] for k in ("Wq", "Wk", "Wv", "Wo"))
    dout = apply_mask(dout, dm)
    N, Lq, H = ctx.shape
    M = K.shape[1]
    dh = H // n_heads
    _acc(grads, f"{prefix}.Wo", _flat(dout).T @ _flat(ctx))
    dctx = (dout @ Wo).reshape(N, Lq, n_heads, dh).transpose(0, 2, 1, 3)
    dw = dctx @ Vp.transpose(0, 1, 3, 2)
    dVp = w.transpose(0, 1, 3, 2) @ dctx
    ds = masked_softmax_b(dw, w) * scale
    dQ = ds @ Kp
    dKp = ds.transpose(0, 1, 3, 2) @ Q
    dQ = dQ.transpose(0, 2, 1, 3).reshape(N, Lq, H)
    dKp = dKp.transpose(0, 2, 1, 3).reshape(N, M, H)
    dVp = dVp.transpose(0, 2, 1, 3).reshape(N, M, H)
    _acc(grads, f"{prefix}.Wq", _flat(dQ).T @ _flat(q))
    _acc(grads, f"{prefix}.Wk", _flat(dKp).T @ _flat(K))
    _acc(grads, f"{prefix}.Wv", _flat(dVp).T @ _flat(V))
    dq = dQ @ Wq
    if need_kv:
        return dq, dKp @ Wk, dVp @ Wv
    return dq


def multi_attend_f(q, K, V, mask, P, prefix, n_heads, drop=NO_DROPOUT):
    """LayerNorm(q + MHA(q, K, V)) for single queries q of shape (N, D)."""
    a, c1 = mha_f(q[:, None, :], K, V, mask, P, prefix, n_heads, drop)
    y, c2 = layer_norm_f(q + a[:, 0], P[f"{prefix}.ln.g"], P[f"{prefix}.ln.b"])
    return y, (c1, c2)


def multi_attend_b(dy, cache, P, prefix, grads, need_kv=False):
    c1, c2 = cache
    dx = layer_norm_b(dy, c2, grads, f"{prefix}.ln.g", f"{prefix}.ln.b")
    res = mha_b(dx[:, None, :], c1, P, prefix, grads, need_kv)
    if need_kv:
        dq, dK, dV = res
        return dx + dq[:, 0], dK, dV
    return dx + res[:, 0]


def ffn_f(x, P, prefix, drop=NO_DROPOUT):
    """LayerNorm(x + W2 relu(W1 x + b1) + b2)."""
    z1, c1 = linear_f(x, P[f"{prefix}.W1"], P[f"{prefix}.b1"])
    h, pos = relu_f(z1)
    z2, c2 = linear_f(h, P[f"{prefix}.W2"], P[f"{prefix}.b2"])
    dm = drop.mask(z2.shape)
    y, c3 = layer_norm_f(x + apply_mask(z2, dm), P[f"{prefix}.ln.g"], P[f"{prefix}.ln.b"])
    return y, (c1, pos, c2, dm, c3)


def ffn_b(dy, cache, P, prefix, grads):
    c1, pos, c2, dm, c3 = cache
    dx = layer_norm_b(dy, c3, grads, f"{prefix}.ln.g", f"{prefix}.ln.b")
    dz2 = apply_mask(dx, dm)
    dh = linear_b(dz2, c2, P[f"{prefix}.W2"], grads, f"{prefix}.W2", f"{prefix}.b2")
    dz1 = relu_b(dh, pos)
    return dx + linear_b(dz1, c1, P[f"{prefix}.W1"], grads, f"{prefix}.W1", f"{prefix}.b1")


def dot_attend_f(q, mem, mask, W):
    """Bilinear (Luong 'general') attention of q (N, Dq) over mem (N, S, F).
    Returns the attention-weighted sum of the memory rows."""
    pq = q @ W.T
    s = np.einsum("nsf,nf->ns", mem, pq)
    w = masked_softmax(s, mask)
    return np.einsum("ns,nsf->nf", w, mem), (q, mem, w)


def dot_attend_b(dout, cache, W, grads, wname):
    q, mem, w = cache
    dw = np.einsum("nsf,nf->ns", mem, dout)
    ds = masked_softmax_b(dw, w)
    dpq = np.einsum("ns,nsf->nf", ds, mem)
    _acc(grads, wname, dpq.T @ q)
    return dpq @ W


SIM_THRESHOLD = 0.9


def sim_attend_f(q, K, V, mask, threshold=SIM_THRESHOLD):
    """Weighted sum of values whose keys are near-identical to the query.

    Weight_i = 1{cos_i > threshold} * cos_i / sum_j relu(cos_j), the sum
    running over every valid key. Negative cosines are clipped out of the
    normaliser so the weights stay in [0, 1] and sum to at most one.
    """
    qn = np.sqrt((q * q).sum(-1, keepdims=True)) + NORM_EPS
    kn = np.sqrt((K * K).sum(-1)) + NORM_EPS
    dots = np.einsum("nmd,nd->nm", K, q)
    a = dots / (qn * kn)
    valid = mask.astype(bool)
    keep = (a > threshold) & valid
    posmask = (a > 0) & valid
    den = (a * posmask).sum(-1, keepdims=True)
    safe = np.where(den > 0, den, 1.0)
    w = np.where(keep, a, 0.0) / safe
    out = np.einsum("nm,nmd->nd", w, V)
    return out, (q, K, V, qn, kn, a, keep, posmask, safe, w)


def sim_attend_b(dout, cache):
    q, K, V, qn, kn, a, keep, posmask, safe, w = cache
    dw = np.einsum("nmd,nd->nm", V, dout)
    da = keep * dw / safe - posmask * ((w * dw).sum(-1, keepdims=True) / safe)
    # d cos(q, k) / dq = k / (|q||k|) - cos * q / |q|^2
    dq = np.einsum("nm,nmd->nd", da / kn, K) / qn - (da * a).sum(-1, keepdims=True) * q / qn**2
    return dq


def cosine_matrix(A, B):
    """Row-wise cosine similarities, (..., n, d) x (..., m, d) -> (..., n, m)."""
    An = A / (np.linalg.norm(A, axis=-1, keepdims=True) + NORM_EPS)
    Bn = B / (np.linalg.norm(B, axis=-1, keepdims=True) + NORM_EPS)
    return An @ np.swapaxes(Bn, -1, -2)
