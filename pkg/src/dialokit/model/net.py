"""Transformer building blocks over plain numpy arrays.

Every forward function returns (output, cache); the matching backward consumes
the cache and accumulates parameter gradients into a plain dict. Activations
are smooth (tanh-form gelu, layernorm, softmax) so central finite differences
agree with the analytic gradients to high precision in float64.

Parameter naming: "tok_emb", "pos_emb", "lm.{i}.*" / "flow.{i}.*" per layer
("ln1.g/b", "attn.wq/wk/wv/wo/bq/bk/bv/bo", "ln2.g/b", "mlp.w1/b1/w2/b2"),
"lm.lnf.g/b", "flow.lnf.g/b", "flow.upos", "flow.out.w/b", "fuse.w/b",
"bow.w/b". The LM head is tied to tok_emb.
"""
from __future__ import annotations

import math

import numpy as np

from .config import ModelConfig

LN_EPS = 1e-5
_GELU_C = math.sqrt(2.0 / math.pi)
_GELU_A = 0.044715

Params = dict[str, np.ndarray]
Grads = dict[str, np.ndarray]


def acc(grads: Grads, name: str, value: np.ndarray) -> None:
    if name in grads:
        grads[name] += value
    else:
        grads[name] = np.array(value, copy=True)


def _init_block(p: Params, pre: str, d: int, d_ff: int, rng: np.random.Generator, dt) -> None:
    p[f"{pre}.ln1.g"] = np.ones(d, dtype=dt)
    p[f"{pre}.ln1.b"] = np.zeros(d, dtype=dt)
    for w in ("wq", "wk", "wv", "wo"):
        p[f"{pre}.attn.{w}"] = (rng.standard_normal((d, d)) * 0.02).astype(dt)
    for b in ("bq", "bk", "bv", "bo"):
        p[f"{pre}.attn.{b}"] = np.zeros(d, dtype=dt)
    p[f"{pre}.ln2.g"] = np.ones(d, dtype=dt)
    p[f"{pre}.ln2.b"] = np.zeros(d, dtype=dt)
    p[f"{pre}.mlp.w1"] = (rng.standard_normal((d, d_ff)) * 0.02).astype(dt)
    p[f"{pre}.mlp.b1"] = np.zeros(d_ff, dtype=dt)
    p[f"{pre}.mlp.w2"] = (rng.standard_normal((d_ff, d)) * 0.02).astype(dt)
    p[f"{pre}.mlp.b2"] = np.zeros(d, dtype=dt)


def init_params(cfg: ModelConfig) -> Params:
    rng = np.random.default_rng(cfg.seed)
    dt = cfg.np_dtype
    d = cfg.d_model
    p: Params = {}
    p["tok_emb"] = (rng.standard_normal((cfg.vocab_size, d)) * 0.02).astype(dt)
    p["pos_emb"] = (rng.standard_normal((cfg.max_seq, d)) * 0.02).astype(dt)
    for i in range(cfg.n_layers):
        _init_block(p, f"lm.{i}", d, cfg.d_ff, rng, dt)
    p["lm.lnf.g"] = np.ones(d, dtype=dt)
    p["lm.lnf.b"] = np.zeros(d, dtype=dt)
    p["flow.upos"] = (rng.standard_normal((cfg.max_utterances, d)) * 0.02).astype(dt)
    for i in range(cfg.flow_layers):
        _init_block(p, f"flow.{i}", d, cfg.d_ff, rng, dt)
    p["flow.lnf.g"] = np.ones(d, dtype=dt)
    p["flow.lnf.b"] = np.zeros(d, dtype=dt)
    p["flow.out.w"] = (rng.standard_normal((d, d)) * 0.02).astype(dt)
    p["flow.out.b"] = np.zeros(d, dtype=dt)
    p["fuse.w"] = (rng.standard_normal((2 * d, d)) * 0.02).astype(dt)
    p["fuse.b"] = np.zeros(d, dtype=dt)
    p["bow.w"] = (rng.standard_normal((d, cfg.vocab_size)) * 0.02).astype(dt)
    p["bow.b"] = np.zeros(cfg.vocab_size, dtype=dt)
    return p


# ---------------------------------------------------------------------------
# primitives
# ---------------------------------------------------------------------------

def layer_norm(x, g, b):
    mu = x.mean(axis=-1, keepdims=True)
    var = ((x - mu) ** 2).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + LN_EPS)
    xhat = (x - mu) * inv
    return g * xhat + b, (xhat, inv, g)


def layer_norm_bwd(dy, cache):
    xhat, inv, g = cache
    dg = (dy * xhat).sum(axis=0)
    db = dy.sum(axis=0)
    dxhat = dy * g
    mean_dxhat = dxhat.mean(axis=-1, keepdims=True)
    mean_dxhat_xhat = (dxhat * xhat).mean(axis=-1, keepdims=True)
    dx = inv * (dxhat - mean_dxhat - xhat * mean_dxhat_xhat)
    return dx, dg, db


def gelu(x):
    u = _GELU_C * (x + _GELU_A * x ** 3)
    t = np.tanh(u)
    return 0.5 * x * (1.0 + t), (x, t)


def gelu_bwd(dy, cache):
    x, t = cache
    du = _GELU_C * (1.0 + 3.0 * _GELU_A * x * x)
    return dy * (0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du)


def softmax(z, axis=-1):
    z = z - z.max(axis=axis, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=axis, keepdims=True)


def log_softmax(z, axis=-1):
    z = z - z.max(axis=axis, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=axis, keepdims=True))


def _split_heads(x, n_heads):
    t, d = x.shape
    return x.reshape(t, n_heads, d // n_heads).transpose(1, 0, 2)  # (H, T, dh)


def _merge_heads(xh):
    h, t, dh = xh.shape
    return xh.transpose(1, 0, 2).reshape(t, h * dh)


def attention(x, p: Params, pre: str, n_heads: int):
    """Causal multi-head self-attention over a (T, d) block input."""
    t = x.shape[0]
    q = x @ p[f"{pre}.wq"] + p[f"{pre}.bq"]
    k = x @ p[f"{pre}.wk"] + p[f"{pre}.bk"]
    v = x @ p[f"{pre}.wv"] + p[f"{pre}.bv"]
    qh, kh, vh = (_split_heads(a, n_heads) for a in (q, k, v))
    scale = 1.0 / math.sqrt(qh.shape[-1])
    scores = (qh @ kh.transpose(0, 2, 1)) * scale
    mask = np.triu(np.ones((t, t), dtype=bool), k=1)
    scores = np.where(mask, -np.inf, scores)
    att = softmax(scores)
    oh = att @ vh
    o = _merge_heads(oh)
    y = o @ p[f"{pre}.wo"] + p[f"{pre}.bo"]
    return y, (x, qh, kh, vh, att, o, scale)


def attention_bwd(dy, cache, p: Params, pre: str, n_heads: int, grads: Grads):
    x, qh, kh, vh, att, o, scale = cache
    acc(grads, f"{pre}.wo", o.T @ dy)
    acc(grads, f"{pre}.bo", dy.sum(axis=0))
    do = dy @ p[f"{pre}.wo"].T
    doh = _split_heads(do, n_heads)
    datt = doh @ vh.transpose(0, 2, 1)
    dvh = att.transpose(0, 2, 1) @ doh
    ds = att * (datt - (datt * att).sum(axis=-1, keepdims=True))
    dqh = (ds @ kh) * scale
    dkh = (ds.transpose(0, 2, 1) @ qh) * scale
    dq, dk, dv = (_merge_heads(a) for a in (dqh, dkh, dvh))
    dx = np.zeros_like(x)
    for name, dz in (("wq", dq), ("wk", dk), ("wv", dv)):
        acc(grads, f"{pre}.{name}", x.T @ dz)
        acc(grads, f"{pre}.b{name[1]}", dz.sum(axis=0))
        dx += dz @ p[f"{pre}.{name}"].T
    return dx


def block(x, p: Params, pre: str, n_heads: int):
    a, c_ln1 = layer_norm(x, p[f"{pre}.ln1.g"], p[f"{pre}.ln1.b"])
    att_out, c_att = attention(a, p, f"{pre}.attn", n_heads)
    x1 = x + att_out
    m, c_ln2 = layer_norm(x1, p[f"{pre}.ln2.g"], p[f"{pre}.ln2.b"])
    pre_act = m @ p[f"{pre}.mlp.w1"] + p[f"{pre}.mlp.b1"]
    hidden, c_gelu = gelu(pre_act)
    f = hidden @ p[f"{pre}.mlp.w2"] + p[f"{pre}.mlp.b2"]
    x2 = x1 + f
    return x2, (c_ln1, c_att, c_ln2, m, c_gelu, hidden)


def block_bwd(dy, cache, p: Params, pre: str, n_heads: int, grads: Grads):
    c_ln1, c_att, c_ln2, m, c_gelu, hidden = cache
    # mlp branch
    acc(grads, f"{pre}.mlp.w2", hidden.T @ dy)
    acc(grads, f"{pre}.mlp.b2", dy.sum(axis=0))
    dhidden = dy @ p[f"{pre}.mlp.w2"].T
    dpre = gelu_bwd(dhidden, c_gelu)
    acc(grads, f"{pre}.mlp.w1", m.T @ dpre)
    acc(grads, f"{pre}.mlp.b1", dpre.sum(axis=0))
    dm = dpre @ p[f"{pre}.mlp.w1"].T
    dx1, dg2, db2 = layer_norm_bwd(dm, c_ln2)
    acc(grads, f"{pre}.ln2.g", dg2)
    acc(grads, f"{pre}.ln2.b", db2)
    dx1 = dx1 + dy  # residual
    # attention branch
    da = attention_bwd(dx1, c_att, p, f"{pre}.attn", n_heads, grads)
    dx, dg1, db1 = layer_norm_bwd(da, c_ln1)
    acc(grads, f"{pre}.ln1.g", dg1)
    acc(grads, f"{pre}.ln1.b", db1)
    return dx + dx1  # residual


def stack(x, p: Params, pre: str, n_layers: int, n_heads: int):
    """Pre-norm transformer stack with a final layernorm."""
    caches = []
    for i in range(n_layers):
        x, c = block(x, p, f"{pre}.{i}", n_heads)
        caches.append(c)
    h, c_f = layer_norm(x, p[f"{pre}.lnf.g"], p[f"{pre}.lnf.b"])
    return h, (caches, c_f)


def stack_bwd(dh, cache, p: Params, pre: str, n_layers: int, n_heads: int, grads: Grads):
    caches, c_f = cache
    dx, dgf, dbf = layer_norm_bwd(dh, c_f)
    acc(grads, f"{pre}.lnf.g", dgf)
    acc(grads, f"{pre}.lnf.b", dbf)
    for i in reversed(range(n_layers)):
        dx = block_bwd(dx, caches[i], p, f"{pre}.{i}", n_heads, grads)
    return dx
