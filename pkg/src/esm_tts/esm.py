"""Embedding Strength Modulator.

A label embedding ``lp`` (one vector) is the single key/value item of a
multi-head attention whose queries are the encoder outputs. Each head weights
its value by the cosine between query and key (no softmax), so every token gets
a strength in [-1, 1] per head::

    M = MH(E, LN(lp), LN(lp)) + lp
    F = FFN(LN(M)) + M

``lp`` added back through the residual is the static component; the attention
output is the dynamic component.
"""

from __future__ import annotations

from dataclasses import dataclass, field, fields

import numpy as np

from . import numeric as nc
from .errors import ConsistencyFailure, NonFiniteActivation, ShapeMismatch

DEGENERATE_NORM = 1e-12


@dataclass(frozen=True)
class ESMConfig:
    d_model: int = 512
    heads: int = 8
    ffn_hidden: int = 2048
    kernel_width: int = 1
    eps: float = nc.LN_EPS

    def __post_init__(self):
        if self.d_model <= 0 or self.heads <= 0 or self.ffn_hidden <= 0:
            raise ValueError("ESM sizes must be positive")
        if self.d_model % self.heads:
            raise ValueError(f"d_model={self.d_model} not divisible by heads={self.heads}")
        if self.kernel_width % 2 != 1:
            raise ValueError("kernel width must be odd")

    @property
    def head_dim(self) -> int:
        return self.d_model // self.heads


@dataclass
class ESMParams:
    """Weights of one modulator. Per-head projections are column blocks of the
    d x d matrices ``w_q``/``w_k``/``w_v`` (head h owns columns h*dh:(h+1)*dh)."""

    config: ESMConfig
    w_q: np.ndarray
    w_k: np.ndarray
    w_v: np.ndarray
    b_v: np.ndarray
    w_o: np.ndarray
    b_o: np.ndarray
    ln_lp_gamma: np.ndarray
    ln_lp_beta: np.ndarray
    ln_m_gamma: np.ndarray
    ln_m_beta: np.ndarray
    ffn_w1: np.ndarray
    ffn_b1: np.ndarray
    ffn_w2: np.ndarray
    ffn_b2: np.ndarray

    def __post_init__(self):
        c = self.config
        d, hid, k = c.d_model, c.ffn_hidden, c.kernel_width
        expect = {
            "w_q": (d, d), "w_k": (d, d), "w_v": (d, d), "b_v": (d,),
            "w_o": (d, d), "b_o": (d,),
            "ln_lp_gamma": (d,), "ln_lp_beta": (d,), "ln_m_gamma": (d,), "ln_m_beta": (d,),
            "ffn_w1": (k, d, hid), "ffn_b1": (hid,), "ffn_w2": (k, hid, d), "ffn_b2": (d,),
        }  # fmt: skip
        for name, shape in expect.items():
            arr = np.ascontiguousarray(getattr(self, name), dtype=np.float64)
            if arr.shape != shape:
                raise ShapeMismatch(f"{name}: expected {shape}, got {arr.shape}")
            setattr(self, name, arr)

    @staticmethod
    def array_names() -> tuple[str, ...]:
        return tuple(f.name for f in fields(ESMParams) if f.name != "config")

    def arrays(self) -> dict[str, np.ndarray]:
        return {n: getattr(self, n) for n in self.array_names()}

    def copy(self) -> "ESMParams":
        return ESMParams(self.config, **{n: a.copy() for n, a in self.arrays().items()})

    @classmethod
    def init(cls, config: ESMConfig, init: nc.InitSpec | int = 0) -> "ESMParams":
        init = init if isinstance(init, nc.InitSpec) else nc.InitSpec(int(init))
        rng = init.rng()
        d, hid, k = config.d_model, config.ffn_hidden, config.kernel_width
        return cls(
            config,
            w_q=init.weight(rng, (d, d), d, d),
            w_k=init.weight(rng, (d, d), d, d),
            w_v=init.weight(rng, (d, d), d, d),
            b_v=np.zeros(d),
            w_o=init.weight(rng, (d, d), d, d),
            b_o=np.zeros(d),
            ln_lp_gamma=np.ones(d),
            ln_lp_beta=np.zeros(d),
            ln_m_gamma=np.ones(d),
            ln_m_beta=np.zeros(d),
            ffn_w1=init.weight(rng, (k, d, hid), k * d, hid),
            ffn_b1=np.zeros(hid),
            ffn_w2=init.weight(rng, (k, hid, d), k * hid, d),
            ffn_b2=np.zeros(d),
        )


@dataclass
class ESMDiagnostics:
    alpha: np.ndarray  # (T, H)
    dynamic: np.ndarray  # (T, d) attention output before the residual
    static: np.ndarray  # (d,) the embedding added through the residual
    m_o: np.ndarray
    f_o: np.ndarray
    degenerate: np.ndarray  # (T, H) bool, zero-norm query or key
    cache: dict = field(default_factory=dict, repr=False, compare=False)


def cosine_head(q: np.ndarray, k: np.ndarray, v: np.ndarray) -> tuple[float, np.ndarray]:
    """Strength ``alpha = cos(q, k)`` and weighted value ``alpha * v`` for one head.

    A query or key with norm below 1e-12 gives ``alpha = 0``.
    """
    q, k, v = (np.asarray(a, dtype=np.float64) for a in (q, k, v))
    nq, nk = np.linalg.norm(q), np.linalg.norm(k)
    if nq < DEGENERATE_NORM or nk < DEGENERATE_NORM:
        alpha = 0.0
    else:
        alpha = float(np.clip(q @ k / (nq * nk), -1.0, 1.0))
    return alpha, alpha * v


def multi_head(e_o: np.ndarray, lp_n: np.ndarray, params: ESMParams):
    """Single-item cosine attention. Returns ``(dynamic, alpha, degenerate, cache)``.

    ``lp_n`` is the already layer-normalized embedding; the key and value it
    produces are shared by every query row of ``e_o``.
    """
    cfg = params.config
    e_o = nc.as_token_matrix(e_o)
    if e_o.shape[1] != cfg.d_model or lp_n.shape != (cfg.d_model,):
        raise ShapeMismatch(f"multi_head: E {e_o.shape}, LP {lp_n.shape}, d_model {cfg.d_model}")
    t, h, dh = e_o.shape[0], cfg.heads, cfg.head_dim
    q = (e_o @ params.w_q).reshape(t, h, dh)
    k = (lp_n @ params.w_k).reshape(h, dh)
    v = (lp_n @ params.w_v + params.b_v).reshape(h, dh)
    nq = np.linalg.norm(q, axis=-1)
    nk = np.linalg.norm(k, axis=-1)
    degenerate = (nq < DEGENERATE_NORM) | (nk < DEGENERATE_NORM)[None, :]
    denom = np.where(degenerate, 1.0, nq * nk)
    dots = np.einsum("thd,hd->th", q, k)
    alpha = np.where(degenerate, 0.0, np.clip(dots / denom, -1.0, 1.0))
    heads = (alpha[:, :, None] * v[None, :, :]).reshape(t, cfg.d_model)
    dynamic = heads @ params.w_o + params.b_o
    cache = dict(e_o=e_o, lp_n=lp_n, q=q, k=k, v=v, nq=nq, nk=nk, heads=heads)
    return dynamic, alpha, degenerate, cache


def esm_forward_mixed(e_o, lp_dynamic, lp_static, params: ESMParams):
    """Modulator forward with separate sources for the attention path
    (``lp_dynamic``) and the residual path (``lp_static``)."""
    cfg = params.config
    lp_dynamic = np.asarray(lp_dynamic, dtype=np.float64)
    lp_static = np.asarray(lp_static, dtype=np.float64)
    if lp_dynamic.shape != (cfg.d_model,) or lp_static.shape != (cfg.d_model,):
        raise ShapeMismatch(f"embeddings must have shape ({cfg.d_model},)")
    lp_n, ln_lp = nc.layer_norm(lp_dynamic, params.ln_lp_gamma, params.ln_lp_beta, cfg.eps)
    dynamic, alpha, degenerate, mh = multi_head(e_o, lp_n, params)
    m_o = dynamic + lp_static
    m_n, ln_m = nc.layer_norm(m_o, params.ln_m_gamma, params.ln_m_beta, cfg.eps)
    pre = nc.conv1d(m_n, params.ffn_w1, params.ffn_b1)
    act = nc.relu(pre)
    f_o = nc.conv1d(act, params.ffn_w2, params.ffn_b2) + m_o
    if not np.all(np.isfinite(f_o)):
        raise NonFiniteActivation("ESM output contains NaN or Inf")
    cache = dict(mh=mh, ln_lp=ln_lp, ln_m=ln_m, m_n=m_n, pre=pre, act=act, alpha=alpha, degenerate=degenerate)
    return f_o, ESMDiagnostics(alpha, dynamic, lp_static.copy(), m_o, f_o, degenerate, cache)


def esm_forward(e_o, lp, params: ESMParams):
    return esm_forward_mixed(e_o, lp, lp, params)


def esm_backward(d_f: np.ndarray, diag: ESMDiagnostics, params: ESMParams):
    """Backward of :func:`esm_forward_mixed`.

    Returns ``(d_e_o, d_lp_dynamic, d_lp_static, grads)`` with ``grads`` keyed
    like :meth:`ESMParams.arrays`.
    """
    c = diag.cache
    mh = c["mh"]
    cfg = params.config
    t, h, dh = d_f.shape[0], cfg.heads, cfg.head_dim
    g: dict[str, np.ndarray] = {}

    # F = conv2(relu(conv1(LN(M)))) + M
    d_m = d_f.copy()
    d_act, g["ffn_w2"], g["ffn_b2"] = nc.conv1d_backward(d_f, c["act"], params.ffn_w2)
    d_pre = d_act * (c["pre"] > 0)
    d_mn, g["ffn_w1"], g["ffn_b1"] = nc.conv1d_backward(d_pre, c["m_n"], params.ffn_w1)
    d_m_ln, g["ln_m_gamma"], g["ln_m_beta"] = nc.layer_norm_backward(d_mn, c["ln_m"])
    d_m += d_m_ln

    # M = dynamic + lp_static
    d_lp_static = d_m.sum(axis=0)
    d_heads, g["w_o"], g["b_o"] = nc.linear_backward(d_m, mh["heads"], params.w_o)
    d_heads = d_heads.reshape(t, h, dh)

    alpha, deg = c["alpha"], c["degenerate"]
    q, k, v, nq, nk = mh["q"], mh["k"], mh["v"], mh["nq"], mh["nk"]
    d_alpha = np.einsum("thd,hd->th", d_heads, v)
    d_v = np.einsum("th,thd->hd", alpha, d_heads)
    live = ~deg
    nq_s = np.where(live, nq, 1.0)
    nk_s = np.where(nk < DEGENERATE_NORM, 1.0, nk)
    inv = np.where(live, 1.0 / (nq_s * nk_s[None, :]), 0.0)
    # d cos / dq = k/(|q||k|) - cos q/|q|^2 ; symmetric for k
    d_q = d_alpha[:, :, None] * (
        inv[:, :, None] * k[None, :, :] - (np.where(live, alpha / nq_s**2, 0.0))[:, :, None] * q
    )
    d_k = np.einsum(
        "th,thd->hd", d_alpha, inv[:, :, None] * q - np.where(live, alpha, 0.0)[:, :, None] * (k / nk_s[:, None] ** 2)[None]
    )
    d_q = d_q.reshape(t, cfg.d_model)
    d_k = d_k.reshape(cfg.d_model)
    d_v = d_v.reshape(cfg.d_model)

    e_o, lp_n = mh["e_o"], mh["lp_n"]
    d_e = d_q @ params.w_q.T
    g["w_q"] = e_o.T @ d_q
    g["w_k"] = np.outer(lp_n, d_k)
    g["w_v"] = np.outer(lp_n, d_v)
    g["b_v"] = d_v
    d_lp_n = params.w_k @ d_k + params.w_v @ d_v
    d_lp_dynamic, g["ln_lp_gamma"], g["ln_lp_beta"] = nc.layer_norm_backward(d_lp_n, c["ln_lp"])
    return d_e, d_lp_dynamic, d_lp_static, {n: g[n] for n in ESMParams.array_names()}


def decompose(diag: ESMDiagnostics) -> tuple[np.ndarray, np.ndarray]:
    """Static and dynamic components of a forward pass; checks they add up to M."""
    if not np.array_equal(diag.dynamic + diag.static, diag.m_o):
        raise ConsistencyFailure("static + dynamic != M_o")
    return diag.static, diag.dynamic
