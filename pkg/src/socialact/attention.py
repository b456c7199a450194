"""Self-attention refinement of actor feature grids and a multi-head graph attention layer.

Both blocks are written as explicit forward/backward pairs over numpy arrays.
A forward call returns a :class:`Tape`; the matching backward consumes it
exactly once.
"""
from __future__ import annotations

from dataclasses import dataclass, fields
from typing import Callable

import numpy as np


class TapeError(RuntimeError):
    pass


class Tape:
    """Activations cached by one forward call."""

    def __init__(self, **saved):
        self._saved = saved
        self._used = False

    def consume(self) -> dict:
        if self._used:
            raise TapeError("tape already consumed by a backward pass")
        self._used = True
        return self._saved


def glorot(rng: np.random.Generator, shape, fan_in: int, fan_out: int) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape)


class _ParamsMixin:
    def arrays(self) -> dict[str, np.ndarray]:
        return {f.name: getattr(self, f.name) for f in fields(self) if isinstance(getattr(self, f.name), np.ndarray)}

    def copy(self):
        kw = {f.name: getattr(self, f.name) for f in fields(self)}
        kw.update({k: v.copy() for k, v in self.arrays().items()})
        return type(self)(**kw)


# ---------------------------------------------------------------------------
# self-attention


@dataclass
class SelfAttentionParams(_ParamsMixin):
    """Query/key projections to D/8 channels, value projection to D, then
    a flatten-and-project readout to an E-dim embedding.

    Keys carry no bias: a key bias shifts every score in a softmax row by the
    same amount and has no effect on the output.
    """

    Wq: np.ndarray  # (D, D/8)
    bq: np.ndarray
    Wk: np.ndarray  # (D, D/8)
    Wv: np.ndarray  # (D, D)
    bv: np.ndarray
    Wout: np.ndarray  # (P*P*D, E)
    bout: np.ndarray

    @classmethod
    def init(cls, P: int, D: int, E: int, rng: np.random.Generator) -> "SelfAttentionParams":
        if D % 8:
            raise ValueError(f"channel dimension D={D} must be divisible by 8")
        d = D // 8
        return cls(
            Wq=glorot(rng, (D, d), D, d),
            bq=np.zeros(d),
            Wk=glorot(rng, (D, d), D, d),
            Wv=glorot(rng, (D, D), D, D),
            bv=np.zeros(D),
            Wout=glorot(rng, (P * P * D, E), P * P * D, E),
            bout=np.zeros(E),
        )

    @property
    def D(self) -> int:
        return self.Wq.shape[0]

    @property
    def E(self) -> int:
        return self.Wout.shape[1]

    @property
    def P(self) -> int:
        return int(round(np.sqrt(self.Wout.shape[0] // self.D)))


def _softmax(s: np.ndarray) -> np.ndarray:
    s = s - s.max(axis=-1, keepdims=True)
    e = np.exp(s)
    return e / e.sum(axis=-1, keepdims=True)


def self_attention_forward(params: SelfAttentionParams, grid: np.ndarray, train_mode: bool = False):
    """Refine a (P, P, D) grid, or a stack (N, P, P, D), into E-dim embeddings.

    ``train_mode`` is accepted for interface symmetry; the block has no
    stochastic parts.
    """
    grid = np.asarray(grid, dtype=float)
    single = grid.ndim == 3
    X4 = grid[None] if single else grid
    if X4.ndim != 4 or X4.shape[1] != X4.shape[2] or X4.shape[3] != params.D or X4.shape[1] != params.P:
        raise ValueError(f"grid shape {grid.shape} does not match parameters (P={params.P}, D={params.D})")
    if not np.all(np.isfinite(X4)):
        raise ValueError("non-finite values in actor feature grid")
    n, P = X4.shape[0], X4.shape[1]
    X = X4.reshape(n, P * P, params.D)
    scale = 1.0 / np.sqrt(params.Wq.shape[1])
    Q = X @ params.Wq + params.bq
    K = X @ params.Wk
    V = X @ params.Wv + params.bv
    A = _softmax(scale * (Q @ K.transpose(0, 2, 1)))
    R = X + A @ V
    flat = R.reshape(n, -1)
    emb = flat @ params.Wout + params.bout
    tape = Tape(X=X, Q=Q, K=K, V=V, A=A, flat=flat, scale=scale, single=single, shape=X4.shape)
    return (emb[0] if single else emb), tape


def self_attention_backward(tape: Tape, grad_embedding: np.ndarray, params: SelfAttentionParams):
    """Gradients of <grad_embedding, embedding> w.r.t. the parameters and the grid."""
    t = tape.consume()
    g = np.asarray(grad_embedding, dtype=float)
    if t["single"]:
        g = g[None]
    X, Q, K, V, A, flat, scale = t["X"], t["Q"], t["K"], t["V"], t["A"], t["flat"], t["scale"]
    grads = SelfAttentionParams(
        Wq=None, bq=None, Wk=None, Wv=None, bv=None,
        Wout=flat.T @ g, bout=g.sum(axis=0),
    )
    gR = (g @ params.Wout.T).reshape(X.shape)
    gA = gR @ V.transpose(0, 2, 1)
    gV = A.transpose(0, 2, 1) @ gR
    gS = A * (gA - (gA * A).sum(axis=-1, keepdims=True)) * scale
    gQ = gS @ K
    gK = gS.transpose(0, 2, 1) @ Q
    Xf = X.reshape(-1, X.shape[-1])
    grads.Wq = Xf.T @ gQ.reshape(-1, gQ.shape[-1])
    grads.bq = gQ.sum(axis=(0, 1))
    grads.Wk = Xf.T @ gK.reshape(-1, gK.shape[-1])
    grads.Wv = Xf.T @ gV.reshape(-1, gV.shape[-1])
    grads.bv = gV.sum(axis=(0, 1))
    gX = gR + gQ @ params.Wq.T + gK @ params.Wk.T + gV @ params.Wv.T
    gX = gX.reshape(t["shape"])
    return grads, (gX[0] if t["single"] else gX)


# ---------------------------------------------------------------------------
# graph attention


@dataclass
class GATParams(_ParamsMixin):
    """H attention heads over a fully connected actor graph.

    ``score="static"`` is the original GAT scoring
    ``e_ij = LeakyReLU(a_src . z_i + a_dst . z_j)``; ``score="dynamic"`` scores
    ``e_ij = a . LeakyReLU(U x_i + W x_j)``, which can rank neighbours
    differently for different query nodes. Messages are ``z_j = W x_j`` in both.
    """

    W: np.ndarray  # (H, E, E_h)
    a: np.ndarray  # static: (H, 2, E_h); dynamic: (H, E_h)
    U: np.ndarray | None = None  # dynamic only: (H, E, E_h)
    score: str = "dynamic"
    leaky_slope: float = 0.2
    dropout_p: float = 0.5

    def __post_init__(self):
        if self.score not in ("static", "dynamic"):
            raise ValueError(f"unknown attention score {self.score!r}")
        if self.W.ndim != 3 or self.W.shape[0] < 1:
            raise ValueError("W must have shape (H, E, E_h) with H >= 1")
        if not 0.0 <= self.dropout_p < 1.0:
            raise ValueError("dropout_p must be in [0, 1)")
        if self.score == "dynamic" and self.U is None:
            raise ValueError("dynamic scoring needs the query projection U")

    @classmethod
    def init(cls, E: int, E_h: int, H: int, rng: np.random.Generator, score: str = "dynamic",
             leaky_slope: float = 0.2, dropout_p: float = 0.5) -> "GATParams":
        W = glorot(rng, (H, E, E_h), E, E_h)
        if score == "static":
            return cls(W=W, a=glorot(rng, (H, 2, E_h), 2 * E_h, 1), score=score,
                       leaky_slope=leaky_slope, dropout_p=dropout_p)
        U = glorot(rng, (H, E, E_h), E, E_h)
        return cls(W=W, a=glorot(rng, (H, E_h), E_h, 1), U=U, score=score,
                   leaky_slope=leaky_slope, dropout_p=dropout_p)

    @property
    def H(self) -> int:
        return self.W.shape[0]

    @property
    def E_out(self) -> int:
        return self.W.shape[2]


@dataclass
class AttentionCoefficients:
    coeffs: np.ndarray  # (H, N, N) row-stochastic
    logits: np.ndarray  # (H, N, N) pre-softmax scores


def _lrelu(x, slope):
    return np.where(x > 0, x, slope * x)


def _dropout_mask(shape, p: float, seed) -> np.ndarray:
    rng = np.random.default_rng(seed)
    mask = rng.random(shape) >= p
    # a fully dropped row keeps its self-edge
    dead = ~mask.any(axis=-1)
    if dead.any():
        h, i = np.nonzero(dead)
        mask[h, i, i] = True
    return mask


def gat_forward(params: GATParams, nodes: np.ndarray, train_mode: bool = False, dropout_seed=0):
    """Returns (updated nodes (N, E_h), AttentionCoefficients, tape).

    Each head aggregates ``ELU(sum_j alpha_ij z_j)``; heads are averaged.
    In train mode, attention entries are dropped with probability
    ``dropout_p`` and the surviving entries of each row renormalised.
    """
    x = np.asarray(nodes, dtype=float)
    if x.ndim != 2 or x.shape[0] == 0:
        raise ValueError("graph attention needs at least one node")
    slope = params.leaky_slope
    z = np.einsum("ne,hef->hnf", x, params.W)
    saved = dict(x=x, z=z)
    if params.score == "static":
        u = z @ params.a[:, 0, :, None]
        v = z @ params.a[:, 1, :, None]
        pre = u + v.transpose(0, 2, 1)
        e = _lrelu(pre, slope)
    else:
        q = np.einsum("ne,hef->hnf", x, params.U)
        pre = q[:, :, None, :] + z[:, None, :, :]
        act = _lrelu(pre, slope)
        e = act @ params.a[:, None, :, None]
        e = e[..., 0]
        saved["act"] = act
    saved["pre"] = pre
    alpha = _softmax(e)
    used = alpha
    mask = None
    if train_mode and params.dropout_p > 0:
        mask = _dropout_mask(alpha.shape, params.dropout_p, dropout_seed)
        kept = alpha * mask
        used = kept / kept.sum(axis=-1, keepdims=True)
    agg = used @ z
    out_h = np.where(agg > 0, agg, np.expm1(np.minimum(agg, 0)))
    out = out_h.mean(axis=0)
    saved.update(alpha=alpha, used=used, mask=mask, agg=agg)
    return out, AttentionCoefficients(used, e), Tape(**saved)


def gat_backward(tape: Tape, grad_updated, params: GATParams, grad_logits=None):
    """Adjoint of :func:`gat_forward`; ``grad_logits`` feeds the raw scores directly."""
    t = tape.consume()
    x, z, pre, alpha, used, mask, agg = t["x"], t["z"], t["pre"], t["alpha"], t["used"], t["mask"], t["agg"]
    H = params.H
    slope = params.leaky_slope
    g_out = np.zeros_like(agg[0]) if grad_updated is None else np.asarray(grad_updated, dtype=float)
    g_agg = (g_out[None] / H) * np.where(agg > 0, 1.0, np.exp(np.minimum(agg, 0)))
    g_used = g_agg @ z.transpose(0, 2, 1)
    g_z = used.transpose(0, 2, 1) @ g_agg
    if mask is not None:
        kept_sum = (alpha * mask).sum(axis=-1, keepdims=True)
        g_alpha = mask / kept_sum * (g_used - (g_used * used).sum(axis=-1, keepdims=True))
    else:
        g_alpha = g_used
    g_e = alpha * (g_alpha - (g_alpha * alpha).sum(axis=-1, keepdims=True))
    if grad_logits is not None:
        g_e = g_e + grad_logits
    dl = np.where(pre > 0, 1.0, slope)
    if params.score == "static":
        g_pre = g_e * dl
        g_u = g_pre.sum(axis=2)
        g_v = g_pre.sum(axis=1)
        a_src, a_dst = params.a[:, 0, :], params.a[:, 1, :]
        g_a = np.stack([np.einsum("hn,hnf->hf", g_u, z), np.einsum("hn,hnf->hf", g_v, z)], axis=1)
        g_z = g_z + g_u[..., None] * a_src[:, None, :] + g_v[..., None] * a_dst[:, None, :]
        g_U = None
        g_x = np.zeros_like(x)
    else:
        act = t["act"]
        g_a = np.einsum("hij,hijf->hf", g_e, act)
        g_pre = g_e[..., None] * params.a[:, None, None, :] * dl
        g_q = g_pre.sum(axis=2)
        g_z = g_z + g_pre.sum(axis=1)
        g_U = np.einsum("ne,hnf->hef", x, g_q)
        g_x = np.einsum("hnf,hef->ne", g_q, params.U)
    g_W = np.einsum("ne,hnf->hef", x, g_z)
    g_x = g_x + np.einsum("hnf,hef->ne", g_z, params.W)
    grads = GATParams(W=g_W, a=g_a, U=g_U, score=params.score, leaky_slope=slope, dropout_p=params.dropout_p)
    return grads, g_x


# ---------------------------------------------------------------------------
# finite-difference checking


GRAD_FLOOR = 1e-6
KINK_TOLERANCE = 1e-5


class GradOp:
    """Adapter used by :func:`grad_check`.

    ``forward(variables)`` maps a dict of arrays to a tuple of output arrays
    plus an opaque tape; ``backward(tape, upstream)`` returns a dict of
    gradients keyed like ``variables``.
    """

    def __init__(self, forward: Callable, backward: Callable):
        self.forward = forward
        self.backward = backward


def grad_check(op: GradOp, params: dict, inputs: dict | None = None, eps: float = 1e-5, seed: int = 0,
               floor: float = GRAD_FLOOR, stats: dict | None = None) -> float:
    """Max relative error between analytic and central-difference gradients.

    The scalar checked is a fixed random projection of every output. The
    relative error of a coordinate is ``|a - n| / max(|a|, |n|, floor)``; the
    floor keeps structurally zero gradients (softmax shift invariance) from
    turning round-off into a relative error of 1.

    Coordinates whose stencil straddles a kink (LeakyReLU, max pooling) are
    skipped: there the central differences at ``eps`` and ``eps / 2``
    disagree, which a smooth function never does at this precision. Only
    numerical values enter that test, so it cannot hide a wrong analytic
    gradient. ``stats``, if given, receives ``checked`` and ``kinks`` counts.
    """
    if not 1e-7 <= eps <= 1e-3:
        raise ValueError("eps must lie in [1e-7, 1e-3]")
    variables = {**params, **(inputs or {})}
    variables = {k: np.array(v, dtype=np.float64) for k, v in variables.items()}
    outputs, tape = op.forward(variables)
    rng = np.random.default_rng(seed)
    weights = [rng.standard_normal(np.shape(o)) for o in outputs]
    for o in outputs:
        if not np.all(np.isfinite(o)):
            raise FloatingPointError("non-finite output in gradient check")
    analytic = op.backward(tape, tuple(weights))

    def objective() -> float:
        outs, _ = op.forward(variables)
        total = 0.0
        for w, o in zip(weights, outs):
            if not np.all(np.isfinite(o)):
                raise FloatingPointError("non-finite intermediate in gradient check")
            total += float(np.sum(w * o))
        return total

    def central(flat, idx, h) -> float:
        orig = flat[idx]
        flat[idx] = orig + h
        fp = objective()
        flat[idx] = orig - h
        fm = objective()
        flat[idx] = orig
        return (fp - fm) / (2 * h)

    worst = 0.0
    checked = kinks = 0
    for name, arr in variables.items():
        ga = analytic.get(name)
        ga = np.zeros_like(arr) if ga is None else np.asarray(ga)
        flat = arr.reshape(-1)
        gaf = ga.reshape(-1)
        for idx in range(flat.size):
            num = central(flat, idx, eps)
            err = abs(gaf[idx] - num) / max(abs(gaf[idx]), abs(num), floor)
            if err > KINK_TOLERANCE:
                half = central(flat, idx, eps / 2)
                if abs(half - num) / max(abs(half), abs(num), floor) > KINK_TOLERANCE:
                    kinks += 1
                    continue
            checked += 1
            worst = max(worst, err)
    if stats is not None:
        stats.update(checked=checked, kinks=kinks)
    return worst


def self_attention_op(params: SelfAttentionParams) -> tuple[GradOp, dict]:
    """Gradient-check adapter; the returned dict holds the parameter arrays."""

    def build(v):
        return SelfAttentionParams(**{k: v[k] for k in params.arrays()})

    def forward(v):
        p = build(v)
        emb, tape = self_attention_forward(p, v["grid"])
        return (emb,), (tape, p)

    def backward(state, upstream):
        tape, p = state
        grads, g_grid = self_attention_backward(tape, upstream[0], p)
        out = grads.arrays()
        out["grid"] = g_grid
        return out

    return GradOp(forward, backward), params.arrays()


def gat_op(params: GATParams, logit_path: bool = True) -> tuple[GradOp, dict]:
    """Adapter exposing node outputs and, optionally, raw attention scores."""

    def build(v):
        return GATParams(W=v["W"], a=v["a"], U=v.get("U"), score=params.score,
                         leaky_slope=params.leaky_slope, dropout_p=params.dropout_p)

    def forward(v):
        p = build(v)
        out, att, tape = gat_forward(p, v["nodes"], train_mode=False)
        outs = (out, att.logits) if logit_path else (out,)
        return outs, (tape, p)

    def backward(state, upstream):
        tape, p = state
        g_logits = upstream[1] if logit_path else None
        grads, g_x = gat_backward(tape, upstream[0], p, grad_logits=g_logits)
        out = grads.arrays()
        out["nodes"] = g_x
        return out

    return GradOp(forward, backward), params.arrays()
