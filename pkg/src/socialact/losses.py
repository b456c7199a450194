"""Group pooling, classification heads and the training objectives."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .attention import _ParamsMixin, glorot
from .scene import Scene, adjacency_target

PROB_CLAMP = 1e-7


@dataclass
class HeadParams(_ParamsMixin):
    group_proj: np.ndarray  # (D_g, E)
    Wg: np.ndarray  # (E, C_social)
    bg: np.ndarray
    Wa: np.ndarray  # (E, C_action)
    ba: np.ndarray

    @classmethod
    def init(cls, D_g: int, E: int, n_social: int, n_action: int, rng: np.random.Generator) -> "HeadParams":
        return cls(
            group_proj=glorot(rng, (D_g, E), D_g, E),
            Wg=glorot(rng, (E, n_social), E, n_social),
            bg=np.zeros(n_social),
            Wa=glorot(rng, (E, n_action), E, n_action),
            ba=np.zeros(n_action),
        )

    def zeros_like(self) -> "HeadParams":
        return HeadParams(**{k: np.zeros_like(v) for k, v in self.arrays().items()})


@dataclass(frozen=True)
class LossWeights:
    lambda_group_task: float = 10.0
    lambda1: float = 5.0
    lambda2: float = 2.0

    def __post_init__(self):
        if min(self.lambda_group_task, self.lambda1, self.lambda2) < 0:
            raise ValueError("loss weights must be non-negative")


@dataclass
class LossResult:
    total: float
    terms: dict
    grad_group: list = field(default_factory=list)  # one gradient per pooled group
    grad_actions: np.ndarray | None = None
    grad_gat_logits: np.ndarray | None = None


def pool_group(node_embeds: np.ndarray, members, clip: np.ndarray, params: HeadParams) -> np.ndarray:
    """Coordinate-wise max over the members' embeddings plus a projection of the clip."""
    idx = sorted(members)
    if not idx:
        raise ValueError("cannot pool an empty group")
    return node_embeds[idx].max(axis=0) + clip @ params.group_proj


def pool_group_backward(node_embeds, members, clip, grad_pooled):
    """Returns (grad wrt node_embeds, grad wrt group_proj); max ties route to the first member."""
    idx = np.array(sorted(members))
    winners = idx[np.argmax(node_embeds[idx], axis=0)]
    g_nodes = np.zeros_like(node_embeds)
    np.add.at(g_nodes, (winners, np.arange(node_embeds.shape[1])), grad_pooled)
    return g_nodes, np.outer(clip, grad_pooled)


def log_softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=-1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))


def cross_entropy(logits, label: int) -> tuple[float, np.ndarray]:
    logits = np.asarray(logits, dtype=float)
    if not 0 <= label < logits.shape[-1]:
        raise ValueError(f"label {label} out of range for {logits.shape[-1]} classes")
    logp = log_softmax(logits)
    grad = np.exp(logp)
    grad[label] -= 1.0
    return float(-logp[label]), grad


def _sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def symmetrized_scores(gat_logits: np.ndarray) -> np.ndarray:
    e = np.asarray(gat_logits, dtype=float).mean(axis=0)
    return 0.5 * (e + e.T)


def edge_bce_loss(gat_logits: np.ndarray, target: np.ndarray) -> tuple[float, np.ndarray]:
    """Binary cross-entropy between sigmoid(symmetrised, head-averaged scores) and co-membership.

    Only off-diagonal pairs count. Probabilities are clamped to
    [1e-7, 1 - 1e-7]; clamped entries pass no gradient.
    """
    gat_logits = np.asarray(gat_logits, dtype=float)
    H, n, _ = gat_logits.shape
    target = np.asarray(target, dtype=float)
    if target.shape != (n, n):
        raise ValueError(f"target shape {target.shape} does not match logits {gat_logits.shape}")
    if n < 2:
        return 0.0, np.zeros_like(gat_logits)
    s = symmetrized_scores(gat_logits)
    p_raw = _sigmoid(s)
    p = np.clip(p_raw, PROB_CLAMP, 1 - PROB_CLAMP)
    off = ~np.eye(n, dtype=bool)
    count = n * (n - 1)
    bce = -(target * np.log(p) + (1 - target) * np.log1p(-p))
    loss = float(bce[off].sum() / count)
    live = off & (p_raw > PROB_CLAMP) & (p_raw < 1 - PROB_CLAMP)
    g_s = np.where(live, (p_raw - target) / count, 0.0)
    g_e = 0.5 * (g_s + g_s.T)
    return loss, np.broadcast_to(g_e / H, gat_logits.shape).copy()


def _actions_term(scene: Scene, logits_actions) -> tuple[float, np.ndarray]:
    logits_actions = np.asarray(logits_actions, dtype=float)
    if logits_actions.shape[0] != scene.n_actors:
        raise ValueError("one action logit vector per actor is required")
    total = 0.0
    grads = np.zeros_like(logits_actions)
    for n, actor in enumerate(scene.actors):
        loss, g = cross_entropy(logits_actions[n], actor.action)
        total += loss
        grads[n] = g
    return total, grads


def total_loss_group(scene: Scene, logits_group, logits_actions, weights: LossWeights,
                     group_label: int | None = None) -> LossResult:
    """Single-group objective: CE on the group activity plus lambda times the summed action CE.

    ``group_label`` defaults to the activity of the scene's only group.
    """
    if group_label is None:
        if len(scene.groups) != 1:
            raise ValueError("scene has several groups; pass group_label explicitly")
        group_label = scene.groups[0].activity
    l_gp, g_gp = cross_entropy(logits_group, group_label)
    l_ind, g_ind = _actions_term(scene, logits_actions)
    lam = weights.lambda_group_task
    return LossResult(
        total=l_gp + lam * l_ind,
        terms={"group": l_gp, "individual": l_ind, "edge": 0.0},
        grad_group=[g_gp],
        grad_actions=lam * g_ind,
    )


def total_loss_social(scene: Scene, logits_social, logits_actions, gat_logits, weights: LossWeights) -> LossResult:
    """Summed per-group social CE + lambda1 * action CE + lambda2 * edge BCE.

    ``logits_social[s]`` belongs to ``scene.groups[s]``. ``gat_logits`` may be
    None when the graph attention block is bypassed; the edge term is then 0.
    """
    if len(logits_social) != len(scene.groups):
        raise ValueError("one social logit vector per ground-truth group is required")
    l_sgp = 0.0
    g_groups = []
    for logits, group in zip(logits_social, scene.groups):
        loss, g = cross_entropy(logits, group.activity)
        l_sgp += loss
        g_groups.append(g)
    l_ind, g_ind = _actions_term(scene, logits_actions)
    total = l_sgp + weights.lambda1 * l_ind
    l_c, g_c = 0.0, None
    if gat_logits is not None:
        l_c, g_c = edge_bce_loss(gat_logits, adjacency_target(scene))
        if weights.lambda2 != 0:
            total = total + weights.lambda2 * l_c
        g_c = weights.lambda2 * g_c
    return LossResult(
        total=total,
        terms={"group": l_sgp, "individual": l_ind, "edge": l_c},
        grad_group=g_groups,
        grad_actions=weights.lambda1 * g_ind,
        grad_gat_logits=g_c,
    )
