"""Finite-difference gradient suite over every differentiable block."""
from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from .attention import GATParams, GradOp, SelfAttentionParams, gat_op, grad_check, self_attention_op
from .features import SynthConfig, synth_scene
from .losses import HeadParams, LossWeights, edge_bce_loss, pool_group, pool_group_backward, total_loss_social
from .model import ModelConfig, SocialModel, objective_op
from .scene import LabelSet, adjacency_target

TOLERANCE = 1e-4


@dataclass(frozen=True)
class CheckResult:
    name: str
    max_rel_error: float
    seconds: float
    checked: int = 0
    kinks: int = 0

    @property
    def ok(self) -> bool:
        return self.max_rel_error <= TOLERANCE


def edge_bce_op(target: np.ndarray) -> GradOp:
    def forward(v):
        loss, grad = edge_bce_loss(v["logits"], target)
        return (np.array(loss),), grad

    def backward(grad, upstream):
        return {"logits": float(upstream[0]) * grad}

    return GradOp(forward, backward)


def heads_op(scene, clip: np.ndarray, weights: LossWeights) -> GradOp:
    """Pooling plus both classification heads on fixed clip features."""
    groups = [sorted(g.members) for g in scene.groups]

    def forward(v):
        h = HeadParams(**{k: v[k] for k in ("group_proj", "Wg", "bg", "Wa", "ba")})
        nodes = v["nodes"]
        pooled = [pool_group(nodes, g, clip, h) for g in groups]
        res = total_loss_social(scene, [p @ h.Wg + h.bg for p in pooled], nodes @ h.Wa + h.ba, None, weights)
        return (np.array(res.total),), (h, nodes, pooled, res)

    def backward(state, upstream):
        h, nodes, pooled, res = state
        s = float(upstream[0])
        g = h.zeros_like()
        g_nodes = res.grad_actions @ h.Wa.T
        g.Wa += nodes.T @ res.grad_actions
        g.ba += res.grad_actions.sum(axis=0)
        for members, p, gg in zip(groups, pooled, res.grad_group):
            g.Wg += np.outer(p, gg)
            g.bg += gg
            gn, gproj = pool_group_backward(nodes, members, clip, h.Wg @ gg)
            g_nodes += gn
            g.group_proj += gproj
        out = {k: s * a for k, a in g.arrays().items()}
        out["nodes"] = s * g_nodes
        return out

    return GradOp(forward, backward)


def _scene(seed: int):
    cfg = SynthConfig(n_scenes=1, actors_per_scene=(4, 4), groups_per_scene=(2, 2), P=3, D=8, D_g=8,
                      test_fraction=0.0, seed=seed)
    return synth_scene(cfg, 0)


def run_suite(seed: int = 0, eps: float = 1e-5) -> list[CheckResult]:
    """Runs every check on small seeded problems (N=4, E=8, H=2)."""
    rng = np.random.default_rng([seed, 0x6C])
    labels = LabelSet.cad()
    scene, batch = _scene(seed)
    weights = LossWeights(lambda1=5.0, lambda2=2.0)
    checks = []

    def timed(name, fn):
        stats = {}
        t0 = time.perf_counter()
        err = fn(stats)
        checks.append(CheckResult(name, float(err), time.perf_counter() - t0, stats["checked"], stats["kinks"]))

    sa = SelfAttentionParams.init(3, 8, 8, rng)
    op, params = self_attention_op(sa)
    timed("self_attention", lambda st: grad_check(op, params, {"grid": batch.grids}, eps, seed, stats=st))

    nodes = rng.standard_normal((4, 8))
    for score in ("static", "dynamic"):
        gat = GATParams.init(8, 8, 2, rng, score=score)
        for path in (False, True):
            op, params = gat_op(gat, logit_path=path)
            label = f"gat_{score}" + ("_with_logits" if path else "")
            timed(label, lambda st: grad_check(op, params, {"nodes": nodes}, eps, seed, stats=st))

    logits = rng.standard_normal((2, 4, 4))
    bce = edge_bce_op(adjacency_target(scene))
    timed("edge_bce", lambda st: grad_check(bce, {"logits": logits}, None, eps, seed, stats=st))

    head = HeadParams.init(8, 8, labels.n_social, labels.n_actions, rng)
    heads = heads_op(scene, batch.clip, weights)
    timed("heads_ce", lambda st: grad_check(heads, head.arrays(), {"nodes": nodes}, eps, seed, stats=st))

    for score in ("static", "dynamic"):
        cfg = ModelConfig.for_labels(labels, P=3, D=8, D_g=8, E=8, H=2, score=score)
        model = SocialModel.init(cfg, seed)
        for task in ("social", "group"):
            op, variables = objective_op(model, scene, batch, task, weights, labels, use_gat=True)
            timed(f"objective_{task}_{score}", lambda st: grad_check(op, variables, None, eps, seed, stats=st))
    return checks
