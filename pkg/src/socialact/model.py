"""The full network: self-attention -> graph attention -> pooling and heads.

Checkpoint container (little-endian)::

    magic       8 bytes  b"SGCKPT\\x00\\x01"
    version     uint32
    header_len  uint32
    header      UTF-8 JSON: model config, label-set digest, tensor names and
                shapes, free-form config echo
    body        float64 tensors in header order, row-major
"""
from __future__ import annotations

import json
import struct
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .attention import (
    GATParams,
    GradOp,
    SelfAttentionParams,
    gat_backward,
    gat_forward,
    self_attention_backward,
    self_attention_forward,
)
from .features import FeatureBatch
from .losses import (
    HeadParams,
    LossResult,
    LossWeights,
    pool_group,
    pool_group_backward,
    total_loss_group,
    total_loss_social,
)
from .scene import LabelSet, Scene, scene_group_activity

CKPT_MAGIC = b"SGCKPT\x00\x01"
CKPT_VERSION = 1


class CheckpointError(ValueError):
    pass


@dataclass(frozen=True)
class ModelConfig:
    P: int = 5
    D: int = 32
    D_g: int = 64
    E: int = 32
    H: int = 8
    n_social: int = 6
    n_action: int = 6
    score: str = "dynamic"
    leaky_slope: float = 0.2
    dropout_p: float = 0.5

    def __post_init__(self):
        if self.D % 8:
            raise ValueError(f"D={self.D} must be divisible by 8")
        if min(self.P, self.D, self.D_g, self.E, self.H, self.n_social, self.n_action) < 1:
            raise ValueError("model dimensions must be positive")

    @classmethod
    def for_labels(cls, labels: LabelSet, **kw) -> "ModelConfig":
        return cls(n_social=labels.n_social, n_action=labels.n_actions, **kw)


@dataclass
class Forward:
    emb: np.ndarray
    nodes: np.ndarray
    action_logits: np.ndarray
    pooled: list
    social_logits: list
    groups: list
    clip: np.ndarray
    gat_logits: np.ndarray | None = None
    gat_coeffs: np.ndarray | None = None
    sa_tape: object = None
    gat_tape: object = None


class SocialModel:
    def __init__(self, config: ModelConfig, sa: SelfAttentionParams, gat: GATParams, head: HeadParams):
        self.config = config
        self.sa = sa
        self.gat = gat
        self.head = head

    @classmethod
    def init(cls, config: ModelConfig, seed: int = 0) -> "SocialModel":
        rng = np.random.default_rng([seed, 0xA11])
        c = config
        return cls(
            c,
            SelfAttentionParams.init(c.P, c.D, c.E, rng),
            GATParams.init(c.E, c.E, c.H, rng, score=c.score, leaky_slope=c.leaky_slope, dropout_p=c.dropout_p),
            HeadParams.init(c.D_g, c.E, c.n_social, c.n_action, rng),
        )

    def params(self) -> dict[str, np.ndarray]:
        """Live references to every parameter array, keyed ``block.name``."""
        out = {}
        for prefix, block in (("sa", self.sa), ("gat", self.gat), ("head", self.head)):
            for k, v in block.arrays().items():
                out[f"{prefix}.{k}"] = v
        return out

    def with_params(self, arrays: dict) -> "SocialModel":
        sa = SelfAttentionParams(**{k: arrays[f"sa.{k}"] for k in self.sa.arrays()})
        g = self.gat
        gat = GATParams(W=arrays["gat.W"], a=arrays["gat.a"], U=arrays.get("gat.U"), score=g.score,
                        leaky_slope=g.leaky_slope, dropout_p=g.dropout_p)
        head = HeadParams(**{k: arrays[f"head.{k}"] for k in self.head.arrays()})
        return SocialModel(self.config, sa, gat, head)

    def copy(self) -> "SocialModel":
        return self.with_params({k: v.copy() for k, v in self.params().items()})

    # -- forward / backward ------------------------------------------------

    def forward(self, batch: FeatureBatch, groups, use_gat: bool = True, train_mode: bool = False,
                dropout_seed=0, grids: np.ndarray | None = None) -> Forward:
        grids = batch.grids if grids is None else grids
        clip = batch.clip
        emb, sa_tape = self_attention_forward(self.sa, grids, train_mode)
        gat_logits = gat_coeffs = gat_tape = None
        if use_gat:
            nodes, att, gat_tape = gat_forward(self.gat, emb, train_mode, dropout_seed)
            gat_logits, gat_coeffs = att.logits, att.coeffs
        else:
            nodes = emb
        h = self.head
        action_logits = nodes @ h.Wa + h.ba
        groups = [sorted(g) for g in groups]
        pooled = [pool_group(nodes, g, clip, h) for g in groups]
        social_logits = [p @ h.Wg + h.bg for p in pooled]
        return Forward(emb, nodes, action_logits, pooled, social_logits, groups, clip,
                       gat_logits, gat_coeffs, sa_tape, gat_tape)

    def backward(self, fwd: Forward, grad_social, grad_actions, grad_gat_logits=None) -> tuple[dict, np.ndarray]:
        """Parameter gradients (keyed like :meth:`params`) and the grid gradient."""
        h = self.head
        gh = h.zeros_like()
        g_nodes = np.zeros_like(fwd.nodes)
        if grad_actions is not None:
            gh.Wa += fwd.nodes.T @ grad_actions
            gh.ba += grad_actions.sum(axis=0)
            g_nodes += grad_actions @ h.Wa.T
        for members, pooled, g in zip(fwd.groups, fwd.pooled, grad_social):
            gh.Wg += np.outer(pooled, g)
            gh.bg += g
            gn, gproj = pool_group_backward(fwd.nodes, members, fwd.clip, h.Wg @ g)
            g_nodes += gn
            gh.group_proj += gproj
        if fwd.gat_tape is not None:
            ggat, g_emb = gat_backward(fwd.gat_tape, g_nodes, self.gat, grad_logits=grad_gat_logits)
            ggat_arrays = ggat.arrays()
        else:
            g_emb = g_nodes
            ggat_arrays = {k: np.zeros_like(v) for k, v in self.gat.arrays().items()}
        gsa, g_grid = self_attention_backward(fwd.sa_tape, g_emb, self.sa)
        grads = {f"sa.{k}": v for k, v in gsa.arrays().items()}
        grads.update({f"gat.{k}": v for k, v in ggat_arrays.items()})
        grads.update({f"head.{k}": v for k, v in gh.arrays().items()})
        return grads, g_grid

    # -- objectives --------------------------------------------------------

    def scene_loss(self, scene: Scene, batch: FeatureBatch, task: str, weights: LossWeights,
                   labels: LabelSet, use_gat: bool = True, train_mode: bool = False, dropout_seed=0,
                   grids: np.ndarray | None = None) -> tuple[LossResult, Forward]:
        """Forward pass plus the task objective (``group``: single pooled group;
        ``social``: one pooled group per ground-truth group)."""
        if batch.n_actors != scene.n_actors:
            raise ValueError(f"{scene.scene_id}: {batch.n_actors} feature maps for {scene.n_actors} actors")
        if task == "group":
            fwd = self.forward(batch, [range(scene.n_actors)], use_gat, train_mode, dropout_seed, grids)
            res = total_loss_group(scene, fwd.social_logits[0], fwd.action_logits, weights,
                                   group_label=scene_group_activity(scene, labels))
        elif task == "social":
            fwd = self.forward(batch, [g.members for g in scene.groups], use_gat, train_mode, dropout_seed, grids)
            res = total_loss_social(scene, fwd.social_logits, fwd.action_logits, fwd.gat_logits, weights)
        else:
            raise ValueError(f"unknown task {task!r}")
        return res, fwd

    def loss_and_grads(self, scene, batch, task, weights, labels, use_gat=True, train_mode=False, dropout_seed=0):
        res, fwd = self.scene_loss(scene, batch, task, weights, labels, use_gat, train_mode, dropout_seed)
        grads, _ = self.backward(fwd, res.grad_group, res.grad_actions, res.grad_gat_logits)
        return res, grads


def objective_op(model: SocialModel, scene: Scene, batch: FeatureBatch, task: str, weights: LossWeights,
                 labels: LabelSet, use_gat: bool = True) -> tuple[GradOp, dict]:
    """Gradient-check adapter for the whole objective; variables are every
    parameter plus the actor grids (``input.grids``)."""

    def forward(v):
        m = model.with_params(v)
        res, fwd = m.scene_loss(scene, batch, task, weights, labels, use_gat, grids=v["input.grids"])
        return (np.array(res.total),), (m, res, fwd)

    def backward(state, upstream):
        m, res, fwd = state
        scale = float(upstream[0])
        grads, g_grid = m.backward(fwd, res.grad_group, res.grad_actions, res.grad_gat_logits)
        out = {k: scale * g for k, g in grads.items()}
        out["input.grids"] = scale * g_grid
        return out

    variables = dict(model.params())
    variables["input.grids"] = batch.grids
    return GradOp(forward, backward), variables


# ---------------------------------------------------------------------------
# checkpoints


def checkpoint_bytes(model: SocialModel, labels: LabelSet, echo: dict | None = None) -> bytes:
    params = model.params()
    names = sorted(params)
    header = {
        "model": asdict(model.config),
        "labels_digest": labels.digest(),
        "tensors": [[n, list(params[n].shape)] for n in names],
        "config": echo or {},
    }
    head = json.dumps(header, sort_keys=True).encode("utf-8")
    body = b"".join(np.ascontiguousarray(params[n], dtype="<f8").tobytes() for n in names)
    return CKPT_MAGIC + struct.pack("<II", CKPT_VERSION, len(head)) + head + body


def model_from_checkpoint_bytes(data: bytes, labels: LabelSet | None = None) -> tuple[SocialModel, dict]:
    if data[:8] != CKPT_MAGIC:
        raise CheckpointError("not a checkpoint (bad magic)")
    version, hlen = struct.unpack_from("<II", data, 8)
    if version != CKPT_VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    header = json.loads(data[16:16 + hlen].decode("utf-8"))
    if labels is not None and header["labels_digest"] != labels.digest():
        raise CheckpointError("checkpoint was trained with a different label set")
    offset = 16 + hlen
    arrays = {}
    for name, shape in header["tensors"]:
        count = int(np.prod(shape)) if shape else 1
        arrays[name] = np.frombuffer(data, dtype="<f8", count=count, offset=offset).reshape(shape).astype(np.float64)
        offset += 8 * count
    if offset != len(data):
        raise CheckpointError("checkpoint body size does not match header")
    config = ModelConfig(**header["model"])
    template = SocialModel.init(config, seed=0)
    return template.with_params(arrays), header


def save_checkpoint(path, model: SocialModel, labels: LabelSet, echo: dict | None = None) -> None:
    Path(path).write_bytes(checkpoint_bytes(model, labels, echo))


def load_checkpoint(path, labels: LabelSet | None = None) -> tuple[SocialModel, dict]:
    return model_from_checkpoint_bytes(Path(path).read_bytes(), labels)
