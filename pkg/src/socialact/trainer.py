"""Adam optimisation, two-stage training, inference and evaluation modes."""
from __future__ import annotations

import csv
import io
import logging
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from .features import FeatureBatch
from .losses import LossWeights, pool_group
from .metrics import (
    DetectionAccumulator,
    EvalReport,
    SocialPrediction,
    membership_counts,
    mpca,
    social_counts,
)
from .model import ModelConfig, SocialModel
from .partition import affinity_from_logits, spectral_partition
from .scene import LabelSet, Partition, Scene

log = logging.getLogger(__name__)

EVAL_MODES = ("group", "individuals", "cluster", "learn2cluster")


class TrainingError(RuntimeError):
    pass


@dataclass
class AdamState:
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adam_step(params: dict, grads: dict, state: AdamState, lr: float) -> None:
    """Bias-corrected Adam update, applied in place."""
    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise FloatingPointError(f"non-finite gradient for parameter {name}")
    state.step += 1
    t = state.step
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1 ** t
    c2 = 1.0 - b2 ** t
    for name, p in params.items():
        g = grads[name]
        if name not in state.m:
            state.m[name] = np.zeros_like(p)
            state.v[name] = np.zeros_like(p)
        m, v = state.m[name], state.v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        p -= lr * (m / c1) / (np.sqrt(v / c2) + state.eps)


@dataclass(frozen=True)
class TrainConfig:
    """Desk-scale defaults; stage 1 bypasses the graph attention block."""

    stage1_epochs: int = 40
    stage2_epochs: int = 60
    batch_size: int = 4
    lr_start: float = 1e-3
    lr_end: float = 1e-4
    weights: LossWeights = field(default_factory=LossWeights)
    seed: int = 0
    task: str = "social"
    model: ModelConfig = field(default_factory=ModelConfig)

    def __post_init__(self):
        if self.stage1_epochs < 0 or self.stage2_epochs < 0 or self.stage1_epochs + self.stage2_epochs < 1:
            raise ValueError("epoch counts must be non-negative and not both zero")
        if self.batch_size < 1:
            raise ValueError("batch_size must be positive")
        if self.lr_start < 0 or self.lr_end < 0:
            raise ValueError("learning rates must be non-negative")
        if self.task not in ("group", "social"):
            raise ValueError(f"task must be group or social, got {self.task!r}")

    @property
    def epochs(self) -> int:
        return self.stage1_epochs + self.stage2_epochs

    def lr_at(self, epoch: int) -> float:
        if self.epochs == 1:
            return self.lr_start
        frac = epoch / (self.epochs - 1)
        return self.lr_start + (self.lr_end - self.lr_start) * frac

    def to_dict(self) -> dict:
        return asdict(self)


LOG_FIELDS = ("epoch", "stage", "lr", "loss", "group", "individual", "edge")


@dataclass
class TrainResult:
    model: SocialModel
    log: list  # one dict per epoch

    def log_csv(self) -> str:
        buf = io.StringIO()
        w = csv.DictWriter(buf, fieldnames=LOG_FIELDS, lineterminator="\n")
        w.writeheader()
        for row in self.log:
            w.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in row.items()})
        return buf.getvalue()


def _check_dims(scenes, batches, cfg: ModelConfig):
    if not scenes:
        raise ValueError("training set is empty")
    if len(scenes) != len(batches):
        raise ValueError("scenes and feature batches differ in length")
    for s, b in zip(scenes, batches):
        if b.n_actors != s.n_actors:
            raise ValueError(f"{s.scene_id}: {b.n_actors} feature maps for {s.n_actors} actors")
        if (b.P, b.D, b.D_g) != (cfg.P, cfg.D, cfg.D_g):
            raise ValueError(f"{s.scene_id}: feature dims {(b.P, b.D, b.D_g)} do not match model "
                             f"{(cfg.P, cfg.D, cfg.D_g)}")


def train(scenes: list[Scene], batches: list[FeatureBatch], cfg: TrainConfig, labels: LabelSet,
          model: SocialModel | None = None) -> TrainResult:
    """Two-stage training. Returns the trained model and a per-epoch log.

    Stage 1 feeds self-attention embeddings straight to the heads; stage 2
    runs the whole network (with the edge loss when ``task == "social"``).
    Mini-batch gradients are averaged over scenes.
    """
    _check_dims(scenes, batches, cfg.model)
    model = model.copy() if model is not None else SocialModel.init(cfg.model, cfg.seed)
    params = model.params()
    state = AdamState()
    rows = []
    for epoch in range(cfg.epochs):
        t0 = time.perf_counter()
        stage = 1 if epoch < cfg.stage1_epochs else 2
        use_gat = stage == 2
        lr = cfg.lr_at(epoch)
        order = np.random.default_rng([cfg.seed, epoch, 0x0DE]).permutation(len(scenes))
        sums = {"loss": 0.0, "group": 0.0, "individual": 0.0, "edge": 0.0}
        for start in range(0, len(order), cfg.batch_size):
            chunk = order[start:start + cfg.batch_size]
            acc = {k: np.zeros_like(v) for k, v in params.items()}
            for idx in chunk:
                scene = scenes[idx]
                res, grads = model.loss_and_grads(
                    scene, batches[idx], cfg.task, cfg.weights, labels, use_gat=use_gat,
                    train_mode=True, dropout_seed=[cfg.seed, epoch, int(idx)],
                )
                if not np.isfinite(res.total):
                    raise TrainingError(f"non-finite loss at epoch {epoch}, scene {scene.scene_id}")
                sums["loss"] += res.total
                for k in ("group", "individual", "edge"):
                    sums[k] += res.terms[k]
                for k, g in grads.items():
                    acc[k] += g
            scale = 1.0 / len(chunk)
            for g in acc.values():
                g *= scale
            try:
                adam_step(params, acc, state, lr)
            except FloatingPointError as exc:
                raise TrainingError(f"epoch {epoch}: {exc}") from None
        row = {"epoch": epoch, "stage": stage, "lr": lr}
        row.update({k: v / len(scenes) for k, v in sums.items()})
        rows.append(row)
        log.info("epoch %d stage %d loss %.4f edge %.4f (%.2fs)", epoch, stage, row["loss"], row["edge"],
                 time.perf_counter() - t0)
    return TrainResult(model, rows)


def _argmax(v) -> int:
    return int(np.argmax(v))


def infer_social(model: SocialModel, batch: FeatureBatch, mode: str = "learn2cluster",
                 k_max: int | None = None) -> SocialPrediction:
    """Predict groups, group activities and actions with dropout off.

    ``group`` forces one group and ``individuals`` forces singletons; the two
    clustering modes partition the learned affinities (they differ only in
    how the model was trained).
    """
    if mode not in EVAL_MODES:
        raise ValueError(f"unknown mode {mode!r}; expected one of {EVAL_MODES}")
    n = batch.n_actors
    fwd = model.forward(batch, [], use_gat=True, train_mode=False)
    if mode == "group":
        part = Partition.single(n)
    elif mode == "individuals":
        part = Partition.singletons(n)
    else:
        aff = affinity_from_logits(fwd.gat_logits)
        part, _ = spectral_partition(aff, k_max if k_max is not None else min(n, 6))
    h = model.head
    activities = [_argmax(pool_group(fwd.nodes, g, batch.clip, h) @ h.Wg + h.bg) for g in part.groups]
    actions = [_argmax(row) for row in fwd.action_logits]
    return SocialPrediction(part, activities, actions)


def evaluate(model: SocialModel, scenes: list[Scene], batches: list[FeatureBatch], mode: str,
             labels: LabelSet, detections: dict | None = None, k_max: int | None = None) -> EvalReport:
    """Corpus-level metrics, micro-averaged over (non-N/A) actors.

    ``detections`` optionally maps scene ids to ``(boxes, scores)`` aligned
    with the feature maps in the batch; mAPs are then reported too.
    """
    if mode not in EVAL_MODES:
        raise ValueError(f"unknown mode {mode!r}; expected one of {EVAL_MODES}")
    na = labels.na_action
    conf_soc = np.zeros((labels.n_social, labels.n_social))
    conf_act = np.zeros((labels.n_actions, labels.n_actions))
    mem_ok = mem_n = soc_ok = soc_n = ind_ok = ind_n = 0
    multi = 0
    det_acc = DetectionAccumulator(labels) if detections else None
    for scene, batch in zip(scenes, batches):
        pred = infer_social(model, batch, mode, k_max)
        keep = np.ones(scene.n_actors, dtype=bool) if na is None else scene.actions != na
        c, t = membership_counts(pred.partition, scene.partition, keep)
        mem_ok, mem_n = mem_ok + c, mem_n + t
        c, t = social_counts(pred, scene, labels)
        soc_ok, soc_n = soc_ok + c, soc_n + t
        gt_act = scene.actions
        pa = np.asarray(pred.actor_action)
        ind_ok += int((pa[keep] == gt_act[keep]).sum())
        ind_n += int(keep.sum())
        np.add.at(conf_soc, (scene.actor_group_activity()[keep], pred.actor_activity()[keep]), 1)
        np.add.at(conf_act, (gt_act[keep], pa[keep]), 1)
        multi += len(scene.groups) > 1
        if det_acc is not None and scene.scene_id in detections:
            boxes, scores = detections[scene.scene_id]
            det_acc.add_scene(scene, pred, boxes, scores)
    mp, _ = mpca(conf_soc, labels.merge_map, labels.social_labels)

    def per_class(conf, names):
        sup = conf.sum(axis=1)
        return {names[i]: float(conf[i, i] / sup[i]) for i in range(len(names)) if sup[i] > 0}

    return EvalReport(
        mode=mode,
        membership_acc=mem_ok / mem_n if mem_n else 1.0,
        social_acc=soc_ok / soc_n if soc_n else 1.0,
        individual_acc=ind_ok / ind_n if ind_n else 1.0,
        mpca=mp,
        per_class_social=per_class(conf_soc, labels.social_labels),
        per_class_action=per_class(conf_act, labels.action_labels),
        confusion_social=conf_soc,
        confusion_action=conf_act,
        counts={"scenes": len(scenes), "actors": mem_n, "multi_group_scenes": int(multi)},
        map_per_task=det_acc.results() if det_acc is not None else None,
    )
