"""Evaluation for the social task: membership, social and individual accuracy,
detection mAP, and mean per-class accuracy with merged classes.

Actors whose ground-truth action is N/A are left out of every metric.
"""
from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Iterable, Sequence

import numpy as np
from scipy.optimize import linear_sum_assignment

from .scene import LabelSet, Partition, Scene


@dataclass
class SocialPrediction:
    partition: Partition
    group_activity: list  # one social label per group in partition.groups
    actor_action: list  # one action label per actor
    detections: list | None = None  # optional [(bbox, confidence)] aligned with actors

    def __post_init__(self):
        if len(self.group_activity) != len(self.partition.groups):
            raise ValueError("one activity per predicted group is required")
        if len(self.actor_action) != self.partition.n:
            raise ValueError("one action per actor is required")

    def actor_activity(self) -> np.ndarray:
        out = np.empty(self.partition.n, dtype=int)
        for g, act in zip(self.partition.groups, self.group_activity):
            out[list(g)] = act
        return out


def _included(scene: Scene | None, n: int, labels: LabelSet | None) -> np.ndarray:
    keep = np.ones(n, dtype=bool)
    if scene is not None and labels is not None and labels.na_action is not None:
        keep &= scene.actions != labels.na_action
    return keep


def _matching(pred: Partition, gt: Partition, keep: np.ndarray | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Optimal group matching. Returns (pred label per actor, matched gt label
    per predicted group, -1 when unmatched)."""
    if pred.n != gt.n:
        raise ValueError(f"prediction covers {pred.n} actors, ground truth {gt.n}")
    p_lab, g_lab = pred.labels(), gt.labels()
    if keep is None:
        keep = np.ones(pred.n, dtype=bool)
    overlap = np.zeros((len(pred), len(gt)))
    np.add.at(overlap, (p_lab[keep], g_lab[keep]), 1.0)
    rows, cols = linear_sum_assignment(overlap, maximize=True)
    match = np.full(len(pred), -1)
    match[rows] = cols
    return p_lab, match


def membership_counts(pred: Partition, gt: Partition, keep: np.ndarray | None = None) -> tuple[int, int]:
    p_lab, match = _matching(pred, gt, keep)
    g_lab = gt.labels()
    ok = match[p_lab] == g_lab
    if keep is not None:
        ok = ok[keep]
    return int(ok.sum()), int(ok.size)


def membership_accuracy(pred: Partition, gt: Partition) -> float:
    """Fraction of actors whose predicted group is matched to their true group
    under the best one-to-one matching of groups."""
    correct, total = membership_counts(pred, gt)
    return correct / total if total else 1.0


def social_counts(pred: SocialPrediction, scene: Scene, labels: LabelSet | None = None) -> tuple[int, int]:
    keep = _included(scene, scene.n_actors, labels)
    gt = scene.partition
    p_lab, match = _matching(pred.partition, gt, keep)
    g_lab = gt.labels()
    member_ok = match[p_lab] == g_lab
    act_ok = pred.actor_activity() == scene.actor_group_activity()
    tp = (member_ok & act_ok)[keep]
    return int(tp.sum()), int(keep.sum())


def social_accuracy(pred: SocialPrediction, scene: Scene, labels: LabelSet | None = None) -> float:
    """True positives need both the right group and the right group activity."""
    tp, total = social_counts(pred, scene, labels)
    return tp / total if total else 1.0


def individual_accuracy(pred_actions, gt_actions, na_action: int | None = None) -> float:
    pred_actions, gt_actions = np.asarray(pred_actions), np.asarray(gt_actions)
    keep = np.ones(gt_actions.shape, dtype=bool) if na_action is None else gt_actions != na_action
    if not keep.any():
        return 1.0
    return float(np.mean(pred_actions[keep] == gt_actions[keep]))


# ---------------------------------------------------------------------------
# detection AP


def iou_xywh(a, b) -> float:
    ax, ay, aw, ah = a
    bx, by, bw, bh = b
    iw = min(ax + aw, bx + bw) - max(ax, bx)
    ih = min(ay + ah, by + bh) - max(ay, by)
    if iw <= 0 or ih <= 0:
        return 0.0
    inter = iw * ih
    return inter / (aw * ah + bw * bh - inter)


def ap_from_ranked(scores: Sequence[float], is_tp: Sequence[bool], n_pos: int) -> float:
    """All-point interpolated AP from scored hits; computed in exact rationals."""
    if n_pos <= 0:
        raise ValueError("AP is undefined without positives")
    order = sorted(range(len(scores)), key=lambda i: -scores[i])
    recalls, precisions = [Fraction(0)], [Fraction(0)]
    tp = fp = 0
    for i in order:
        if is_tp[i]:
            tp += 1
        else:
            fp += 1
        recalls.append(Fraction(tp, n_pos))
        precisions.append(Fraction(tp, tp + fp))
    recalls.append(Fraction(1))
    precisions.append(Fraction(0))
    for i in range(len(precisions) - 2, -1, -1):
        precisions[i] = max(precisions[i], precisions[i + 1])
    ap = Fraction(0)
    for i in range(1, len(recalls)):
        if recalls[i] != recalls[i - 1]:
            ap += (recalls[i] - recalls[i - 1]) * precisions[i]
    return float(ap)


def _as_det(item):
    # (bbox, score, label) or (image, bbox, score, label)
    return (0, *item) if len(item) == 3 else tuple(item)


def _as_gt(item):
    return (0, *item) if len(item) == 2 else tuple(item)


def average_precision(predictions, gts, cls, iou_thresh: float = 0.5) -> float:
    """VOC-style AP for one class.

    ``predictions`` are ``(bbox, score, label)`` or ``(image, bbox, score, label)``;
    ``gts`` are ``(bbox, label)`` or ``(image, bbox, label)``. Boxes are (x, y, w, h).
    """
    dets = [d for d in map(_as_det, predictions) if d[3] == cls]
    truth = [g for g in map(_as_gt, gts) if g[2] == cls]
    if not truth:
        raise ValueError(f"no ground truth for class {cls}")
    for d in dets:
        if not np.isfinite(d[2]):
            raise ValueError("non-finite detection score")
    used = [False] * len(truth)
    order = sorted(range(len(dets)), key=lambda i: -dets[i][2])
    hits = [False] * len(dets)
    for i in order:
        image, box, _, _ = dets[i]
        best, best_j = iou_thresh, -1
        for j, (g_image, g_box, _) in enumerate(truth):
            if used[j] or g_image != image:
                continue
            ov = iou_xywh(box, g_box)
            if ov >= best:
                best, best_j = ov, j
        if best_j >= 0:
            used[best_j] = True
            hits[i] = True
    return ap_from_ranked([d[2] for d in dets], hits, len(truth))


def map_detection(predictions, gts, iou_thresh: float = 0.5) -> tuple[float, dict]:
    """Mean AP over the classes present in the ground truth."""
    classes = sorted({_as_gt(g)[2] for g in gts})
    per_class = {c: average_precision(predictions, gts, c, iou_thresh) for c in classes}
    return (float(np.mean(list(per_class.values()))) if per_class else 0.0), per_class


def link_detections(det_boxes, det_scores, gt_boxes, iou_thresh: float = 0.5) -> list:
    """Greedy score-ordered IoU linking; returns the linked gt index (or None) per detection."""
    linked = [None] * len(det_boxes)
    used = set()
    for i in sorted(range(len(det_boxes)), key=lambda i: -det_scores[i]):
        best, best_j = iou_thresh, None
        for j, g in enumerate(gt_boxes):
            if j in used:
                continue
            ov = iou_xywh(det_boxes[i], g)
            if ov >= best:
                best, best_j = ov, j
        if best_j is not None:
            used.add(best_j)
            linked[i] = best_j
    return linked


class DetectionAccumulator:
    """Collects scored hits across scenes for the three social-task mAPs.

    Detections linked to an N/A actor are ignored; unlinked detections are
    false positives for every task.
    """

    def __init__(self, labels: LabelSet, iou_thresh: float = 0.5):
        self.labels = labels
        self.iou_thresh = iou_thresh
        self.hits = {"membership": {}, "social": {}, "individual": {}}
        self.n_pos = {"membership": {}, "social": {}, "individual": {}}

    def _add(self, task, cls, score, tp):
        self.hits[task].setdefault(cls, []).append((score, tp))

    def _pos(self, task, cls, k=1):
        self.n_pos[task][cls] = self.n_pos[task].get(cls, 0) + k

    def add_scene(self, scene: Scene, pred: SocialPrediction, det_boxes, det_scores) -> None:
        na = self.labels.na_action
        gt_boxes = [a.bbox for a in scene.actors]
        linked = link_detections(det_boxes, det_scores, gt_boxes, self.iou_thresh)
        keep_gt = _included(scene, scene.n_actors, self.labels)
        gt_part = scene.partition
        gt_lab = gt_part.labels()
        gt_act = scene.actor_group_activity()
        actions = scene.actions
        for j in np.flatnonzero(keep_gt):
            self._pos("membership", 0)
            self._pos("social", int(gt_act[j]))
            self._pos("individual", int(actions[j]))

        # group matching over linked, non-N/A detections
        pred_lab = pred.partition.labels()
        rows = [i for i, j in enumerate(linked) if j is not None and keep_gt[j]]
        overlap = np.zeros((len(pred.partition), len(gt_part)))
        for i in rows:
            overlap[pred_lab[i], gt_lab[linked[i]]] += 1
        r, c = linear_sum_assignment(overlap, maximize=True)
        match = np.full(len(pred.partition), -1)
        match[r] = c
        pred_act = pred.actor_activity()
        for i, j in enumerate(linked):
            if j is not None and na is not None and not keep_gt[j]:
                continue
            score = float(det_scores[i])
            member_ok = j is not None and match[pred_lab[i]] == gt_lab[j]
            self._add("membership", 0, score, member_ok)
            self._add("social", int(pred_act[i]), score, member_ok and pred_act[i] == gt_act[j])
            act = int(pred.actor_action[i])
            self._add("individual", act, score, j is not None and actions[j] == act)

    def results(self) -> dict:
        out = {}
        for task in self.hits:
            aps = []
            for cls, n_pos in self.n_pos[task].items():
                if n_pos == 0:
                    continue
                hits = self.hits[task].get(cls, [])
                aps.append(ap_from_ranked([h[0] for h in hits], [h[1] for h in hits], n_pos))
            out[task] = float(np.mean(aps)) if aps else 0.0
        return out


# ---------------------------------------------------------------------------
# per-class accuracy


def merge_confusion(confusion: np.ndarray, class_names: Sequence[str], merge_map: dict) -> tuple[np.ndarray, list]:
    merged_names: list[str] = []
    for name in class_names:
        m = merge_map.get(name, name)
        if m not in merged_names:
            merged_names.append(m)
    idx = np.array([merged_names.index(merge_map.get(n, n)) for n in class_names])
    k = len(merged_names)
    out = np.zeros((k, k))
    np.add.at(out, (idx[:, None], idx[None, :]), np.asarray(confusion, dtype=float))
    return out, merged_names


def mpca(confusion: np.ndarray, merge_map: dict | None = None, class_names: Sequence[str] | None = None) -> tuple[float, dict]:
    """Mean per-class accuracy over rows (ground-truth classes) with support.

    Classes named in ``merge_map`` are folded together first, so confusions
    between them count as correct.
    """
    confusion = np.asarray(confusion, dtype=float)
    if class_names is None:
        class_names = [str(i) for i in range(confusion.shape[0])]
    if merge_map:
        confusion, class_names = merge_confusion(confusion, class_names, merge_map)
    support = confusion.sum(axis=1)
    per_class = {
        name: float(confusion[i, i] / support[i]) for i, name in enumerate(class_names) if support[i] > 0
    }
    if not per_class:
        return 0.0, {}
    return float(np.mean(list(per_class.values()))), per_class


# ---------------------------------------------------------------------------
# reports


@dataclass
class EvalReport:
    mode: str
    membership_acc: float
    social_acc: float
    individual_acc: float
    mpca: float
    per_class_social: dict
    per_class_action: dict
    confusion_social: np.ndarray
    confusion_action: np.ndarray
    counts: dict
    map_per_task: dict | None = None
    extra: dict = field(default_factory=dict)

    def rates(self) -> dict:
        out = {
            "membership_acc": self.membership_acc,
            "social_acc": self.social_acc,
            "individual_acc": self.individual_acc,
            "mpca": self.mpca,
        }
        if self.map_per_task:
            out.update({f"map_{k}": v for k, v in self.map_per_task.items()})
        return out

    def to_dict(self) -> dict:
        return {
            "mode": self.mode,
            **self.rates(),
            "per_class_social": self.per_class_social,
            "per_class_action": self.per_class_action,
            "confusion_social": self.confusion_social.astype(int).tolist(),
            "confusion_action": self.confusion_action.astype(int).tolist(),
            "counts": self.counts,
            "map_per_task": self.map_per_task,
            **({"extra": self.extra} if self.extra else {}),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    def csv_rows(self) -> list[tuple[str, str, float]]:
        return [(self.mode, k, v) for k, v in self.rates().items()]


def reports_to_csv(reports: Iterable[EvalReport]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["mode", "metric", "value"])
    for rep in reports:
        for row in rep.csv_rows():
            w.writerow([row[0], row[1], repr(float(row[2]))])
    return buf.getvalue()
