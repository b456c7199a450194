"""Scenes, actors, social-group annotations and their line-delimited file format.

One scene per line, JSON encoded::

    {"scene_id": "seq01_f0010", "key_frame": 10, "split": "train",
     "actors": [{"id": 0, "bbox": [x, y, w, h], "action": "walking", "track_id": 3}, ...],
     "groups": [{"members": [0, 1], "activity": "walking"}, ...]}

``members`` are positions in ``actors`` (not actor ids). Labels are given by
name and resolved against a :class:`LabelSet`.
"""
from __future__ import annotations

import hashlib
import io
import json
from collections import Counter
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

CAD_ACTIONS = ("crossing", "waiting", "queuing", "walking", "talking", "N/A")


class AnnotationError(ValueError):
    """Malformed or inconsistent annotation data."""

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


@dataclass(frozen=True)
class LabelSet:
    action_labels: tuple[str, ...]
    social_labels: tuple[str, ...]
    merge_map: dict = field(default_factory=dict)
    na_label: str | None = "N/A"

    def __post_init__(self):
        object.__setattr__(self, "action_labels", tuple(self.action_labels))
        object.__setattr__(self, "social_labels", tuple(self.social_labels))
        for name, labels in (("action", self.action_labels), ("social", self.social_labels)):
            if len(set(labels)) != len(labels):
                raise ValueError(f"duplicate {name} label names")
            if not labels:
                raise ValueError(f"empty {name} label set")
        unknown = set(self.merge_map) - set(self.action_labels)
        if unknown:
            raise ValueError(f"merge_map keys not in action labels: {sorted(unknown)}")
        if not self.merged_labels():
            raise ValueError("merged label set is empty")

    @classmethod
    def cad(cls) -> "LabelSet":
        """Collective Activity labels; crossing and walking merge into moving."""
        return cls(CAD_ACTIONS, CAD_ACTIONS, {"crossing": "moving", "walking": "moving"})

    @property
    def n_actions(self) -> int:
        return len(self.action_labels)

    @property
    def n_social(self) -> int:
        return len(self.social_labels)

    def action_index(self, name: str) -> int:
        return self.action_labels.index(name)

    def social_index(self, name: str) -> int:
        return self.social_labels.index(name)

    @property
    def na_action(self) -> int | None:
        if self.na_label is None or self.na_label not in self.action_labels:
            return None
        return self.action_labels.index(self.na_label)

    @property
    def na_social(self) -> int | None:
        if self.na_label is None or self.na_label not in self.social_labels:
            return None
        return self.social_labels.index(self.na_label)

    def action_to_social(self, action: int) -> int:
        name = self.action_labels[action]
        if name not in self.social_labels:
            raise ValueError(f"action {name!r} has no social label")
        return self.social_labels.index(name)

    def merged_labels(self) -> list[str]:
        """Social label names after merging, in first-appearance order."""
        out: list[str] = []
        for name in self.social_labels:
            merged = self.merge_map.get(name, name)
            if merged not in out:
                out.append(merged)
        return out

    def digest(self) -> str:
        payload = json.dumps(
            [self.action_labels, self.social_labels, sorted(self.merge_map.items()), self.na_label]
        )
        return hashlib.sha256(payload.encode()).hexdigest()[:16]


@dataclass(frozen=True)
class Actor:
    actor_id: int
    bbox: tuple[float, float, float, float]
    action: int
    track_id: int | None = None

    def __post_init__(self):
        object.__setattr__(self, "bbox", tuple(float(v) for v in self.bbox))
        if len(self.bbox) != 4:
            raise ValueError("bbox must have 4 values (x, y, w, h)")
        if not (self.bbox[2] > 0 and self.bbox[3] > 0):
            raise ValueError(f"actor {self.actor_id}: bbox width and height must be positive")


@dataclass(frozen=True)
class SocialGroupAnnotation:
    members: frozenset
    activity: int

    def __post_init__(self):
        object.__setattr__(self, "members", frozenset(int(m) for m in self.members))
        if not self.members:
            raise ValueError("social group has no members")


@dataclass(frozen=True)
class Partition:
    """Disjoint groups covering ``range(n)``, stored in canonical order."""

    groups: tuple[tuple[int, ...], ...]

    def __post_init__(self):
        canon = tuple(sorted(tuple(sorted(int(i) for i in g)) for g in self.groups))
        object.__setattr__(self, "groups", canon)
        seen = [i for g in canon for i in g]
        if any(len(g) == 0 for g in canon):
            raise ValueError("empty group in partition")
        if sorted(seen) != list(range(len(seen))):
            raise ValueError("groups do not partition 0..N-1")

    @property
    def n(self) -> int:
        return sum(len(g) for g in self.groups)

    def __len__(self):
        return len(self.groups)

    def __iter__(self):
        return iter(self.groups)

    def labels(self) -> np.ndarray:
        out = np.empty(self.n, dtype=int)
        for k, g in enumerate(self.groups):
            out[list(g)] = k
        return out

    @classmethod
    def from_labels(cls, labels: Sequence[int]) -> "Partition":
        buckets: dict[int, list[int]] = {}
        for i, lab in enumerate(labels):
            buckets.setdefault(int(lab), []).append(i)
        return cls(tuple(buckets.values()))

    @classmethod
    def single(cls, n: int) -> "Partition":
        return cls((tuple(range(n)),))

    @classmethod
    def singletons(cls, n: int) -> "Partition":
        return cls(tuple((i,) for i in range(n)))


@dataclass(frozen=True)
class Scene:
    scene_id: str
    key_frame: int
    actors: tuple[Actor, ...]
    groups: tuple[SocialGroupAnnotation, ...]
    split: str = "train"

    def __post_init__(self):
        object.__setattr__(self, "actors", tuple(self.actors))
        object.__setattr__(self, "groups", tuple(self.groups))
        if self.split not in ("train", "test"):
            raise ValueError(f"split must be train or test, got {self.split!r}")
        n = len(self.actors)
        seen: set[int] = set()
        for g in self.groups:
            overlap = seen & g.members
            if overlap:
                raise AnnotationError(f"actor(s) {sorted(overlap)} appear in more than one group")
            seen |= g.members
        if seen != set(range(n)):
            missing = sorted(set(range(n)) - seen)
            extra = sorted(seen - set(range(n)))
            raise AnnotationError(f"groups do not partition the actors (uncovered {missing}, unknown {extra})")

    @property
    def n_actors(self) -> int:
        return len(self.actors)

    @property
    def actions(self) -> np.ndarray:
        return np.array([a.action for a in self.actors], dtype=int)

    @property
    def partition(self) -> Partition:
        return Partition(tuple(g.members for g in self.groups))

    def actor_group_activity(self) -> np.ndarray:
        """Ground-truth social activity of each actor's group."""
        out = np.empty(self.n_actors, dtype=int)
        for g in self.groups:
            out[list(g.members)] = g.activity
        return out


def _check_label(labels: Sequence[str], name, kind: str, line: int) -> int:
    if not isinstance(name, str) or name not in labels:
        raise AnnotationError(f"unknown {kind} label {name!r}", line)
    return list(labels).index(name)


def scene_from_record(rec: dict, labels: LabelSet, line: int | None = None) -> Scene:
    try:
        actors = []
        for a in rec["actors"]:
            actors.append(
                Actor(
                    actor_id=int(a["id"]),
                    bbox=tuple(a["bbox"]),
                    action=_check_label(labels.action_labels, a["action"], "action", line),
                    track_id=None if a.get("track_id") is None else int(a["track_id"]),
                )
            )
        groups = [
            SocialGroupAnnotation(
                frozenset(g["members"]),
                _check_label(labels.social_labels, g["activity"], "social", line),
            )
            for g in rec["groups"]
        ]
        return Scene(
            scene_id=str(rec["scene_id"]),
            key_frame=int(rec["key_frame"]),
            actors=tuple(actors),
            groups=tuple(groups),
            split=rec.get("split", "train"),
        )
    except AnnotationError as exc:
        if exc.line is None and line is not None:
            raise AnnotationError(str(exc), line) from None
        raise
    except (KeyError, TypeError, ValueError) as exc:
        raise AnnotationError(f"malformed record: {exc}", line) from None


def scene_to_record(scene: Scene, labels: LabelSet) -> dict:
    actors = []
    for a in scene.actors:
        rec = {"id": a.actor_id, "bbox": list(a.bbox), "action": labels.action_labels[a.action]}
        if a.track_id is not None:
            rec["track_id"] = a.track_id
        actors.append(rec)
    return {
        "scene_id": scene.scene_id,
        "key_frame": scene.key_frame,
        "split": scene.split,
        "actors": actors,
        "groups": [
            {"members": sorted(g.members), "activity": labels.social_labels[g.activity]}
            for g in scene.groups
        ],
    }


def parse_annotations(stream, labels: LabelSet | None = None) -> list[Scene]:
    """Read one scene per non-blank line from a bytes or text stream."""
    labels = labels or LabelSet.cad()
    if isinstance(stream, (bytes, bytearray)):
        stream = io.BytesIO(stream)
    scenes = []
    for lineno, raw in enumerate(stream, start=1):
        if isinstance(raw, bytes):
            raw = raw.decode("utf-8")
        if not raw.strip():
            continue
        try:
            rec = json.loads(raw)
        except json.JSONDecodeError as exc:
            raise AnnotationError(f"malformed record: {exc.msg}", lineno) from None
        if not isinstance(rec, dict):
            raise AnnotationError("record is not an object", lineno)
        scenes.append(scene_from_record(rec, labels, lineno))
    return scenes


def serialize_annotations(scenes: Iterable[Scene], labels: LabelSet | None = None) -> bytes:
    labels = labels or LabelSet.cad()
    lines = [json.dumps(scene_to_record(s, labels), sort_keys=True) for s in scenes]
    return ("\n".join(lines) + "\n").encode("utf-8") if lines else b""


def load_annotations(path, labels: LabelSet | None = None) -> list[Scene]:
    with open(path, "rb") as fh:
        return parse_annotations(fh, labels)


def save_annotations(path, scenes: Iterable[Scene], labels: LabelSet | None = None) -> None:
    with open(path, "wb") as fh:
        fh.write(serialize_annotations(scenes, labels))


def _components(n: int, edges: Iterable[tuple[int, int]]) -> Partition:
    parent = list(range(n))

    def find(i):
        while parent[i] != i:
            parent[i] = parent[parent[i]]
            i = parent[i]
        return i

    for i, j in edges:
        ri, rj = find(i), find(j)
        if ri != rj:
            parent[max(ri, rj)] = min(ri, rj)
    return Partition.from_labels([find(i) for i in range(n)])


def majority_vote_groups(partitions: Sequence[Partition]) -> Partition:
    """Keep co-membership pairs asserted by at least two of three annotators.

    Surviving pairs are closed transitively, so a chain of majority pairs
    merges into one group.
    """
    if len(partitions) != 3:
        raise ValueError("majority voting needs exactly three partitions")
    n = partitions[0].n
    if any(p.n != n for p in partitions):
        raise ValueError("partitions cover different actor sets")
    votes = sum(adjacency_matrix(p) for p in partitions)
    edges = [(i, j) for i in range(n) for j in range(i + 1, n) if votes[i, j] >= 2]
    return _components(n, edges)


def dominant_activity(group: Iterable[int], actions: Sequence[int], labels: LabelSet) -> int:
    """Social label of the most frequent member action (ties: smallest label index)."""
    members = list(group)
    if not members:
        raise ValueError("empty group")
    counts = Counter(labels.action_to_social(actions[m]) for m in members)
    best = max(counts.values())
    return min(lab for lab, c in counts.items() if c == best)


def adjacency_matrix(partition: Partition) -> np.ndarray:
    lab = partition.labels()
    return (lab[:, None] == lab[None, :]).astype(float)


def adjacency_target(scene: Scene) -> np.ndarray:
    """Binary co-membership matrix with ones on the diagonal."""
    return adjacency_matrix(scene.partition)


def scene_group_activity(scene: Scene, labels: LabelSet) -> int:
    """Single scene-level activity: the dominant action over all actors."""
    return dominant_activity(range(scene.n_actors), scene.actions, labels)
