"""Per-actor feature grids and clip vectors: file container and synthetic scenes.

The binary feature container (one file per scene) is::

    magic    8 bytes   b"SGFEAT\\x00\\x01"
    version  uint32    (currently 1)
    P, D, D_g, N       uint32 each
    clip     D_g float64
    grids    N*P*P*D float64, row-major (actor, row, col, channel)

All integers and floats are little-endian.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .scene import (
    Actor,
    LabelSet,
    Scene,
    SocialGroupAnnotation,
    dominant_activity,
    load_annotations,
    save_annotations,
)

MAGIC = b"SGFEAT\x00\x01"
VERSION = 1
_HEADER = struct.Struct("<8sIIIII")


class FeatureError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class FeatureBatch:
    scene_ref: str
    clip: np.ndarray  # (D_g,)
    grids: np.ndarray  # (N, P, P, D)

    def __post_init__(self):
        clip = np.ascontiguousarray(self.clip, dtype="<f8")
        grids = np.ascontiguousarray(self.grids, dtype="<f8")
        if clip.ndim != 1 or clip.size < 1:
            raise FeatureError("clip feature must be a non-empty vector")
        if grids.ndim != 4 or grids.shape[1] != grids.shape[2] or grids.shape[1] < 1 or grids.shape[3] < 1:
            raise FeatureError(f"actor grids must have shape (N, P, P, D), got {grids.shape}")
        if not (np.all(np.isfinite(clip)) and np.all(np.isfinite(grids))):
            raise FeatureError(f"{self.scene_ref}: non-finite feature values")
        object.__setattr__(self, "clip", clip)
        object.__setattr__(self, "grids", grids)

    @property
    def n_actors(self) -> int:
        return self.grids.shape[0]

    @property
    def P(self) -> int:
        return self.grids.shape[1]

    @property
    def D(self) -> int:
        return self.grids.shape[3]

    @property
    def D_g(self) -> int:
        return self.clip.shape[0]


def features_to_bytes(batch: FeatureBatch) -> bytes:
    head = _HEADER.pack(MAGIC, VERSION, batch.P, batch.D, batch.D_g, batch.n_actors)
    return head + batch.clip.astype("<f8").tobytes() + batch.grids.astype("<f8").tobytes()


def features_from_bytes(data: bytes, scene: Scene | None = None, scene_ref: str = "") -> FeatureBatch:
    if len(data) < _HEADER.size:
        raise FeatureError("feature file truncated")
    magic, version, P, D, D_g, N = _HEADER.unpack_from(data)
    if magic != MAGIC:
        raise FeatureError("not a feature file (bad magic)")
    if version != VERSION:
        raise FeatureError(f"unsupported feature file version {version}")
    if min(P, D, D_g) < 1:
        raise FeatureError("feature dimensions must be positive")
    if scene is not None and N != scene.n_actors:
        raise FeatureError(f"feature file has {N} actors, scene {scene.scene_id} has {scene.n_actors}")
    expected = _HEADER.size + 8 * (D_g + N * P * P * D)
    if len(data) != expected:
        raise FeatureError(f"feature payload size {len(data)} does not match header ({expected})")
    body = np.frombuffer(data, dtype="<f8", offset=_HEADER.size)
    ref = scene.scene_id if scene is not None else scene_ref
    return FeatureBatch(ref, body[:D_g].copy(), body[D_g:].reshape(N, P, P, D).copy())


def save_features(path, batch: FeatureBatch) -> None:
    Path(path).write_bytes(features_to_bytes(batch))


def load_features(path, scene: Scene | None = None) -> FeatureBatch:
    return features_from_bytes(Path(path).read_bytes(), scene, scene_ref=Path(path).stem)


def feature_path(directory, scene_id: str) -> Path:
    return Path(directory) / f"{scene_id}.feat"


@dataclass(frozen=True)
class SynthConfig:
    """Planted-group corpus parameters.

    Each group gets a random centroid of norm ``centroid_scale``; every actor
    adds ``action_scale`` times a per-corpus prototype for its own action, and
    each grid cell gets independent Gaussian noise.
    """

    n_scenes: int = 250
    actors_per_scene: tuple[int, int] = (2, 10)
    groups_per_scene: tuple[int, int] = (1, 4)
    P: int = 5
    D: int = 32
    D_g: int = 64
    centroid_scale: float = 1.0
    action_scale: float = 1.0
    noise_sigma: float = 0.2
    clip_noise: float = 0.05
    action_consistency: float = 0.85
    test_fraction: float = 0.2
    seed: int = 0
    labels: LabelSet = field(default_factory=LabelSet.cad)

    def __post_init__(self):
        lo, hi = self.actors_per_scene
        glo, ghi = self.groups_per_scene
        if not (1 <= lo <= hi) or not (1 <= glo <= ghi):
            raise ValueError("actor and group ranges must be non-empty and positive")
        if self.noise_sigma < 0 or self.clip_noise < 0:
            raise ValueError("noise levels must be non-negative")
        if not 0.0 <= self.action_consistency <= 1.0:
            raise ValueError("action_consistency must be a probability")
        if not 0.0 <= self.test_fraction <= 1.0:
            raise ValueError("test_fraction must be in [0, 1]")
        if min(self.P, self.D, self.D_g, self.n_scenes) < 1:
            raise ValueError("dimensions and n_scenes must be positive")
        if len(self.plantable_actions()) < 1:
            raise ValueError("label set has no plantable activities")

    def plantable_actions(self) -> list[int]:
        """Action indices that are not N/A and have a social counterpart."""
        labels = self.labels
        return [
            a for a, name in enumerate(labels.action_labels)
            if name != labels.na_label and name in labels.social_labels
        ]

    def with_(self, **kw) -> "SynthConfig":
        return replace(self, **kw)


def action_prototypes(cfg: SynthConfig) -> np.ndarray:
    """Unit-norm prototype per action label, fixed by the corpus seed."""
    rng = np.random.default_rng([cfg.seed, 0x5EED])
    protos = rng.standard_normal((cfg.labels.n_actions, cfg.D))
    return protos / np.linalg.norm(protos, axis=1, keepdims=True)


def _split_for(cfg: SynthConfig, index: int) -> str:
    n_test = int(round(cfg.n_scenes * cfg.test_fraction))
    return "test" if index >= cfg.n_scenes - n_test else "train"


def synth_scene(cfg: SynthConfig, scene_index: int, prototypes: np.ndarray | None = None) -> tuple[Scene, FeatureBatch]:
    rng = np.random.default_rng([cfg.seed, scene_index])
    labels = cfg.labels
    if prototypes is None:
        prototypes = action_prototypes(cfg)
    plantable = cfg.plantable_actions()

    n = int(rng.integers(cfg.actors_per_scene[0], cfg.actors_per_scene[1] + 1))
    k_hi = min(cfg.groups_per_scene[1], n)
    k = int(rng.integers(min(cfg.groups_per_scene[0], k_hi), k_hi + 1))
    assign = np.concatenate([np.arange(k), rng.integers(0, k, n - k)])
    rng.shuffle(assign)

    centroids = rng.standard_normal((k, cfg.D))
    centroids *= cfg.centroid_scale / np.linalg.norm(centroids, axis=1, keepdims=True)
    planted = rng.choice(plantable, size=k)

    actions = np.empty(n, dtype=int)
    for i in range(n):
        a = int(planted[assign[i]])
        if rng.random() >= cfg.action_consistency and len(plantable) > 1:
            others = [b for b in plantable if b != a]
            a = int(others[rng.integers(len(others))])
        actions[i] = a

    base = centroids[assign] + cfg.action_scale * prototypes[actions]
    grids = base[:, None, None, :] + cfg.noise_sigma * rng.standard_normal((n, cfg.P, cfg.P, cfg.D))
    clip = np.resize(grids.mean(axis=(1, 2)).mean(axis=0), cfg.D_g)
    clip = clip + cfg.clip_noise * rng.standard_normal(cfg.D_g)

    xs = rng.uniform(0, 1200, n)
    ys = rng.uniform(0, 600, n)
    ws = rng.uniform(30, 80, n)
    actors = tuple(
        Actor(i, (xs[i], ys[i], ws[i], ws[i] * 2.5), int(actions[i]), track_id=i) for i in range(n)
    )
    groups = []
    for g in range(k):
        members = frozenset(int(i) for i in np.flatnonzero(assign == g))
        groups.append(SocialGroupAnnotation(members, dominant_activity(members, actions, labels)))
    scene_id = f"synth{cfg.seed}_{scene_index:05d}"
    scene = Scene(scene_id, scene_index, actors, tuple(groups), _split_for(cfg, scene_index))
    return scene, FeatureBatch(scene_id, clip, grids)


def synth_corpus(cfg: SynthConfig) -> tuple[list[Scene], list[FeatureBatch]]:
    protos = action_prototypes(cfg)
    pairs = [synth_scene(cfg, i, protos) for i in range(cfg.n_scenes)]
    return [p[0] for p in pairs], [p[1] for p in pairs]


ANNOTATIONS_FILE = "annotations.jsonl"
FEATURES_DIR = "features"


def save_corpus(directory, scenes: list[Scene], batches: list[FeatureBatch], labels: LabelSet) -> None:
    """Writes ``annotations.jsonl`` plus one ``features/<scene_id>.feat`` per scene."""
    root = Path(directory)
    (root / FEATURES_DIR).mkdir(parents=True, exist_ok=True)
    save_annotations(root / ANNOTATIONS_FILE, scenes, labels)
    for s, b in zip(scenes, batches):
        save_features(feature_path(root / FEATURES_DIR, s.scene_id), b)


def load_corpus(directory, labels: LabelSet, split: str | None = None) -> tuple[list[Scene], list[FeatureBatch]]:
    """Reads a corpus written by :func:`save_corpus`, optionally one split only."""
    root = Path(directory)
    scenes = load_annotations(root / ANNOTATIONS_FILE, labels)
    if split is not None:
        scenes = [s for s in scenes if s.split == split]
    batches = []
    for s in scenes:
        path = feature_path(root / FEATURES_DIR, s.scene_id)
        if not path.exists():
            raise FeatureError(f"missing feature file {path}")
        batches.append(load_features(path, s))
    return scenes, batches
