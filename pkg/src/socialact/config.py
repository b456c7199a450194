"""Run configuration: one JSON file with optional command-line overrides.

Layout (every section and key optional)::

    {"seed": 0,
     "synth": {SynthConfig fields},
     "model": {ModelConfig fields other than the class counts},
     "train": {"stage1_epochs", "stage2_epochs", "batch_size", "lr_start", "lr_end", "task"},
     "loss":  {"lambda_group_task", "lambda1", "lambda2"},
     "eval":  {"modes": [...], "k_max": null}}
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

from .features import SynthConfig
from .losses import LossWeights
from .model import ModelConfig
from .scene import LabelSet
from .trainer import EVAL_MODES, TrainConfig


class ConfigError(ValueError):
    pass


_TRAIN_KEYS = ("stage1_epochs", "stage2_epochs", "batch_size", "lr_start", "lr_end", "task")
_TUPLE_KEYS = ("actors_per_scene", "groups_per_scene")


def _names(cls, exclude=()):
    return {f.name for f in fields(cls)} - set(exclude)


def _check_keys(section: str, given: dict, allowed) -> None:
    unknown = set(given) - set(allowed)
    if unknown:
        raise ConfigError(f"unknown key(s) in [{section}]: {', '.join(sorted(unknown))}")


@dataclass(frozen=True)
class RunConfig:
    seed: int = 0
    synth: dict = field(default_factory=dict)
    model: dict = field(default_factory=dict)
    train: dict = field(default_factory=dict)
    loss: dict = field(default_factory=dict)
    eval: dict = field(default_factory=dict)

    def __post_init__(self):
        _check_keys("synth", self.synth, _names(SynthConfig, ("labels", "seed")))
        _check_keys("model", self.model, _names(ModelConfig, ("n_social", "n_action", "P", "D", "D_g")))
        _check_keys("train", self.train, _TRAIN_KEYS)
        _check_keys("loss", self.loss, _names(LossWeights))
        _check_keys("eval", self.eval, ("modes", "k_max"))
        for m in self.eval.get("modes", ()):
            if m not in EVAL_MODES:
                raise ConfigError(f"unknown mode {m!r} in [eval]")

    @classmethod
    def from_dict(cls, data: dict) -> "RunConfig":
        _check_keys("top level", data, _names(cls))
        try:
            return cls(**data)
        except (TypeError, ValueError) as exc:
            raise ConfigError(str(exc)) from None

    def to_dict(self) -> dict:
        return asdict(self)

    def with_overrides(self, seed=None, epochs=None, lambda1=None, lambda2=None) -> "RunConfig":
        """Flags win over the file. ``epochs`` is the total; the stage-1 share is kept."""
        out = self
        if seed is not None:
            out = replace(out, seed=int(seed))
        if epochs is not None:
            if epochs < 1:
                raise ConfigError("--epochs must be positive")
            base = TrainConfig()
            s1 = self.train.get("stage1_epochs", base.stage1_epochs)
            s2 = self.train.get("stage2_epochs", base.stage2_epochs)
            stage1 = int(round(epochs * s1 / max(s1 + s2, 1)))
            out = replace(out, train={**out.train, "stage1_epochs": stage1, "stage2_epochs": epochs - stage1})
        loss = dict(out.loss)
        if lambda1 is not None:
            loss["lambda1"] = float(lambda1)
        if lambda2 is not None:
            loss["lambda2"] = float(lambda2)
        return replace(out, loss=loss)

    # -- typed views ---------------------------------------------------------

    def synth_config(self, labels: LabelSet | None = None) -> SynthConfig:
        kw = {k: tuple(v) if k in _TUPLE_KEYS else v for k, v in self.synth.items()}
        try:
            return SynthConfig(seed=self.seed, labels=labels or LabelSet.cad(), **kw)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"[synth]: {exc}") from None

    def model_config(self, labels: LabelSet, P: int, D: int, D_g: int) -> ModelConfig:
        try:
            return ModelConfig.for_labels(labels, P=P, D=D, D_g=D_g, **self.model)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"[model]: {exc}") from None

    def train_config(self, model: ModelConfig) -> TrainConfig:
        try:
            return TrainConfig(seed=self.seed, weights=LossWeights(**self.loss), model=model, **self.train)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"[train]/[loss]: {exc}") from None

    @property
    def modes(self) -> tuple[str, ...]:
        return tuple(self.eval.get("modes", EVAL_MODES))

    @property
    def k_max(self) -> int | None:
        return self.eval.get("k_max")


def load_config(path) -> RunConfig:
    if path is None:
        return RunConfig()
    try:
        data = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from None
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: top level must be an object")
    return RunConfig.from_dict(data)
