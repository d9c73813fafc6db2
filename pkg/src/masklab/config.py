"""Experiment configuration: schema, strict validation, INI/JSON parsing,
and builders that turn config sections into runtime objects.
"""

from __future__ import annotations

import configparser
import json
from typing import List, Literal, Optional

from pydantic import BaseModel, ConfigDict, ValidationError, field_validator

from . import data as data_mod
from .attacks import AttackSpec
from .defenses import (Chain, DiffRound, HardQuantize, Identity,
                       Invert, PrecisionBlend, Preprocessor)
from .errors import ConfigError
from .nn import AdvTrainConfig, TrainConfig


class _Section(BaseModel):
    model_config = ConfigDict(extra="forbid")


class DatasetSection(_Section):
    kind: Literal["synthetic", "idx"] = "synthetic"
    # idx
    images: Optional[str] = None
    labels: Optional[str] = None
    limit: Optional[int] = None
    # synthetic
    seed: int = 0
    n_per_class: int = 50
    d: int = 64
    n_classes: int = 3
    separation: float = 1.2
    noise: float = 0.05
    # split
    train_fraction: float = 0.8
    split_seed: int = 0


class ModelSection(_Section):
    hidden: List[int] = [32]
    epochs: int = 30
    batch_size: int = 32
    learning_rate: float = 0.1
    seed: int = 0
    adversarial_eps: Optional[float] = None
    adversarial_steps: int = 7
    adversarial_step_size: Optional[float] = None

    @field_validator("hidden", mode="before")
    @classmethod
    def _parse_hidden(cls, v):
        if isinstance(v, str):
            return [int(s) for s in v.split(",") if s.strip()]
        return v


class DefenseSection(_Section):
    kind: Literal["identity", "invert", "diff_round", "precision_blend",
                  "hard_quantize", "chain"] = "identity"
    decimals: int = 1
    error_coefficient: float = 0.01
    eps: float = 0.0
    levels: int = 8
    gradient_mode: Literal["true_gradient", "bpda_identity", "bpda_substitute",
                           "omit_at_attack"] = "true_gradient"
    omit_index: Optional[int] = None
    substitute: Optional["DefenseSection"] = None  # JSON configs only
    parts: Optional[List["DefenseSection"]] = None  # JSON configs only (chain)


class AttackSection(_Section):
    name: str
    kind: Literal["fgsm", "pgd", "eot_pgd", "noise", "none"] = "pgd"
    eps: float = 0.3
    steps: int = 100
    step_size: Optional[float] = None
    random_start: bool = True
    eot_samples: int = 1
    trials: int = 100
    seed: int = 0


class OutputSection(_Section):
    directory: str = "out"


class ExperimentConfig(_Section):
    dataset: DatasetSection = DatasetSection()
    model: ModelSection = ModelSection()
    defense: DefenseSection = DefenseSection()
    attacks: List[AttackSection] = []
    output: OutputSection = OutputSection()


def _validation_message(exc: ValidationError) -> str:
    err = exc.errors()[0]
    loc = ".".join(str(p) for p in err["loc"])
    return f"{loc}: {err['msg']}"


def parse_config_text(text: str) -> ExperimentConfig:
    """JSON (object at top level) or INI with [dataset]/[model]/[defense]/
    [output] sections and one [attack:NAME] section per attack.
    """
    stripped = text.lstrip()
    try:
        if stripped.startswith("{"):
            payload = json.loads(text)
        else:
            payload = _ini_to_dict(text)
        return ExperimentConfig(**payload)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"invalid JSON config: {exc}") from exc
    except ValidationError as exc:
        raise ConfigError(_validation_message(exc)) from exc


def _ini_to_dict(text: str) -> dict:
    parser = configparser.ConfigParser(interpolation=None)
    parser.optionxform = str  # keys are case-sensitive; typos must not be folded
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"invalid config file: {exc}") from exc
    payload: dict = {}
    attacks = []
    for section in parser.sections():
        items = dict(parser.items(section))
        if section in ("dataset", "model", "defense", "output"):
            payload[section] = items
        elif section.startswith("attack:"):
            name = section.split(":", 1)[1]
            attacks.append({"name": name, **items})
        else:
            raise ConfigError(f"unknown config section [{section}]")
    if attacks:
        payload["attacks"] = attacks
    return payload


def load_config(path) -> ExperimentConfig:
    with open(path, "r", encoding="utf-8") as fh:
        return parse_config_text(fh.read())


def build_dataset(section: DatasetSection):
    """Returns (train, test) datasets."""
    if section.kind == "idx":
        if not section.images or not section.labels:
            raise ConfigError("dataset: idx kind requires images and labels paths")
        full = data_mod.load_idx(section.images, section.labels, limit=section.limit)
    else:
        full = data_mod.synthetic_blobs(
            seed=section.seed, n_per_class=section.n_per_class, d=section.d,
            n_classes=section.n_classes, separation=section.separation,
            noise=section.noise,
        )
    return data_mod.split(full, section.train_fraction, section.split_seed)


def build_train_config(section: ModelSection) -> TrainConfig:
    adversarial = None
    if section.adversarial_eps is not None:
        adversarial = AdvTrainConfig(
            eps=section.adversarial_eps,
            steps=section.adversarial_steps,
            step_size=section.adversarial_step_size,
        )
    return TrainConfig(
        epochs=section.epochs, batch_size=section.batch_size,
        learning_rate=section.learning_rate, seed=section.seed,
        adversarial=adversarial,
    )


def build_preprocessor(section: DefenseSection) -> Preprocessor:
    kw = {"gradient_mode": section.gradient_mode}
    if section.gradient_mode == "bpda_substitute":
        if section.substitute is None:
            raise ConfigError("defense: bpda_substitute requires a substitute defense")
        kw["substitute"] = build_preprocessor(section.substitute)
    if section.kind == "identity":
        return Identity(**kw)
    if section.kind == "invert":
        return Invert(**kw)
    if section.kind == "diff_round":
        return DiffRound(section.decimals, section.error_coefficient, **kw)
    if section.kind == "precision_blend":
        return PrecisionBlend(section.eps, section.error_coefficient, **kw)
    if section.kind == "hard_quantize":
        return HardQuantize(section.levels, **kw)
    if section.kind == "chain":
        if not section.parts:
            raise ConfigError("defense: chain requires a parts list (JSON config)")
        parts = [build_preprocessor(p) for p in section.parts]
        return Chain(parts, omit_index=section.omit_index, **kw)
    raise ConfigError(f"unknown defense kind {section.kind!r}")


def build_attack_specs(config: ExperimentConfig) -> list:
    return [
        AttackSpec(name=a.name, kind=a.kind, eps=a.eps, steps=a.steps,
                   step_size=a.step_size, random_start=a.random_start,
                   eot_samples=a.eot_samples, trials=a.trials, seed=a.seed)
        for a in config.attacks
    ]
