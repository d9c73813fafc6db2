"""Experiment orchestration shared by the HTTP service and the CLI."""

from __future__ import annotations

import json
from dataclasses import dataclass

from . import nn
from .attacks import evaluate
from .config import (ExperimentConfig, build_attack_specs, build_dataset,
                     build_preprocessor, build_train_config)
from .defenses import DefendedModel
from .diagnostics import rounding_sweep, run_checklist, sweep_csv
from .errors import ConfigError


def canonical_json(obj) -> str:
    """Byte-stable serialization: sorted keys, fixed separators, trailing newline."""
    return json.dumps(obj, sort_keys=True, separators=(",", ":")) + "\n"


@dataclass
class TrainOutcome:
    checkpoint: bytes
    trace: list
    train_accuracy: float
    test_accuracy: float

    def trace_csv(self) -> str:
        lines = ["epoch,loss"]
        lines += [f"{i},{loss:.17g}" for i, loss in enumerate(self.trace)]
        return "\n".join(lines) + "\n"


def _architecture(config: ExperimentConfig, input_dim: int, n_classes: int) -> list:
    return [input_dim] + list(config.model.hidden) + [n_classes]


def run_train(config: ExperimentConfig) -> TrainOutcome:
    train_ds, test_ds = build_dataset(config.dataset)
    arch = _architecture(config, train_ds.inputs.shape[1], train_ds.n_classes)
    model = nn.init_mlp(arch, config.model.seed)
    tc = build_train_config(config.model)
    model, trace = nn.train(model, train_ds, tc)
    meta = {"seed": config.model.seed, "config": config.model.model_dump()}
    return TrainOutcome(
        checkpoint=nn.checkpoint_bytes(model, meta),
        trace=trace,
        train_accuracy=nn.accuracy(model, train_ds.inputs, train_ds.labels),
        test_accuracy=nn.accuracy(model, test_ds.inputs, test_ds.labels),
    )


def _load_defended(config: ExperimentConfig, checkpoint: bytes):
    model, _meta = nn.load_checkpoint_bytes(checkpoint)
    _train_ds, test_ds = build_dataset(config.dataset)
    expected = _architecture(config, test_ds.inputs.shape[1], test_ds.n_classes)
    if model.layer_sizes != expected:
        raise ConfigError(
            f"checkpoint architecture {model.layer_sizes} does not match "
            f"config architecture {expected}"
        )
    defended = DefendedModel(build_preprocessor(config.defense), model)
    return defended, test_ds


def run_attack(config: ExperimentConfig, checkpoint: bytes, threads: int = 1) -> list:
    """One {name, eps, report, records_csv} entry per attack section."""
    specs = build_attack_specs(config)
    if not specs:
        raise ConfigError("attack: config declares no attack sections")
    defended, test_ds = _load_defended(config, checkpoint)
    out = []
    for spec in specs:
        report = evaluate(defended, test_ds, spec, threads=threads)
        body = {"schema_version": 1, **report.to_dict()}
        out.append({
            "name": spec.name,
            "eps": spec.eps,
            "report": body,
            "records_csv": report.records_csv(),
        })
    return out


def run_diagnose(config: ExperimentConfig, checkpoint: bytes, threads: int = 1) -> dict:
    defended, test_ds = _load_defended(config, checkpoint)
    if config.attacks:
        eps = config.attacks[0].eps
        seed = config.attacks[0].seed
    else:
        eps, seed = 0.3, 0
    report = run_checklist(defended, test_ds, eps, seed=seed, threads=threads)
    return {"report": report.to_dict(), "summary": report.summary()}


def run_sweep(c: float = 0.01, decimals: int = 0, lo: float = 0.0, hi: float = 0.3,
              n: int = 256) -> str:
    return sweep_csv(rounding_sweep(c=c, decimals=decimals, lo=lo, hi=hi, n_points=n))
