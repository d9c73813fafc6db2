"""Small fully-connected classifiers with SGD and optional adversarial training."""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import autodiff as ad
from .errors import ConfigError, ShapeError, TrainingDivergence


@dataclass
class Mlp:
    """ReLU MLP; weights[i] has shape (in_i, out_i), biases[i] shape (out_i,)."""

    weights: list
    biases: list

    def __post_init__(self):
        for i in range(len(self.weights) - 1):
            if self.weights[i].shape[1] != self.weights[i + 1].shape[0]:
                raise ShapeError(
                    f"layer {i} output {self.weights[i].shape[1]} != "
                    f"layer {i + 1} input {self.weights[i + 1].shape[0]}"
                )
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            if b.shape != (w.shape[1],):
                raise ShapeError(f"layer {i}: bias shape {b.shape} != ({w.shape[1]},)")

    @property
    def layer_sizes(self) -> list:
        return [self.weights[0].shape[0]] + [w.shape[1] for w in self.weights]

    def copy(self) -> "Mlp":
        return Mlp([w.copy() for w in self.weights], [b.copy() for b in self.biases])


@dataclass
class AdvTrainConfig:
    eps: float
    steps: int = 7
    step_size: Optional[float] = None  # defaults to 2.5 * eps / steps


@dataclass
class TrainConfig:
    epochs: int
    batch_size: int
    learning_rate: float
    seed: int = 0
    adversarial: Optional[AdvTrainConfig] = None

    def validate(self, n_samples: int):
        if self.learning_rate <= 0:
            raise ConfigError("learning_rate must be positive")
        if self.batch_size < 1 or self.batch_size > n_samples:
            raise ConfigError(f"batch_size must be in [1, {n_samples}]")
        if self.epochs < 0:
            raise ConfigError("epochs must be nonnegative")


def init_mlp(layer_sizes, seed: int) -> Mlp:
    """Glorot-uniform init: U(+-sqrt(6 / (fan_in + fan_out)))."""
    rng = np.random.default_rng(np.random.SeedSequence(seed))
    weights, biases = [], []
    for fan_in, fan_out in zip(layer_sizes[:-1], layer_sizes[1:]):
        limit = np.sqrt(6.0 / (fan_in + fan_out))
        weights.append(rng.uniform(-limit, limit, size=(fan_in, fan_out)))
        biases.append(np.zeros(fan_out))
    return Mlp(weights, biases)


def mlp_forward(tape: ad.Tape, model: Mlp, x: ad.Tensor, with_params: bool = False):
    """Logits for a (batch, input_dim) tensor; ReLU between layers, none on output.

    with_params=True additionally registers parameters as tape inputs and
    returns their tensors so the caller can take parameter gradients.
    """
    if x.value.ndim != 2 or x.value.shape[1] != model.weights[0].shape[0]:
        raise ShapeError(
            f"mlp_forward: input shape {x.value.shape} incompatible with "
            f"first layer ({model.weights[0].shape[0]} features)"
        )
    params = []
    h = x
    n = len(model.weights)
    for i, (w, b) in enumerate(zip(model.weights, model.biases)):
        wt = tape.input(w) if with_params else tape.constant(w)
        bt = tape.input(b) if with_params else tape.constant(b)
        params.append((wt, bt))
        h = ad.add(ad.matmul(h, wt), bt)
        if i < n - 1:
            h = ad.relu(h)
    if with_params:
        return h, params
    return h


def cross_entropy(tape: ad.Tape, logits: ad.Tensor, labels) -> ad.Tensor:
    """Mean cross entropy over the batch (stable fused log-softmax)."""
    return ad.mean_all(ad.xent_per_sample(logits, labels))


def predict(model: Mlp, x: np.ndarray) -> np.ndarray:
    tape = ad.Tape()
    logits = mlp_forward(tape, model, tape.input(x))
    return np.argmax(logits.value, axis=1)


def accuracy(model: Mlp, x: np.ndarray, labels: np.ndarray) -> float:
    return float(np.mean(predict(model, x) == np.asarray(labels)))


def sgd_step(model: Mlp, grads: list, lr: float) -> Mlp:
    """grads is a list of (dW, db) matching model layers; returns a new Mlp."""
    if len(grads) != len(model.weights):
        raise ShapeError(f"sgd_step: {len(grads)} gradient pairs for {len(model.weights)} layers")
    weights, biases = [], []
    for (w, b), (gw, gb) in zip(zip(model.weights, model.biases), grads):
        if gw.shape != w.shape or gb.shape != b.shape:
            raise ShapeError(f"sgd_step: gradient shapes {gw.shape}/{gb.shape} "
                             f"do not match parameters {w.shape}/{b.shape}")
        weights.append(w - lr * gw)
        biases.append(b - lr * gb)
    return Mlp(weights, biases)


def _loss_and_param_grads(model: Mlp, x: np.ndarray, labels: np.ndarray):
    tape = ad.Tape()
    xt = tape.input(x)
    logits, params = mlp_forward(tape, model, xt, with_params=True)
    loss = cross_entropy(tape, logits, labels)
    grads = ad.backward(tape, loss)
    pairs = [(grads[wt.nid], grads[bt.nid]) for wt, bt in params]
    return float(loss.value), pairs


def train(model: Mlp, dataset, config: TrainConfig):
    """SGD training; with config.adversarial set, each batch is replaced by
    PGD adversarial examples against the current parameters. Returns
    (trained model, per-epoch mean loss trace). Deterministic given seed.
    """
    inputs = np.asarray(dataset.inputs, dtype=np.float64)
    labels = np.asarray(dataset.labels, dtype=np.int64)
    if inputs.shape[0] == 0:
        raise ConfigError("train: dataset is empty")
    config.validate(inputs.shape[0])

    attack_cfg = None
    if config.adversarial is not None:
        from .attacks import AttackConfig, pgd  # local import: attacks depends on nn
        from .defenses import DefendedModel, Identity

        adv = config.adversarial
        step_size = adv.step_size if adv.step_size is not None else 2.5 * adv.eps / adv.steps
        attack_cfg = AttackConfig(
            eps=adv.eps, steps=adv.steps, step_size=step_size,
            random_start=True, seed=config.seed,
        )

    model = model.copy()
    rng = np.random.default_rng(np.random.SeedSequence(entropy=config.seed, spawn_key=(1,)))
    trace = []
    n = inputs.shape[0]
    for epoch in range(config.epochs):
        order = rng.permutation(n)
        epoch_losses = []
        for start in range(0, n, config.batch_size):
            idx = order[start:start + config.batch_size]
            bx, by = inputs[idx], labels[idx]
            if attack_cfg is not None:
                defended = DefendedModel(Identity(), model)
                bx = pgd(defended, bx, by, attack_cfg, sample_indices=idx).x_adv
            loss, grads = _loss_and_param_grads(model, bx, by)
            if not np.isfinite(loss):
                raise TrainingDivergence(epoch)
            model = sgd_step(model, grads, config.learning_rate)
            epoch_losses.append(loss)
        trace.append(float(np.mean(epoch_losses)))
    return model, trace


CHECKPOINT_MAGIC = "masklab-checkpoint"


def save_checkpoint(model: Mlp, path, meta: Optional[dict] = None):
    """JSON header line + flat little-endian float64 parameter block."""
    with open(path, "wb") as fh:
        fh.write(checkpoint_bytes(model, meta))


def checkpoint_bytes(model: Mlp, meta: Optional[dict] = None) -> bytes:
    header = {
        "format": CHECKPOINT_MAGIC,
        "architecture": model.layer_sizes,
        "meta": meta or {},
    }
    blob = bytearray()
    blob += (json.dumps(header, sort_keys=True) + "\n").encode("utf-8")
    for w, b in zip(model.weights, model.biases):
        blob += np.ascontiguousarray(w, dtype="<f8").tobytes()
        blob += np.ascontiguousarray(b, dtype="<f8").tobytes()
    return bytes(blob)


def load_checkpoint_bytes(blob: bytes):
    """Returns (Mlp, meta dict); validates header and parameter block length."""
    nl = blob.find(b"\n")
    if nl < 0:
        raise ConfigError("checkpoint: missing header line")
    try:
        header = json.loads(blob[:nl].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ConfigError(f"checkpoint: bad header ({exc})") from exc
    if header.get("format") != CHECKPOINT_MAGIC:
        raise ConfigError("checkpoint: unrecognized format tag")
    sizes = header["architecture"]
    body = blob[nl + 1:]
    expected = sum(i * o + o for i, o in zip(sizes[:-1], sizes[1:]))
    if len(body) != expected * 8:
        raise ConfigError(
            f"checkpoint: parameter block is {len(body)} bytes, expected {expected * 8}"
        )
    flat = np.frombuffer(body, dtype="<f8").astype(np.float64)
    weights, biases, off = [], [], 0
    for i, o in zip(sizes[:-1], sizes[1:]):
        weights.append(flat[off:off + i * o].reshape(i, o).copy())
        off += i * o
        biases.append(flat[off:off + o].copy())
        off += o
    return Mlp(weights, biases), header.get("meta", {})


def load_checkpoint(path):
    with open(path, "rb") as fh:
        return load_checkpoint_bytes(fh.read())
