"""ℓ∞ attacks (FGSM, PGD, EoT-PGD, random-noise baseline) and robust-accuracy
evaluation against a DefendedModel, respecting the attack/eval phase split.

All randomness is derived per sample from (seed, stream, dataset index), so
results are independent of batching and thread count. Samples are processed
in fixed-size chunks; threads only parallelize chunk execution.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import autodiff as ad
from .defenses import DefendedModel, defended_forward
from .errors import ConfigError

CHUNK_SIZE = 16  # fixed so numerics never depend on the thread count

# stream tags for per-sample seed derivation
_STREAM_START = 0
_STREAM_PRE = 1
_STREAM_NOISE = 2
_STREAM_EVAL = 3


@dataclass
class AttackConfig:
    eps: float
    steps: int = 100
    step_size: Optional[float] = None  # default 2.5 * eps / steps
    random_start: bool = True
    eot_samples: int = 1
    seed: int = 0

    def validate(self):
        if not 0.0 <= self.eps <= 1.0:
            raise ConfigError(f"eps must be in [0, 1], got {self.eps}")
        if self.steps < 1:
            raise ConfigError("steps must be >= 1")
        if self.eot_samples < 1:
            raise ConfigError("eot_samples must be >= 1")
        if self.step_size is not None and self.step_size <= 0:
            raise ConfigError("step_size must be positive")

    def resolved_step_size(self) -> float:
        if self.step_size is not None:
            return self.step_size
        return 2.5 * self.eps / self.steps


@dataclass
class AttackResult:
    x_adv: np.ndarray
    loss: np.ndarray           # attack-phase loss at the returned iterate
    gradient_dead: np.ndarray  # bool per sample: gradient was zero at every iterate
    errors: np.ndarray         # bool per sample: non-finite loss, sample aborted


def _sample_rngs(seed: int, stream: int, indices) -> list:
    return [
        np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=(stream, int(i))))
        for i in indices
    ]


def _loss_only(model: DefendedModel, x, labels, phase: str, rngs=None) -> np.ndarray:
    tape = ad.Tape()
    logits = defended_forward(tape, model, tape.input(x), phase, rngs=rngs)
    return np.array(ad.xent_per_sample(logits, labels).value)


def _loss_and_input_grad(model: DefendedModel, x, labels, rngs=None, eot: int = 1):
    """Attack-phase per-sample loss and input gradient, averaged over eot passes."""
    loss_acc = None
    grad_acc = None
    for _ in range(eot):
        tape = ad.Tape()
        xt = tape.input(x)
        logits = defended_forward(tape, model, xt, "attack", rngs=rngs)
        lvec = ad.xent_per_sample(logits, labels)
        grads = ad.backward(tape, ad.sum_all(lvec))
        g = grads.get(xt.nid)
        if g is None:
            g = np.zeros_like(x)
        if loss_acc is None:
            loss_acc, grad_acc = np.array(lvec.value), g
        else:
            loss_acc = loss_acc + lvec.value
            grad_acc = grad_acc + g
    return loss_acc / eot, grad_acc / eot


def predict_defended(model: DefendedModel, x, seed: int = 0, indices=None) -> np.ndarray:
    """Eval-phase predictions (full preprocessor forward always applied)."""
    indices = range(len(x)) if indices is None else indices
    rngs = _sample_rngs(seed, _STREAM_EVAL, indices)
    tape = ad.Tape()
    logits = defended_forward(tape, model, tape.input(x), "eval", rngs=rngs)
    return np.argmax(logits.value, axis=1)


def fgsm(model: DefendedModel, x, labels, eps: float, sample_indices=None) -> AttackResult:
    """Single step x + eps * sign(attack-phase gradient), clipped to [0, 1]."""
    x = np.asarray(x, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    indices = np.arange(len(x)) if sample_indices is None else np.asarray(sample_indices)
    rngs = _sample_rngs(0, _STREAM_PRE, indices)
    loss, g = _loss_and_input_grad(model, x, labels, rngs=rngs)
    dead = ~np.any(g != 0.0, axis=1)
    x_adv = np.clip(x + eps * np.sign(g), 0.0, 1.0)
    final_loss = _loss_only(model, x_adv, labels, "attack",
                            rngs=_sample_rngs(0, _STREAM_PRE, indices))
    return AttackResult(x_adv, final_loss, dead, ~np.isfinite(loss))


def _iterative_attack(model, x, labels, config: AttackConfig, eot: int,
                      sample_indices=None) -> AttackResult:
    config.validate()
    x0 = np.asarray(x, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    n, d = x0.shape
    indices = np.arange(n) if sample_indices is None else np.asarray(sample_indices)
    start_rngs = _sample_rngs(config.seed, _STREAM_START, indices)
    pre_rngs = _sample_rngs(config.seed, _STREAM_PRE, indices)
    eps = config.eps
    step = config.resolved_step_size()

    cur = x0.copy()
    if config.random_start:
        delta = np.stack([rng.uniform(-eps, eps, size=d) for rng in start_rngs])
        cur = np.clip(x0 + delta, 0.0, 1.0)

    best_x = cur.copy()
    best_loss = np.full(n, -np.inf)
    saw_grad = np.zeros(n, dtype=bool)
    errored = np.zeros(n, dtype=bool)
    active = np.ones(n, dtype=bool)

    loss, g = _loss_and_input_grad(model, cur, labels, rngs=pre_rngs, eot=eot)
    for _ in range(config.steps):
        bad = ~np.isfinite(loss) & active
        if bad.any():
            errored |= bad
            active &= ~bad
        saw_grad |= np.any(g != 0.0, axis=1) & active
        prop = cur + step * np.sign(g)
        prop = np.clip(prop, x0 - eps, x0 + eps)
        prop = np.clip(prop, 0.0, 1.0)
        cur = np.where(active[:, None], prop, cur)
        loss, g = _loss_and_input_grad(model, cur, labels, rngs=pre_rngs, eot=eot)
        improved = (loss > best_loss) & active & np.isfinite(loss)
        best_x[improved] = cur[improved]
        best_loss[improved] = loss[improved]

    # samples whose candidates never improved keep their start iterate (the
    # gradient-dead fallback: random-start point rather than silently x0)
    dead = ~saw_grad
    return AttackResult(best_x, best_loss, dead, errored)


def pgd(model: DefendedModel, x, labels, config: AttackConfig,
        sample_indices=None) -> AttackResult:
    """Projected gradient descent with random start and best-iterate tracking."""
    return _iterative_attack(model, x, labels, config, eot=1, sample_indices=sample_indices)


def eot_pgd(model: DefendedModel, x, labels, config: AttackConfig,
            sample_indices=None) -> AttackResult:
    """PGD with each step's gradient averaged over eot_samples forward passes."""
    return _iterative_attack(model, x, labels, config, eot=config.eot_samples,
                             sample_indices=sample_indices)


def noise_attack(model: DefendedModel, x, labels, eps: float, trials: int = 100,
                 seed: int = 0, sample_indices=None) -> AttackResult:
    """Worst of `trials` corner samples: each coordinate independently ±eps."""
    if trials < 1:
        raise ConfigError("noise_attack: trials must be >= 1")
    x0 = np.asarray(x, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    n, d = x0.shape
    indices = np.arange(n) if sample_indices is None else np.asarray(sample_indices)
    rngs = _sample_rngs(seed, _STREAM_NOISE, indices)
    best_x = x0.copy()
    best_loss = _loss_only(model, x0, labels, "eval",
                           rngs=_sample_rngs(seed, _STREAM_EVAL, indices))
    for _ in range(trials):
        signs = np.stack([rng.integers(0, 2, size=d) * 2.0 - 1.0 for rng in rngs])
        cand = np.clip(x0 + eps * signs, 0.0, 1.0)
        loss = _loss_only(model, cand, labels, "eval",
                          rngs=_sample_rngs(seed, _STREAM_EVAL, indices))
        improved = loss > best_loss
        best_x[improved] = cand[improved]
        best_loss[improved] = loss[improved]
    dead = np.zeros(n, dtype=bool)
    return AttackResult(best_x, best_loss, dead, ~np.isfinite(best_loss))


@dataclass
class AttackSpec:
    """One attack line in an experiment: kind + its parameters."""

    name: str
    kind: str  # fgsm | pgd | eot_pgd | noise | none
    eps: float
    steps: int = 100
    step_size: Optional[float] = None
    random_start: bool = True
    eot_samples: int = 1
    trials: int = 100
    seed: int = 0

    def to_config(self) -> AttackConfig:
        return AttackConfig(eps=self.eps, steps=self.steps, step_size=self.step_size,
                            random_start=self.random_start, eot_samples=self.eot_samples,
                            seed=self.seed)


@dataclass
class EvalReport:
    attack: str
    eps: float
    n_samples: int
    clean_accuracy: float
    robust_accuracy: float
    attack_success_rate: float
    attack_success_on_correct: float
    gradient_dead_count: int
    error_count: int
    records: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "attack": self.attack,
            "eps": self.eps,
            "n_samples": self.n_samples,
            "clean_accuracy": self.clean_accuracy,
            "robust_accuracy": self.robust_accuracy,
            "attack_success_rate": self.attack_success_rate,
            "attack_success_on_correct": self.attack_success_on_correct,
            "gradient_dead_count": self.gradient_dead_count,
            "error_count": self.error_count,
        }

    def records_csv(self) -> str:
        lines = ["index,label,clean_pred,adv_pred,linf_distortion,gradient_dead"]
        for r in self.records:
            lines.append(
                f"{r['index']},{r['label']},{r['clean_pred']},{r['adv_pred']},"
                f"{r['linf_distortion']:.17g},{int(r['gradient_dead'])}"
            )
        return "\n".join(lines) + "\n"


def _run_attack_chunk(model, x, labels, spec: AttackSpec, indices):
    if spec.kind == "none":
        n = len(x)
        zero = np.zeros(n, dtype=bool)
        return AttackResult(np.asarray(x, dtype=np.float64).copy(),
                            np.zeros(n), zero, zero.copy())
    if spec.kind == "fgsm":
        return fgsm(model, x, labels, spec.eps, sample_indices=indices)
    if spec.kind == "pgd":
        return pgd(model, x, labels, spec.to_config(), sample_indices=indices)
    if spec.kind == "eot_pgd":
        return eot_pgd(model, x, labels, spec.to_config(), sample_indices=indices)
    if spec.kind == "noise":
        return noise_attack(model, x, labels, spec.eps, trials=spec.trials,
                            seed=spec.seed, sample_indices=indices)
    raise ConfigError(f"unknown attack kind {spec.kind!r}")


def evaluate(model: DefendedModel, dataset, spec: AttackSpec, threads: int = 1) -> EvalReport:
    """Attack every sample, re-classify in eval phase, aggregate the report.

    Deterministic given (seed, spec, model, dataset) and independent of
    `threads`: work is split into fixed-size chunks merged in index order.
    """
    if len(dataset.inputs) == 0:
        raise ConfigError("evaluate: dataset is empty")
    x = np.asarray(dataset.inputs, dtype=np.float64)
    labels = np.asarray(dataset.labels, dtype=np.int64)
    n = len(x)
    chunks = [(s, min(s + CHUNK_SIZE, n)) for s in range(0, n, CHUNK_SIZE)]

    def work(bounds):
        lo, hi = bounds
        idx = np.arange(lo, hi)
        clean_pred = predict_defended(model, x[lo:hi], seed=spec.seed, indices=idx)
        result = _run_attack_chunk(model, x[lo:hi], labels[lo:hi], spec, idx)
        adv_pred = predict_defended(model, result.x_adv, seed=spec.seed, indices=idx)
        dist = np.max(np.abs(result.x_adv - x[lo:hi]), axis=1) if result.x_adv.size else \
            np.zeros(0)
        return clean_pred, adv_pred, dist, result

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            outs = list(pool.map(work, chunks))
    else:
        outs = [work(c) for c in chunks]

    clean_pred = np.concatenate([o[0] for o in outs])
    adv_pred = np.concatenate([o[1] for o in outs])
    dist = np.concatenate([o[2] for o in outs])
    dead = np.concatenate([o[3].gradient_dead for o in outs])
    errs = np.concatenate([o[3].errors for o in outs])

    clean_ok = clean_pred == labels
    adv_ok = adv_pred == labels
    clean_acc = float(np.mean(clean_ok))
    robust_acc = float(np.mean(adv_ok))
    on_correct = float(np.mean(~adv_ok[clean_ok])) if clean_ok.any() else 0.0
    records = [
        {
            "index": int(i),
            "label": int(labels[i]),
            "clean_pred": int(clean_pred[i]),
            "adv_pred": int(adv_pred[i]),
            "linf_distortion": float(dist[i]),
            "gradient_dead": bool(dead[i]),
        }
        for i in range(n)
    ]
    return EvalReport(
        attack=spec.name, eps=spec.eps, n_samples=n,
        clean_accuracy=clean_acc, robust_accuracy=robust_acc,
        attack_success_rate=1.0 - robust_acc,
        attack_success_on_correct=on_correct,
        gradient_dead_count=int(dead.sum()), error_count=int(errs.sum()),
        records=records,
    )
