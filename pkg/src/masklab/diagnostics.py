"""Executable gradient-masking checklist and gradient-fidelity instrumentation.

Each check runs attacks against the defended model and flags when the
measured numbers violate a robustness-evaluation sanity rule. The overall
verdict is "masked" when the unbounded-budget check flags (individually
damning) or when at least two checks flag.
"""

from __future__ import annotations

import io
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .attacks import (AttackConfig, AttackSpec, _loss_and_input_grad, _loss_only,
                      _sample_rngs, _STREAM_PRE, evaluate)
from .defenses import DefendedModel, DiffRound
from .errors import ConfigError

# flag thresholds, in accuracy points (fractions)
ITERATIVE_MARGIN = 0.01
UNBOUNDED_MARGIN = 0.05
IMPROVES_MARGIN = 0.005
DEAD_ZERO_FRACTION = 0.99
DEAD_LOSS_INCREASE_RATE = 0.05


@dataclass
class CheckRecord:
    name: str
    measured: dict
    flagged: bool
    rule: str

    def to_dict(self) -> dict:
        return {"name": self.name, "measured": self.measured,
                "flagged": self.flagged, "rule": self.rule}


@dataclass
class GradientStats:
    mean_abs_gradient: float
    zero_gradient_fraction: float
    sign_agreement: float
    loss_increase_rate: float

    def to_dict(self) -> dict:
        return {
            "mean_abs_gradient": self.mean_abs_gradient,
            "zero_gradient_fraction": self.zero_gradient_fraction,
            "sign_agreement": self.sign_agreement,
            "loss_increase_rate": self.loss_increase_rate,
        }


@dataclass
class ChecklistReport:
    checks: list
    verdict: str  # no evidence | suspicious | masked
    gradient_stats: GradientStats

    def to_dict(self) -> dict:
        return {
            "schema_version": 1,
            "checks": [c.to_dict() for c in self.checks],
            "gradient_stats": self.gradient_stats.to_dict(),
            "verdict": self.verdict,
        }

    def summary(self) -> str:
        lines = [f"verdict: {self.verdict}"]
        for c in self.checks:
            state = "FLAG" if c.flagged else "ok"
            lines.append(f"  [{state:4s}] {c.name}: {c.measured}")
        return "\n".join(lines)


def _pgd_spec(name: str, eps: float, seed: int) -> AttackSpec:
    return AttackSpec(name=name, kind="pgd", eps=eps, steps=100, seed=seed)


def check_iterative_vs_single(model: DefendedModel, dataset, eps: float,
                              seed: int = 0, threads: int = 1) -> CheckRecord:
    """Iterative attacks should do at least as well as single-step attacks."""
    fgsm_rep = evaluate(model, dataset, AttackSpec("fgsm", "fgsm", eps, seed=seed),
                        threads=threads)
    pgd_rep = evaluate(model, dataset, _pgd_spec("pgd100", eps, seed), threads=threads)
    flagged = pgd_rep.robust_accuracy > fgsm_rep.robust_accuracy + ITERATIVE_MARGIN
    return CheckRecord(
        "iterative_vs_single",
        {"fgsm_robust_accuracy": fgsm_rep.robust_accuracy,
         "pgd100_robust_accuracy": pgd_rep.robust_accuracy, "eps": eps},
        flagged,
        "a 100-step iterative attack should not leave higher robust accuracy "
        "than one FGSM step",
    )


def check_unbounded(model: DefendedModel, dataset, seed: int = 0,
                    threads: int = 1) -> CheckRecord:
    """At eps=0.5 any input can be turned gray; accuracy above chance is impossible."""
    rep = evaluate(model, dataset, _pgd_spec("pgd100_eps0.5", 0.5, seed), threads=threads)
    chance = 1.0 / dataset.n_classes
    flagged = rep.robust_accuracy > chance + UNBOUNDED_MARGIN
    return CheckRecord(
        "unbounded_eps",
        {"robust_accuracy": rep.robust_accuracy, "chance": chance,
         "threshold": chance + UNBOUNDED_MARGIN},
        flagged,
        "robust accuracy at eps=0.5 must not beat random guessing",
    )


def check_noise_floor(model: DefendedModel, dataset, eps: float, seed: int = 0,
                      threads: int = 1, trials: int = 100) -> CheckRecord:
    """Gradient attacks should beat random noise of the same norm."""
    noise_rep = evaluate(model, dataset,
                         AttackSpec("noise", "noise", eps, trials=trials, seed=seed),
                         threads=threads)
    pgd_rep = evaluate(model, dataset, _pgd_spec("pgd100", eps, seed), threads=threads)
    flagged = noise_rep.attack_success_rate > pgd_rep.attack_success_rate
    return CheckRecord(
        "noise_floor",
        {"noise_success": noise_rep.attack_success_rate,
         "pgd_success": pgd_rep.attack_success_rate, "eps": eps},
        flagged,
        "random noise of the correct norm must not outperform the gradient attack",
    )


def check_attack_improves_accuracy(clean_accuracy: float,
                                   robust_accuracy: float) -> CheckRecord:
    """A model should not perform better under attack than with no attack."""
    flagged = robust_accuracy > clean_accuracy + IMPROVES_MARGIN
    return CheckRecord(
        "attack_improves_accuracy",
        {"clean_accuracy": clean_accuracy, "robust_accuracy": robust_accuracy},
        flagged,
        "accuracy under attack must not exceed clean accuracy",
    )


def gradient_stats(model: DefendedModel, dataset, eps: float, steps: int = 100,
                   seed: int = 0, max_fd_coords: int = 32,
                   fd_samples: int = 4) -> GradientStats:
    """Input-gradient statistics at clean points plus the PGD loss-increase rate.

    Sign agreement uses central finite differences of the attack-phase loss
    as the oracle, on a seeded subset of coordinates.
    """
    x = np.asarray(dataset.inputs, dtype=np.float64)
    labels = np.asarray(dataset.labels, dtype=np.int64)
    n, d = x.shape
    _, g = _loss_and_input_grad(model, x, labels,
                                rngs=_sample_rngs(seed, _STREAM_PRE, range(n)))
    mean_abs = float(np.mean(np.abs(g)))
    zero_frac = float(np.mean(g == 0.0))

    rng = np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=(9,)))
    agree, total = 0, 0
    h = 1e-5
    for i in rng.choice(n, size=min(fd_samples, n), replace=False):
        coords = rng.choice(d, size=min(max_fd_coords, d), replace=False)
        xi = x[i:i + 1]
        li = labels[i:i + 1]

        def loss_at(v):
            return float(_loss_only(model, v[None, :], li, "attack")[0])

        base = xi[0]
        for c in coords:
            pert = base.copy()
            pert[c] += h
            fp = loss_at(pert)
            pert[c] = base[c] - h
            fm = loss_at(pert)
            fd = (fp - fm) / (2 * h)
            agree += int(np.sign(fd) == np.sign(g[i, c]))
            total += 1
    sign_agreement = agree / total if total else 1.0

    # loss-increase rate across a PGD run on a small prefix of the dataset
    m = min(16, n)
    cfg = AttackConfig(eps=eps, steps=steps, random_start=True, seed=seed)
    x0 = x[:m]
    lab = labels[:m]
    step = cfg.resolved_step_size()
    rngs_start = _sample_rngs(seed, 0, range(m))
    pre_rngs = _sample_rngs(seed, _STREAM_PRE, range(m))
    cur = np.clip(x0 + np.stack([r.uniform(-eps, eps, size=d) for r in rngs_start]), 0, 1)
    loss, grad = _loss_and_input_grad(model, cur, lab, rngs=pre_rngs)
    increases, steps_counted = 0, 0
    for _ in range(steps):
        cur = np.clip(np.clip(cur + step * np.sign(grad), x0 - eps, x0 + eps), 0, 1)
        new_loss, grad = _loss_and_input_grad(model, cur, lab, rngs=pre_rngs)
        increases += int(np.sum(new_loss > loss + 1e-12))
        steps_counted += m
        loss = new_loss
    rate = increases / steps_counted if steps_counted else 0.0
    return GradientStats(mean_abs, zero_frac, sign_agreement, rate)


def check_gradient_health(stats: GradientStats) -> CheckRecord:
    flagged = (stats.zero_gradient_fraction >= DEAD_ZERO_FRACTION
               or stats.loss_increase_rate <= DEAD_LOSS_INCREASE_RATE)
    return CheckRecord(
        "gradient_health",
        stats.to_dict(),
        flagged,
        "input gradients should be nonzero and gradient steps should "
        "increase the loss",
    )


def rounding_sweep(c: float = 0.01, decimals: int = 0, lo: float = 0.0,
                   hi: float = 0.3, n_points: int = 256) -> list:
    """(x, diff_round(x), tape gradient) rows over a uniform grid."""
    if not lo < hi:
        raise ConfigError("rounding_sweep: lo must be < hi")
    if n_points < 2:
        raise ConfigError("rounding_sweep: n_points must be >= 2")
    pre = DiffRound(decimals=decimals, error_coefficient=c)
    xs = np.linspace(lo, hi, n_points)
    rows = []
    for xv in xs:
        tape = ad.Tape()
        xt = tape.input(np.asarray(xv))
        out = pre.build(tape, xt)
        grads = ad.backward(tape, out)
        rows.append((float(xv), float(out.value), float(grads[xt.nid])))
    return rows


def sweep_csv(rows) -> str:
    buf = io.StringIO()
    buf.write("x,value,gradient\n")
    for x, v, g in rows:
        buf.write(f"{x:.17g},{v:.17g},{g:.17g}\n")
    return buf.getvalue()


def run_checklist(model: DefendedModel, dataset, eps: float, seed: int = 0,
                  threads: int = 1) -> ChecklistReport:
    """All checks plus gradient statistics; verdict per the masking rule."""
    pgd_rep = evaluate(model, dataset, _pgd_spec("pgd100", eps, seed), threads=threads)
    checks = [
        check_iterative_vs_single(model, dataset, eps, seed=seed, threads=threads),
        check_unbounded(model, dataset, seed=seed, threads=threads),
        check_noise_floor(model, dataset, eps, seed=seed, threads=threads),
        check_attack_improves_accuracy(pgd_rep.clean_accuracy, pgd_rep.robust_accuracy),
    ]
    stats = gradient_stats(model, dataset, eps, seed=seed)
    checks.append(check_gradient_health(stats))
    n_flags = sum(c.flagged for c in checks)
    unbounded_flag = any(c.name == "unbounded_eps" and c.flagged for c in checks)
    if unbounded_flag or n_flags >= 2:
        verdict = "masked"
    elif n_flags == 1:
        verdict = "suspicious"
    else:
        verdict = "no evidence"
    return ChecklistReport(checks, verdict, stats)
