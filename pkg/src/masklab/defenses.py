"""Preprocessor defenses and the defended classifier (classifier ∘ preprocessor).

Forward behavior and backward behavior are independently switchable via
gradient_mode, so the same defense can be attacked through its true
gradient, through a straight-through (identity-substitute) wrapper,
through an arbitrary surrogate's gradient, or with the preprocessor
omitted from the attack-time forward pass entirely. Evaluation-time
prediction always applies the full preprocessor forward.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from . import autodiff as ad
from .errors import ConfigError
from .nn import Mlp, mlp_forward

GRADIENT_MODES = ("true_gradient", "bpda_identity", "bpda_substitute", "omit_at_attack")
PHASES = ("attack", "eval")


class Preprocessor:
    """Base class: a pure input transform with selectable backward behavior."""

    kind = "base"

    def __init__(self, gradient_mode: str = "true_gradient",
                 substitute: Optional["Preprocessor"] = None):
        if gradient_mode not in GRADIENT_MODES:
            raise ConfigError(f"unknown gradient_mode {gradient_mode!r}")
        if gradient_mode == "bpda_substitute" and substitute is None:
            raise ConfigError("bpda_substitute requires a substitute preprocessor")
        if gradient_mode == "omit_at_attack" and not self.omissible():
            raise ConfigError(f"{self.kind}: no omissible sub-transform to bypass")
        self.gradient_mode = gradient_mode
        self.substitute = substitute

    def omissible(self) -> bool:
        return True

    def build(self, tape: ad.Tape, x: ad.Tensor, rngs=None) -> ad.Tensor:
        """True forward pass recorded on the tape (defines the true gradient)."""
        raise NotImplementedError

    def build_omitting(self, tape: ad.Tape, x: ad.Tensor, rngs=None) -> ad.Tensor:
        """Attack-time forward with the designated sub-transform skipped."""
        return x

    def forward_np(self, x: np.ndarray, rngs=None) -> np.ndarray:
        tape = ad.Tape()
        return np.array(self.build(tape, tape.input(x), rngs=rngs).value)

    def config_fields(self) -> dict:
        return {}


class Identity(Preprocessor):
    kind = "identity"

    def omissible(self) -> bool:
        return False

    def build(self, tape, x, rngs=None):
        return x


class Invert(Preprocessor):
    """Smooth, genuinely differentiable contrast flip x -> 1 - x.

    Its Jacobian is -I, so an identity-substitute (straight-through)
    gradient points exactly away from the true ascent direction: a
    constructed positive for masking diagnostics.
    """

    kind = "invert"

    def build(self, tape, x, rngs=None):
        return ad.add(ad.mul(x, -1.0), 1.0)


class DiffRound(Preprocessor):
    """Smoothed rounding with an error coefficient.

    s = 10^decimals; y = x*s; diff = (1+c)*y - floor(y);
    out = (y - diff + [diff >= 0.5]) / s.
    Away from the jump loci the true derivative is the constant -c.
    """

    kind = "diff_round"

    def __init__(self, decimals: int = 1, error_coefficient: float = 0.01, **kw):
        if decimals not in (0, 1):
            raise ConfigError(f"diff_round: decimals must be 0 or 1, got {decimals}")
        self.decimals = int(decimals)
        self.error_coefficient = float(error_coefficient)
        super().__init__(**kw)

    def build(self, tape, x, rngs=None):
        scale = float(10 ** self.decimals)
        y = ad.mul(x, scale)
        fl = ad.floor(y)
        diff = ad.sub(ad.mul(y, 1.0 + self.error_coefficient), fl)
        bump = ad.where_ge(diff, 0.5)
        return ad.mul(ad.add(ad.sub(y, diff), bump), 1.0 / scale)

    def config_fields(self):
        return {"decimals": self.decimals, "error_coefficient": self.error_coefficient}


def blend_decimals(eps: float) -> int:
    """Decimals of precision retained for a given attack budget eps (> 0)."""
    return max(min(-int(math.floor(math.log10(abs(1.25 * eps)))) - 1, 1), 0)


class PrecisionBlend(Preprocessor):
    """Discretize to a precision derived from eps; identity when eps == 0."""

    kind = "precision_blend"

    def __init__(self, eps: float = 0.0, error_coefficient: float = 0.01, **kw):
        if eps < 0:
            raise ConfigError("precision_blend: eps must be nonnegative")
        self.eps = float(eps)
        self.error_coefficient = float(error_coefficient)
        self._round = (
            DiffRound(blend_decimals(eps), error_coefficient) if eps > 0 else None
        )
        super().__init__(**kw)

    @property
    def decimals(self) -> Optional[int]:
        return self._round.decimals if self._round is not None else None

    def omissible(self) -> bool:
        return self._round is not None

    def build(self, tape, x, rngs=None):
        if self._round is None:
            return x
        return self._round.build(tape, x, rngs=rngs)

    def config_fields(self):
        return {"eps": self.eps, "error_coefficient": self.error_coefficient}


class HardQuantize(Preprocessor):
    """round(x*(L-1))/(L-1), half away from zero; true gradient is identically 0."""

    kind = "hard_quantize"

    def __init__(self, levels: int = 8, **kw):
        if levels < 2:
            raise ConfigError(f"hard_quantize: levels must be >= 2, got {levels}")
        self.levels = int(levels)
        super().__init__(**kw)

    def build(self, tape, x, rngs=None):
        # inputs are in [0, 1], so floor(y + 0.5) == round-half-away-from-zero
        v = float(self.levels - 1)
        return ad.mul(ad.floor(ad.add(ad.mul(x, v), 0.5)), 1.0 / v)

    def config_fields(self):
        return {"levels": self.levels}


class Chain(Preprocessor):
    """Left-to-right composition; omit_at_attack skips the link at omit_index."""

    kind = "chain"

    def __init__(self, parts: Sequence[Preprocessor], omit_index: Optional[int] = None, **kw):
        if not parts:
            raise ConfigError("chain: needs at least one part")
        self.parts = list(parts)
        if omit_index is not None and not (0 <= omit_index < len(self.parts)):
            raise ConfigError(f"chain: omit_index {omit_index} out of range")
        self.omit_index = omit_index
        super().__init__(**kw)

    def omissible(self) -> bool:
        return self.omit_index is not None

    def build(self, tape, x, rngs=None):
        for part in self.parts:
            x = part.build(tape, x, rngs=rngs)
        return x

    def build_omitting(self, tape, x, rngs=None):
        for i, part in enumerate(self.parts):
            if i == self.omit_index:
                continue
            x = part.build(tape, x, rngs=rngs)
        return x

    def config_fields(self):
        return {"parts": [p.kind for p in self.parts], "omit_index": self.omit_index}


def diff_round(x, decimals: int = 1, error_coefficient: float = 0.01) -> np.ndarray:
    return DiffRound(decimals, error_coefficient).forward_np(np.asarray(x, dtype=np.float64))


def precision_blend(x, eps: float, error_coefficient: float = 0.01) -> np.ndarray:
    return PrecisionBlend(eps, error_coefficient).forward_np(np.asarray(x, dtype=np.float64))


def hard_quantize(x, levels: int = 8) -> np.ndarray:
    return HardQuantize(levels).forward_np(np.asarray(x, dtype=np.float64))


@dataclass
class DefendedModel:
    preprocessor: Preprocessor
    classifier: Mlp


def defended_forward(tape: ad.Tape, model: DefendedModel, x: ad.Tensor,
                     phase: str, rngs=None) -> ad.Tensor:
    """Logits of the defended classifier.

    phase="eval" always applies the full preprocessor forward. phase="attack"
    selects forward/backward behavior from the preprocessor's gradient_mode.
    """
    if phase not in PHASES:
        raise ConfigError(f"unknown phase {phase!r}")
    pre = model.preprocessor
    if phase == "eval" or pre.gradient_mode == "true_gradient":
        u = pre.build(tape, x, rngs=rngs)
    elif pre.gradient_mode == "bpda_identity":
        u = ad.custom_grad(tape, x, lambda v: pre.forward_np(v, rngs=rngs),
                           substitute=None, name=f"bpda[{pre.kind}]")
    elif pre.gradient_mode == "bpda_substitute":
        sub = pre.substitute
        u = ad.custom_grad(
            tape, x, lambda v: pre.forward_np(v, rngs=rngs),
            substitute=lambda t, leaf: sub.build(t, leaf, rngs=rngs),
            name=f"bpda[{pre.kind}<-{sub.kind}]",
        )
    else:  # omit_at_attack, validated at construction
        u = pre.build_omitting(tape, x, rngs=rngs)
    return mlp_forward(tape, model.classifier, u)
