"""masklab: a desk-scale laboratory for evaluating preprocessor defenses
against adversarial examples, with gradient-masking diagnostics.
"""

from .attacks import AttackConfig, AttackSpec, EvalReport, eot_pgd, evaluate, fgsm, noise_attack, pgd
from .data import Dataset, load_idx, save_idx, split, synthetic_blobs
from .defenses import (Chain, DefendedModel, DiffRound, HardQuantize, Identity,
                       Invert, PrecisionBlend, Preprocessor, defended_forward,
                       diff_round, hard_quantize, precision_blend)
from .diagnostics import ChecklistReport, GradientStats, rounding_sweep, run_checklist
from .errors import (ConfigError, DataFormatError, MaskLabError, NonFiniteError,
                     ShapeError, TrainingDivergence)
from .nn import Mlp, TrainConfig, init_mlp, train

__version__ = "0.1.0"
