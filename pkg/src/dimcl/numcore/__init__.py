from .autodiff import Tape, Var, backward
from .ops import as_matrix, check_finite, l2_normalize, logsumexp, stable_softmax
from .rng import Rng

__all__ = [
    "Rng",
    "Tape",
    "Var",
    "as_matrix",
    "backward",
    "check_finite",
    "l2_normalize",
    "logsumexp",
    "stable_softmax",
]
