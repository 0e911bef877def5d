"""Solvers and verification harness for linear parabolic evolution equations
with singular time-dependent lower-order perturbations on finite-dimensional
diagonal models.
"""

from ._validation import (
    ContractionError,
    EnvelopeClassError,
    InvalidInputError,
    NotFittedError,
    ParameterError,
    RefinementError,
)
from .admissibility import *  # noqa: F401,F403
from .problems import *  # noqa: F401,F403
from .solver import *  # noqa: F401,F403
from .spaces import *  # noqa: F401,F403
from .verify import *  # noqa: F401,F403
from . import admissibility, cli, problems, solver, spaces, verify  # noqa: E402

__version__ = "0.1.0"
