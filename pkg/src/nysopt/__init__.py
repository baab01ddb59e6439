"""Nystrom-approximated Newton-sketch methods for convex empirical risk minimization."""

from .data import BatchSampler, Dataset, load_libsvm, parse_libsvm, synthetic_adult
from .diagnostics import effective_dimension, newton_closeness, quality_sweep, rel_error
from .errors import ConfigError, DivergenceError, ParseError, SingularMatrixError
from .losses import LossModel
from .nystrom import NystromFactor, apply_inverse, build_factor, dense_reconstruct, sample_columns
from .optimizers import (
    OptimizerConfig,
    TraceRecord,
    check_step_admissibility,
    newton_minimize,
    run,
    run_baseline,
    run_nys_sgd,
    run_nys_svrg,
)

__version__ = "0.1.0"
