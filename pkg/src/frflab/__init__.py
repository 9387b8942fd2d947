"""Local frequency response function estimation: classical local methods,
kernel-regularized local estimators and a synthetic benchmark harness."""

from .errors import (FrfLabError, InvalidArgument, NotPositiveDefinite, OrderTooLarge, TuningFailed,
                     UnstableSystem)
from .estimate import FrfEstimate
from .kernels import KernelSpec
from .spectra import ExperimentConfig, SpectraRecord, TestSystem, default_system, simulate

__version__ = "0.1.0"

__all__ = [
    "ExperimentConfig", "FrfEstimate", "FrfLabError", "InvalidArgument", "KernelSpec", "NotPositiveDefinite",
    "OrderTooLarge", "SpectraRecord", "TestSystem", "TuningFailed", "UnstableSystem", "default_system",
    "simulate",
]
