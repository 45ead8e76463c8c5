"""Gaussian-process regression with the Attentive Kernel and baselines."""

from akgp.gpr import GPRModel, Prediction
from akgp.kernels import (
    AttentiveKernel,
    DKLKernel,
    GibbsKernel,
    LengthscaleGrid,
    RBFKernel,
    make_kernel,
)

__all__ = [
    "AttentiveKernel",
    "DKLKernel",
    "GibbsKernel",
    "GPRModel",
    "LengthscaleGrid",
    "Prediction",
    "RBFKernel",
    "make_kernel",
]

__version__ = "0.1.0"
