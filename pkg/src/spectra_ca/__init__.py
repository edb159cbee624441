"""Cross-attention networks over multiscale random Fourier features, with
adaptive frequency enhancement and two-network PDE solvers, on a small
reverse-mode autodiff core."""
from . import attention_net, feature_bank, optimize, pde_solvers, spectral, targets, tensor
from .errors import (ConfigError, ContractError, DimensionError, FormatError, NumericalError,
                     ParameterError, SpectraError)

__version__ = "0.1.0"

__all__ = ["attention_net", "feature_bank", "optimize", "pde_solvers", "spectral", "targets",
           "tensor", "ConfigError", "ContractError", "DimensionError", "FormatError",
           "NumericalError", "ParameterError", "SpectraError"]
