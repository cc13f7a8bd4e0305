"""Localized reduced basis methods for parameterized diffusion problems."""
from .errors import (ConfigurationError, NumericalError, ParameterError, PreconditionError,
                     QueryError, ResourceError)
from .grid import build_grid, decompose, oversampling_patch
from .space import assemble_product, build_block_space, evaluate
from .forms import assemble_affine_fom, assemble_rhs, theta_eval

__version__ = "0.1.0"
