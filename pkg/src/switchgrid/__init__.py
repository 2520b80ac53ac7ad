"""Penalised finite-difference solver for optimal switching under state constraints."""
from .domains import ConstraintDomain
from .errors import (ConfigError, DivergenceError, ExtrapolationError, NumericalError,
                     ObstacleError, SchemeError, SwitchgridError, ValidationError,
                     VerificationError)
from .grid import GridSpec, ValueField, build_grid, cfl_timestep, interp, steps_for_cfl
from .kernels import BACKEND
from .model import (ModelSpec, builtin_counterexample, builtin_pumped_storage,
                    check_h3_sufficient, load_model, validate_model)
from .penalty import dist_to_domain, penalized_running, penalized_terminal, theta
from .solver import SchemeParams, SwitchingPolicy, extract_policy, solve

__version__ = "0.1.0"
