"""Exception hierarchy.

The CLI maps these onto exit codes: configuration problems exit with 2,
numerical failures with 3, verification failures with 4.
"""


class SwitchgridError(Exception):
    """Base class for all package errors."""


class ConfigError(SwitchgridError, ValueError):
    """Malformed model, grid or run configuration."""


class ValidationError(SwitchgridError):
    """A coefficient evaluated to a non-finite value during validation."""

    def __init__(self, field, point, regime=None):
        self.field = field
        self.point = point
        self.regime = regime
        where = f"x={list(point)}" + ("" if regime is None else f", regime={regime}")
        super().__init__(f"non-finite value of {field!r} at {where}")


class NumericalError(SwitchgridError):
    """Base class for failures of the numerical scheme."""


class SchemeError(NumericalError):
    """Scheme parameters break monotonicity (CFL bound, stencil weights)."""


class DivergenceError(NumericalError):
    """The backward sweep produced a non-finite value."""

    def __init__(self, level, node, regime):
        self.level = level
        self.node = node
        self.regime = regime
        super().__init__(
            f"non-finite value at time level {level}, node {node}, regime {regime}"
        )


class ObstacleError(NumericalError):
    """Switching projection failed to stabilise (cost positivity violated)."""


class ExtrapolationError(SwitchgridError, ValueError):
    """Interpolation query outside the grid hull."""


class VerificationError(SwitchgridError):
    """An invariant check of the verification harness failed."""
