"""Exception types shared across the package."""


class RsbcsError(Exception):
    """Base class for all package errors."""


class DomainError(RsbcsError, ValueError):
    """An R-transform was requested outside its real-analytic domain."""


class ConvergenceError(RsbcsError, RuntimeError):
    """A root-find or iteration exhausted its budget."""


class NoMinimizerError(RsbcsError, ValueError):
    """A scalar penalty objective is unbounded below."""


class NonFiniteError(RsbcsError, FloatingPointError):
    """An integrand produced a non-finite value at a quadrature node."""


class InvalidNegativeDiscriminant(RsbcsError, ArithmeticError):
    """The expression under an effective-noise square root is negative."""


class StateError(RsbcsError, RuntimeError):
    """An operation was called on a solution in the wrong state."""


class SizeError(RsbcsError, ValueError):
    """A problem is too large for the requested exact method."""


class ConfigError(RsbcsError, ValueError):
    """A configuration file or object failed validation."""


class MuRootNotBracketed(RsbcsError, ArithmeticError):
    """The Parisi-parameter equation shows no sign change on its search grid."""
