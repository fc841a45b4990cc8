"""Exception hierarchy shared by all modules."""


class TridentNavError(Exception):
    """Base class for every error raised by this package."""


class DomainError(TridentNavError, ValueError):
    """Argument outside the mathematical domain of an operation."""


class ContractError(TridentNavError, ValueError):
    """A documented precondition on an argument was violated."""


class NormalizationError(TridentNavError, ValueError):
    """A trident quaternion does not satisfy the unit invariants."""


class PropagationError(TridentNavError, ArithmeticError):
    """Mechanization produced a non-finite state."""

    def __init__(self, message, field=None, index=None):
        super().__init__(message)
        self.field = field
        self.index = index


class IngestionError(TridentNavError, ValueError):
    """Malformed or out-of-order input data.

    ``location`` is a line number for files or a sample index for in-memory
    sequences.
    """

    def __init__(self, message, location=None, path=None):
        super().__init__(message)
        self.location = location
        self.path = path


class OutputError(TridentNavError, OSError):
    """Writing an output file failed; ``path`` names it."""

    def __init__(self, message, path=None):
        super().__init__(message)
        self.path = path


class ConfigError(TridentNavError, ValueError):
    """Invalid run configuration or profile specification."""


class SpecError(ConfigError):
    """Invalid trajectory profile; names the offending segment."""

    def __init__(self, message, segment=None):
        super().__init__(message)
        self.segment = segment


class NumericalHealthError(TridentNavError, ArithmeticError):
    """Covariance lost positive semi-definiteness or S is singular."""


class DivergenceError(TridentNavError, ArithmeticError):
    """Filter correction left the small-error regime."""

    def __init__(self, message, index=None):
        super().__init__(message)
        self.index = index


class InitializationError(TridentNavError, ValueError):
    """Not enough data to initialize the filter."""
