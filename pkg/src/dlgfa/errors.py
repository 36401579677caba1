"""Exception hierarchy shared across the package."""


class DlgfaError(Exception):
    """Base class for all errors raised by dlgfa."""


class DimensionError(DlgfaError, ValueError):
    """Operand shapes are incompatible."""


class NonFiniteError(DlgfaError, FloatingPointError):
    """A forward computation produced NaN or Inf."""


class ContractError(DlgfaError, RuntimeError):
    """A caller violated an operation's precondition."""


class OracleError(DlgfaError, RuntimeError):
    """The finite-difference oracle could not produce a trustworthy answer."""


class SequenceLengthError(DlgfaError, ValueError):
    """A batch is longer than the model's configured number of timesteps."""


class TrainingError(DlgfaError, RuntimeError):
    """Training diverged (non-finite objective)."""


class DataError(DlgfaError, ValueError):
    """Malformed dataset, CSV input, or split specification."""


class ConfigError(DlgfaError, ValueError):
    """Invalid run configuration."""
