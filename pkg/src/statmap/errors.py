"""Exception types shared across the package.

The CLI maps these onto exit codes: configuration problems exit with 2,
numerical failures with 3.
"""


class StatmapError(Exception):
    """Base class for all package errors."""


class ConfigurationError(StatmapError):
    """Invalid configuration value, malformed config file, or bad CLI input."""


class ParseError(ConfigurationError):
    """Malformed data or model file. Carries file context when available."""

    def __init__(self, message, path=None, line=None, field=None):
        parts = [message]
        if path is not None:
            parts.append(f"file={path}")
        if line is not None:
            parts.append(f"line={line}")
        if field is not None:
            parts.append(f"field={field}")
        super().__init__("; ".join(str(p) for p in parts))
        self.path = path
        self.line = line
        self.field = field


class NumericalError(StatmapError):
    """Base class for numerical failures (fits, factorizations, training)."""


class InsufficientSamplesError(NumericalError):
    """Too few samples for the requested quantile level.

    ``required`` is the minimum admissible sample count.
    """

    def __init__(self, n, epsilon, required):
        super().__init__(
            f"need more than {required - 1} samples to estimate the "
            f"{epsilon:g}-quantile, got {n}"
        )
        self.n = n
        self.epsilon = epsilon
        self.required = required


class DegenerateInputError(NumericalError):
    """Input has no usable structure (all-zero CSI, zero-variance samples)."""


class FitError(NumericalError):
    """A maximum-likelihood or hyperparameter fit failed."""


class IllConditionedError(NumericalError):
    """A kernel matrix could not be factorized for the given hyperparameters."""


class TrainingError(NumericalError):
    """Chart training aborted (non-finite loss or gradients)."""
