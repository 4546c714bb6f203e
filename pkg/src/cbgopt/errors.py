"""Exception types shared across the toolkit.

The CLI maps these onto process exit codes (config 2, numerical 3,
extrapolation 4); library code raises them directly.
"""


class ConfigError(ValueError):
    """Run configuration is malformed, incomplete, or self-contradictory."""


class DomainError(ValueError):
    """An argument lies outside the mathematical domain of an operation."""


class NumericalError(RuntimeError):
    """A linear-algebra step failed beyond the configured safeguards."""


class ExtrapolationError(ValueError):
    """A query distribution would leave the region a surrogate was trained on."""
