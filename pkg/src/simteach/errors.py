"""Exception types shared across the package.

The CLI maps these onto its exit-code contract: configuration/usage
problems exit 2, I/O problems exit 3 (plain OSError), numerical
divergence exits 4.
"""


class ConfigError(ValueError):
    """Invalid configuration value or unknown/missing config key."""


class UsageError(ValueError):
    """A function was called with arguments that make no sense (empty inputs etc.)."""


class ShapeError(ValueError):
    """Array dimensions do not match what the operation requires."""


class ParseError(ValueError):
    """A dataset file could not be parsed; message names the offending line."""


class SchemaError(ValueError):
    """A dataset file parsed but violates the schema (bad ids, ragged frames...)."""


class InfeasibleTargetError(ValueError):
    """The label sequence cannot be aligned to the available frames."""


class OracleScopeError(ValueError):
    """A brute-force test oracle was invoked outside its guarded size range."""


class NumericError(ArithmeticError):
    """Non-finite values where finite ones are required."""


class DivergenceError(RuntimeError):
    """Training diverged. Carries context so partial results can be reported."""

    def __init__(self, message, epoch=None, step=None, report=None, params=None):
        super().__init__(message)
        self.epoch = epoch
        self.step = step
        self.report = report
        self.params = params
