"""Exception types shared across the simulator."""


class ConfigError(ValueError):
    """An invalid model, federation, or experiment configuration."""


class FederationFormatError(ValueError):
    """A malformed federation file; carries the offending line number."""

    def __init__(self, message: str, line: int | None = None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class EvaluationError(RuntimeError):
    """Evaluation could not produce a metric (e.g. every user was skipped)."""
