"""Exception types shared across the package."""


class NumericalError(RuntimeError):
    """A numerical backend failed (SVD did not converge, singular solve, ...)."""


class SizeLimitError(RuntimeError):
    """A dense materialization would exceed the configured memory budget."""


class ConfigError(ValueError):
    """A run configuration is malformed or inconsistent."""
