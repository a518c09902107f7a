"""Exception types shared across the package."""


class UsageError(ValueError):
    """An operation was called with arguments that violate its contract."""


class DataError(Exception):
    """A dataset file is missing, malformed, or inconsistent."""


class ConfigError(Exception):
    """A configuration is internally inconsistent or incompatible with its inputs."""


class TrainingError(Exception):
    """Training cannot continue (e.g. the loss went non-finite)."""
