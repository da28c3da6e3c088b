"""Exception types shared across the toolkit."""


class LiwError(Exception):
    """Base class for all toolkit errors."""


class ConfigError(LiwError):
    """Invalid configuration value, unknown key, or unusable input spec."""


class CheckpointError(LiwError):
    """Checkpoint file is missing fields, truncated, or from another format version."""


class TrainingDiverged(LiwError):
    """Training loss became non-finite."""


class AttackError(LiwError):
    """Attack loop hit a non-recoverable numeric condition (e.g. non-finite gradient)."""
