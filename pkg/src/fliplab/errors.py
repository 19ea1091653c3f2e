"""Exception taxonomy shared across the package."""


class FlipLabError(Exception):
    """Base class for every error raised by this package."""


class ConfigError(FlipLabError, ValueError):
    """Invalid game, training, or experiment configuration."""


class SpecError(ConfigError):
    """Malformed agent spec string or inconsistent heuristic parameters."""


class EpisodeFinishedError(FlipLabError, RuntimeError):
    """An action was submitted to an episode that already reached its horizon."""


class ProtocolError(FlipLabError, RuntimeError):
    """A policy violated the act/reset contract (bad type, bad resource index)."""


class CheckpointError(FlipLabError, ValueError):
    """Unreadable, corrupt, or incompatible checkpoint file."""


class TrainingError(FlipLabError, RuntimeError):
    """A training update produced a non-finite loss or parameters."""
