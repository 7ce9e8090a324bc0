"""Shared exception types."""


class ConfigError(ValueError):
    """A configuration value or file is invalid."""


class CapacityError(ValueError):
    """A request exceeds what the finite universe / pool / prefix can hold."""


class InconsistencyError(ValueError):
    """Observations contradict every hypothesis that should explain them."""


class UnsupportedEpisodeError(ValueError):
    """The requested episode kind is undefined (e.g. teaching a singleton class)."""


class ParseError(ValueError):
    """A token sequence does not follow the episode layout."""

    def __init__(self, message: str, position: int | None = None):
        if position is not None:
            message = f"{message} (at position {position})"
        super().__init__(message)
        self.position = position


class CheckpointError(RuntimeError):
    """A checkpoint file is unreadable or does not match the model."""


class GeneratorBugError(RuntimeError):
    """An internal invariant of episode generation was violated."""
