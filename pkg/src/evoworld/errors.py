"""Exception types shared across the package.

Every error raised on purpose derives from EvoworldError and carries a short
machine-parsable category used by the CLI when printing to stderr.
"""


class EvoworldError(Exception):
    category = "error"


class ConfigError(EvoworldError):
    """Invalid configuration: bad shapes, mismatched architectures, bad values."""

    category = "config"


class LogicError(EvoworldError):
    """API misuse: stepping a finished episode, comparing unevaluated individuals."""

    category = "logic"


class CorruptGenomeError(EvoworldError):
    """Genome stream failed checksum, magic, or version validation."""

    category = "corrupt-genome"


class CorruptCheckpointError(EvoworldError):
    """Checkpoint file failed checksum or structural validation."""

    category = "corrupt-checkpoint"


class StartupError(EvoworldError):
    """Run could not start: unwritable output directory, missing inputs."""

    category = "startup"
