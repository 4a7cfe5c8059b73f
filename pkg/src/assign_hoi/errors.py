"""Exception hierarchy. ``exit_code`` is what the CLI returns for each."""


class AssignError(Exception):
    exit_code = 1


class ConfigError(AssignError, ValueError):
    exit_code = 2


class DataFormatError(AssignError):
    """A dataset directory is missing files or has unreadable metadata."""

    exit_code = 3


class IntegrityError(AssignError):
    """Dataset contents violate a structural invariant."""

    exit_code = 3


class TrainingDivergedError(AssignError, FloatingPointError):
    exit_code = 4


class CheckpointMismatchError(AssignError):
    exit_code = 5
