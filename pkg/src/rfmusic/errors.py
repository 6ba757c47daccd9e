"""Exception types shared across the package."""


class ShapeError(ValueError):
    """Operand shapes are incompatible with an operation's contract."""


class ConfigError(ValueError):
    """A configuration value violates its documented constraints."""


class ContractError(ValueError):
    """An operation was called outside its contract (e.g. non-scalar loss)."""


class NumericError(FloatingPointError):
    """A NaN or Inf appeared where only finite values are allowed."""


class InputError(ValueError):
    """External input (audio, file, text) violates the expected format."""


class CheckpointError(IOError):
    """Base class for checkpoint load failures."""


class CheckpointCorruptError(CheckpointError):
    """Checkpoint payload failed its checksum or is truncated."""


class CheckpointVersionError(CheckpointError):
    """Checkpoint was written by an incompatible format version."""


class TrainAbortError(RuntimeError):
    """Training was aborted (non-finite loss or gradient)."""
