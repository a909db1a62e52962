"""Exception types shared across the package."""


class MgrsError(Exception):
    """Base class for all package errors."""


class ShapeError(MgrsError, ValueError):
    """Tensor or image dimensions are incompatible with an operation."""


class ContractError(MgrsError, ValueError):
    """A precondition of an operation was violated."""


class FormatError(MgrsError, ValueError):
    """A file could not be parsed (bad header, truncated payload, ...)."""


class CheckpointError(FormatError):
    """A checkpoint file is corrupt, of the wrong version, or inconsistent."""


class ConfigError(MgrsError, ValueError):
    """A config file contains an unknown key or an unparsable value."""


class NonFiniteError(MgrsError, FloatingPointError):
    """A forward, backward, or loss value became NaN or infinite."""
