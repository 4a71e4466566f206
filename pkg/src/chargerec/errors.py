"""Exception hierarchy shared across the package."""


class ChargeRecError(Exception):
    """Base class for all package errors."""


class ConfigError(ChargeRecError, ValueError):
    """Invalid scenario, run config, or hyperparameter."""


class GridBoundsError(ChargeRecError, IndexError):
    """A cell coordinate lies outside the grid."""


class ShapeError(ChargeRecError, ValueError):
    """Array or network dimensions do not line up."""


class CheckpointError(ChargeRecError):
    """A checkpoint file is corrupt, truncated, or of an unknown version."""


class InvariantError(ChargeRecError, RuntimeError):
    """Internal bookkeeping broke (cars lost or duplicated, capacity exceeded)."""


class BufferNotReady(ChargeRecError):
    """The replay buffer holds fewer transitions than the requested batch."""


class NumericAbort(ChargeRecError, FloatingPointError):
    """Training produced a non-finite loss or parameter."""

    def __init__(self, message, dump_path=None):
        super().__init__(message)
        self.dump_path = dump_path
