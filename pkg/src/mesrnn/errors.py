"""Exception taxonomy shared across the package.

The CLI maps these onto its exit codes: data/format problems exit 3,
numeric failures during training exit 4, everything contract-shaped is a
plain bug and raises through.
"""


class MesrnnError(Exception):
    """Base class for all package errors."""


class ShapeError(MesrnnError):
    """Operand shapes do not conform. Message names both shapes."""


class ContractError(MesrnnError):
    """An operation was invoked outside its contract (bad kind, non-scalar loss, ...)."""


class PresenceError(MesrnnError):
    """A pedestrian/time lookup where the pedestrian is absent."""


class DataFormatError(MesrnnError):
    """Malformed dataset file, bad synth spec, degenerate normalization input."""


class CheckpointError(MesrnnError):
    """Unreadable, truncated or inconsistent checkpoint file."""


class NumericError(MesrnnError):
    """Non-finite values encountered during training (diverged run)."""
