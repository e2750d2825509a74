"""Exception types shared across the benchmark."""


class S2RBError(Exception):
    """Base class for all benchmark errors."""


class ConfigError(S2RBError):
    pass


class ProtocolError(S2RBError):
    """Environment used out of order (e.g. stepping a terminated episode)."""


class ScheduleError(S2RBError):
    pass


class ShapeError(S2RBError):
    pass


class NumericalError(S2RBError):
    pass


class CheckpointError(S2RBError):
    pass


class ProtocolMismatch(S2RBError):
    """Two artifacts were produced under incompatible protocols or configs."""
