"""Exception hierarchy shared across the package."""


class MsgcompError(Exception):
    """Base class for all package errors."""


class DataError(MsgcompError):
    """Structural problem with panel data (missing values, bad columns)."""


class ConvergenceError(MsgcompError):
    """A maximum-likelihood fit failed to converge (e.g. separation)."""


class PositivityError(MsgcompError):
    """A conditioning cell has zero probability in an oracle evaluation."""


class EstimationError(MsgcompError):
    """An estimator could not produce an estimate on the given data."""


class BootstrapError(MsgcompError):
    """Every bootstrap replicate was discarded."""


class UsageError(MsgcompError):
    """Invalid configuration or arguments."""
