"""Exception hierarchy shared across the package."""


class StitchError(Exception):
    """Base class for all errors raised by this package."""


class InputError(StitchError):
    """Invalid or inconsistent input data (files, masks, coordinates, config)."""


class EstimationError(StitchError):
    """A geometric model could not be estimated (degenerate or insufficient data)."""


class ConsensusError(StitchError):
    """No region pair survived regional RANSAC; caller may fall back to a global model."""


class AssemblyError(StitchError):
    """The mesh energy system could not be assembled."""


class SolverError(StitchError):
    """The sparse solve failed or produced non-finite vertices."""


class MetricError(StitchError):
    """A quality metric could not be evaluated (e.g. empty overlap)."""
