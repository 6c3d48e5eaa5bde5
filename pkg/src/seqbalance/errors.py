"""Exception types shared across the package."""


class SeqbalanceError(Exception):
    """Base class for errors raised by this package."""


class GraphError(SeqbalanceError):
    """Malformed pattern-graph input (parse or lookup failures)."""


class DataError(SeqbalanceError):
    """Problems loading or combining datasets."""


class ConfigError(SeqbalanceError):
    """Invalid run or study configuration."""


class FitError(SeqbalanceError):
    """A model fit could not be carried out on the given data."""


class ConvergenceError(FitError):
    """An iterative solver stopped without meeting its tolerance."""
