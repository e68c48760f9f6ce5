"""Exception types shared across the package."""


class MwionError(Exception):
    """Base class for all package errors."""


class NoRootError(MwionError):
    """A bracketed root search found no sign change."""


class ResonanceError(MwionError):
    """Drive frequency falls inside the guard band of a coupled transition."""


class FitError(MwionError):
    """Iterative fit did not converge; ``last`` carries the final iterate."""

    def __init__(self, message, last=None):
        super().__init__(message)
        self.last = last


class RankDeficiencyError(MwionError):
    """Data geometry cannot identify the fit parameters."""


class CutoffError(MwionError):
    """Fock-space truncation is too small for the requested state."""


class InvariantError(MwionError):
    """A density matrix or distribution violates a physical invariant."""


class ConfigError(MwionError):
    """Invalid or incomplete experiment configuration."""


class DataFormatError(MwionError):
    """Malformed or invalid external data file; ``line`` is 1-based when known."""

    def __init__(self, message, path=None, line=None):
        where = f"{path}:{line}: " if path is not None and line is not None else ""
        super().__init__(where + message)
        self.path = path
        self.line = line
