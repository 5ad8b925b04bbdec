"""Exception types shared across the workbench."""


class AdjforgeError(Exception):
    """Base class for all workbench errors."""


class DegeneratePolygonError(AdjforgeError):
    """Polygon has fewer than 3 usable vertices."""


class InvalidPolygonError(AdjforgeError):
    """Polygon violates orientation or self-intersection invariants."""


class TooFewPointsError(AdjforgeError):
    """Resampling spacing too large for the polygon perimeter."""


class IncompatibleCellsError(AdjforgeError):
    """Supercell composition with mismatched layers or materials."""


class AmbiguousEncodingError(AdjforgeError):
    """Design image parameter channel is not uniform enough to decode."""


class InvalidWindowError(AdjforgeError):
    """Median filter window is not a positive odd integer."""


class ExtractionError(AdjforgeError):
    """Image-to-polygon conversion found no recoverable closed loop.

    Carries the intermediate edge map for diagnosis.
    """

    def __init__(self, message, edge_map=None):
        super().__init__(message)
        self.edge_map = edge_map


class ResolutionError(AdjforgeError):
    """Simulation grid does not resolve a design layer."""


class SolverError(AdjforgeError):
    """Forward or adjoint solve failed.

    The offending wavelength, when known, is attached as ``wavelength_um``.
    """

    def __init__(self, message, wavelength_um=None):
        super().__init__(message)
        self.wavelength_um = wavelength_um


class InvalidMonitorError(AdjforgeError):
    """Reflection monitor line placed outside the homogeneous region."""


class StalenessError(AdjforgeError):
    """Adjoint requested against a forward field from a different solve."""


class InfeasibleDesignError(AdjforgeError):
    """Constraint projection collapsed the design."""


class NoGeneratorError(AdjforgeError):
    """Generation requested with no library entries or backend."""


class GenerationError(AdjforgeError):
    """External generator failed; the raw payload is attached when present."""

    def __init__(self, message, payload=None):
        super().__init__(message)
        self.payload = payload


class TargetValidationError(AdjforgeError):
    """Target specification rejected; ``field`` names the offending path."""

    def __init__(self, message, field=None):
        super().__init__(message)
        self.field = field


class StateConflictError(AdjforgeError):
    """Run action not legal from the current state."""


class RunNotFoundError(AdjforgeError):
    """No run with the requested id."""
