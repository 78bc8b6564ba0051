"""Exception and warning types shared across the package."""


class QpeError(Exception):
    """Base class for all package-specific errors."""


class DimensionMismatch(QpeError):
    """Operands live on Hilbert spaces of different dimension."""


class NonPhysicalState(QpeError):
    """Density matrix violates trace/Hermiticity/positivity tolerances."""


class NumericalBlowup(QpeError):
    """Integration left the physically sensible regime (trace or entries diverged)."""


class DtMismatch(QpeError):
    """Stepper time step incompatible with the record sampling step."""


class EmptyRecord(QpeError):
    """A trajectory record with no samples was supplied."""


class InvalidParam(QpeError):
    """Model parameter point is malformed (wrong arity, non-finite, negative rate...)."""


class FormatError(QpeError):
    """Record or table file is malformed."""


class MissingTruth(QpeError):
    """Operation needs the hidden truth channel but the record has none."""


class AlignmentError(QpeError):
    """Estimator run and record do not share the same time grid."""


class InvalidGrid(QpeError):
    """Parameter grid is degenerate or malformed."""


class BracketCollapse(QpeError):
    """Refinement argmin pinned to the bracket edge; the true value lies outside."""


class AllPointsFailed(QpeError):
    """Every grid point of a sweep failed to evaluate."""


class BandOutOfRange(QpeError):
    """Requested integration band exceeds the tabulated frequency range."""


class GridMismatch(QpeError):
    """Spectral tabulations do not share a common frequency grid."""


class TooFewSamples(QpeError):
    """Not enough samples for the requested spectral segmentation."""


class TruncationWarning(UserWarning):
    """Fock-space truncation lost a non-negligible amount of norm."""
