"""Exception types shared across the package."""


class BlochLabError(Exception):
    """Base class for all package errors."""


class StripOverlap(BlochLabError):
    pass


class EmptyRegion(BlochLabError):
    pass


class SiteOutOfRange(BlochLabError):
    pass


class OddTerm(BlochLabError):
    """A LocalTerm contains a monomial with an odd number of fermionic factors."""


class SectorViolation(BlochLabError):
    """An operator maps a fixed-charge basis outside of itself."""


class BasisMismatch(BlochLabError):
    pass


class OddLength(BlochLabError):
    pass


class RangeViolation(BlochLabError):
    """A model term has a support diameter not below the declared range."""


class NotHermitian(BlochLabError):
    pass


class NotChargeConserving(BlochLabError):
    pass


class IterationDivergence(BlochLabError):
    def __init__(self, message, residual=None):
        super().__init__(message)
        self.residual = residual


class NoGap(BlochLabError):
    def __init__(self, message, gap=None):
        super().__init__(message)
        self.gap = gap


class RequiresFullSpectrum(BlochLabError):
    pass


class StripTooNarrow(BlochLabError):
    pass


class QuadratureNotConverged(BlochLabError):
    def __init__(self, message, error=None):
        super().__init__(message)
        self.error = error


class StepSizeTooCoarse(BlochLabError):
    pass


class ProjectorNotInvariant(BlochLabError):
    def __init__(self, message, defect=None):
        super().__init__(message)
        self.defect = defect


class GapClosedAlongPath(BlochLabError):
    pass


class UnknownExperiment(BlochLabError):
    pass


class ConfigInvalid(BlochLabError):
    def __init__(self, message, field=None, line=None):
        loc = []
        if field is not None:
            loc.append(f"field '{field}'")
        if line is not None:
            loc.append(f"line {line}")
        super().__init__(f"{message} ({', '.join(loc)})" if loc else message)
        self.field = field
        self.line = line


class InsufficientPoints(BlochLabError):
    pass


class NonPositiveValues(BlochLabError):
    pass
