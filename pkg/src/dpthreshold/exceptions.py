"""Exception and warning classes raised by dpthreshold."""


class PanelThresholdError(Exception):
    """Base class for all package errors."""


class DataError(PanelThresholdError):
    """Input data cannot be turned into a balanced panel."""


class UnbalancedPanel(DataError):
    pass


class DuplicateObservation(DataError):
    pass


class NonNumericCell(DataError):
    pass


class MissingColumn(DataError):
    pass


class MissingValue(DataError):
    pass


class TooShort(DataError):
    pass


class LagTooDeep(DataError):
    pass


class SpecificationError(PanelThresholdError):
    """Model specification is inconsistent with itself or with the data."""


class OrderConditionViolated(SpecificationError):
    pass


class CollinearInstruments(SpecificationError):
    pass


class DimensionMismatch(SpecificationError):
    pass


class EmptyGrid(SpecificationError):
    pass


class UnstableParams(SpecificationError):
    pass


class NumericalError(PanelThresholdError):
    """A numerical step failed beyond what the fallbacks can absorb."""


class AllGridPointsSingular(NumericalError):
    pass


class DegenerateSample(NumericalError):
    pass


class SingularMatrixWarning(RuntimeWarning):
    """A matrix was inverted with a Moore-Penrose pseudo-inverse."""


class NearSingularGram(RuntimeWarning):
    """The slope Gram matrix has condition number above 1e12."""


class RankDeficientJacobian(RuntimeWarning):
    """The moment Jacobian is rank deficient; some intervals are unavailable."""
