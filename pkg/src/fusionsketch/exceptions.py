"""Exception hierarchy.

Everything derives from ``ValueError`` except ``NumericalConsistencyError``,
so callers validating user input can catch a single class.
"""


class DimensionError(ValueError):
    """Array lengths or shapes disagree with what the operation expects."""


class FusionConfigError(ValueError):
    """A fusion or sketch configuration is internally inconsistent."""


class CapacityError(ValueError):
    """Explicit bilinear output would exceed the configured element cap."""


class NumericalConsistencyError(ArithmeticError):
    """An inverse transform left a non-negligible imaginary part."""


class DataError(ValueError):
    """A modality pool or sample set violates its invariants."""


class EmptyPoolError(DataError):
    pass


class SchemaError(DataError):
    pass


class EmbeddingParseError(DataError):
    def __init__(self, lineno, message):
        super().__init__(f"line {lineno}: {message}")
        self.lineno = lineno
