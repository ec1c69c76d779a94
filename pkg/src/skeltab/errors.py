"""Exception hierarchy shared across the package.

Exit-code mapping used by the command line front end:
  1 usage, 2 parse (spec file or CSV), 3 structural, 4 unbalanced, 5 oracle.
"""


class SkeltabError(Exception):
    """Base class for all errors raised by this package."""


class DimensionError(SkeltabError):
    """Label sets or shapes do not line up for a matrix operation."""


class FormulaError(SkeltabError):
    """Tier formula cannot be parsed or references the wrong factors."""

    def __init__(self, message: str, position: int | None = None):
        if position is not None:
            message = f"{message} (at position {position})"
        super().__init__(message)
        self.position = position


class SpecError(SkeltabError):
    """Experiment specification file or allocation CSV is malformed."""

    def __init__(self, message: str, line: int | None = None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class StructuralError(SkeltabError):
    """Declared factors, levels or pseudofactors are inconsistent."""


class UnsupportedDesignError(StructuralError):
    """Design function is not equireplicate; histogram is attached."""

    def __init__(self, message: str, histogram: dict | None = None):
        super().__init__(message)
        self.histogram = histogram or {}


class UnbalancedError(SkeltabError):
    """A refinement was requested for a pair that is not structure balanced."""

    def __init__(self, message: str, report=None):
        super().__init__(message)
        self.report = report


class OracleError(SkeltabError):
    """Floating-point spectral check deviates beyond tolerance."""

    def __init__(self, message: str, deviation: float | None = None):
        super().__init__(message)
        self.deviation = deviation
