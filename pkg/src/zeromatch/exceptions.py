"""Exception types raised across the package."""


class DimensionError(ValueError):
    """Operand shapes are incompatible."""


class ClassIndexError(IndexError):
    """A hard class target is outside ``[0, K)``."""


class CoverageError(KeyError):
    """Pseudo-labels are missing for some requested sample indices."""

    def __init__(self, missing, what="pseudo-labels"):
        self.missing = list(missing)
        shown = ", ".join(str(i) for i in self.missing[:20])
        more = "" if len(self.missing) <= 20 else f" (+{len(self.missing) - 20} more)"
        super().__init__(f"{what} missing for indices: {shown}{more}")

    def __str__(self):
        return self.args[0]


class ConfigurationError(ValueError):
    pass


class ScheduleRangeError(ValueError):
    pass


class SplitError(ValueError):
    pass


class GenerationError(RuntimeError):
    pass


class ParseError(ValueError):
    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class ValidationError(ValueError):
    pass
