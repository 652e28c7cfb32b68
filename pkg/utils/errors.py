from __future__ import annotations


class RiskBoundError(Exception):
    """Base class for every error raised by the toolkit."""


class DomainError(RiskBoundError, ValueError):
    pass


class AlignmentError(RiskBoundError, ValueError):
    def __init__(self, what: str, value: float, spacing: float):
        below = (value // spacing) * spacing
        above = below + spacing
        self.value = value
        self.spacing = spacing
        self.nearest = (below, above)
        super().__init__(
            f"{what}={value!r} is not a multiple of the grid spacing {spacing!r}; "
            f"nearest aligned values are {below!r} and {above!r}"
        )


class CoverageError(RiskBoundError, ValueError):
    pass


class InfeasibleAttackError(RiskBoundError):
    def __init__(self, message: str, distance: float | None = None):
        self.distance = distance
        super().__init__(message)


class SizeLimitError(RiskBoundError):
    pass


class PreconditionError(RiskBoundError):
    pass


class DegenerateBoundError(RiskBoundError):
    pass


class ConfigError(RiskBoundError):
    def __init__(self, field: str, message: str, line: int | None = None):
        self.field = field
        self.line = line
        where = f" (line {line})" if line is not None else ""
        super().__init__(f"{field}{where}: {message}")
