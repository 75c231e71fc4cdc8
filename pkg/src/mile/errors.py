"""Exception types raised across the package."""

from __future__ import annotations


class MileError(Exception):
    """Base class for all package errors."""


class DisconnectedGraph(MileError):
    pass


class SpectrumViolation(MileError):
    """A mixing matrix fails one of the spectral admissibility clauses."""

    def __init__(self, clause: int, message: str):
        super().__init__(f"clause {clause}: {message}")
        self.clause = clause


class XiOutOfRange(MileError):
    def __init__(self, xi: float, low: float, high: float):
        super().__init__(f"xi={xi!r} outside the open interval ({low}, {high})")
        self.xi = xi
        self.interval = (low, high)


class RhoOutOfRange(MileError):
    def __init__(self, rho: float, low: float, high: float):
        super().__init__(f"rho={rho!r} outside the open interval ({low}, {high})")
        self.rho = rho
        self.interval = (low, high)


class NonFiniteInput(MileError):
    pass


class ConfigInvalid(MileError):
    pass


class Diverged(MileError):
    """Raised by a step when an iterate entry exceeds the divergence sentinel."""

    def __init__(self, t: int, max_abs: float):
        super().__init__(f"diverged at t={t} (max |entry| = {max_abs:.3g})")
        self.t = t
        self.max_abs = max_abs


class StepsizeTooLarge(MileError):
    pass


class ModeMismatch(MileError):
    pass


class DimensionMismatch(MileError):
    pass


class EmptyTrace(MileError):
    pass


class NonPositiveMetric(MileError):
    pass


class TooFewPoints(MileError):
    pass


class ConfigParse(MileError):
    """Config file could not be parsed or failed schema validation."""

    def __init__(self, message: str, path: str | None = None, field: str | None = None, line: int | None = None):
        where = []
        if path:
            where.append(str(path))
        if line is not None:
            where.append(f"line {line}")
        if field:
            where.append(f"field '{field}'")
        prefix = ": ".join([", ".join(where)]) + ": " if where else ""
        super().__init__(prefix + message)
        self.field = field
        self.line = line


class SchemaMismatch(MileError):
    pass
