"""Exception types shared across the package."""


class CRBeamError(Exception):
    pass


class NotPositiveDefinite(CRBeamError, ValueError):
    pass


class DimensionMismatch(CRBeamError, ValueError):
    pass


class ZeroMatrix(CRBeamError, ValueError):
    pass


class ZeroChannel(CRBeamError, ValueError):
    pass


class CapExceeded(CRBeamError, ValueError):
    """Raised when an exhaustive routine is asked to run above its size cap."""


class InnerInfeasible(CRBeamError):
    """The SINR-constrained inner problem has no solution."""


class NotDecodable(CRBeamError):
    """The supplied minimum-rate vector is not decodable at some receiver."""

    def __init__(self, receiver, margin):
        super().__init__(f"minimum rates not decodable at receiver {receiver} (margin {margin:.3e})")
        self.receiver = receiver
        self.margin = margin


class ParseError(CRBeamError):
    def __init__(self, message, line=None, field=None):
        where = []
        if line is not None:
            where.append(f"line {line}")
        if field is not None:
            where.append(f"field {field!r}")
        prefix = f"{', '.join(where)}: " if where else ""
        super().__init__(prefix + message)
        self.line = line
        self.field = field


class ValidationError(CRBeamError):
    def __init__(self, violations):
        self.violations = list(violations)
        super().__init__("invalid scenario:\n  " + "\n  ".join(self.violations))
