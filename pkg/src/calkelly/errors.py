"""Exception types shared across the package."""


class CalkellyError(Exception):
    """Base class for all package errors."""


class InvalidParams(CalkellyError):
    """A constructor or operation precondition was violated."""


class CapExceeded(InvalidParams):
    """Forecast-grid cardinality N blew past the configured safety cap."""

    def __init__(self, n: int, cap: int, detail: str = ""):
        self.n = n
        self.cap = cap
        msg = f"forecast grid would hold N={n} points, exceeding the cap {cap}"
        if detail:
            msg += f" ({detail})"
        super().__init__(msg)


class OutOfRange(CalkellyError):
    """A raw signal or return fell outside the declared bounds."""


class IndexOutOfRange(CalkellyError):
    """A grid index does not exist in the referenced grid."""


class Infeasible(CalkellyError):
    """The halfspace game has no strategy meeting the anchor bound.

    Theorem-level feasibility is guaranteed, so this signals a logic error.
    """


class NonConvergence(CalkellyError):
    """An iterative solver exhausted its budget before meeting tolerance."""

    def __init__(self, residual: float, budget: int):
        self.residual = residual
        self.budget = budget
        super().__init__(
            f"solver stopped after {budget} iterations with residual {residual:.3e}"
        )


class ProtocolViolation(CalkellyError):
    """Forecast/outcome calls arrived out of the strict game order."""


class EmptyHistory(CalkellyError):
    """An operation that needs at least one observed round got none."""


class Unsupported(CalkellyError):
    """Requested configuration is outside this implementation's scope."""


class QuadratureUnstable(CalkellyError):
    """Mixture quadrature produced non-finite weights."""


class MarketContractViolation(CalkellyError):
    """A market emitted a signal or return outside its declared bounds."""


class ParseError(CalkellyError):
    """Malformed input file; carries row/column context in the message."""


class RangeError(CalkellyError):
    """CSV returns outside [lambda1, lambda2]; offending rows are listed."""


class ConfigError(CalkellyError):
    """Experiment configuration failed schema validation."""
