"""Exception types raised by the simulation engines and the parser."""


class HybridSimError(Exception):
    """Base class for all errors raised by hybridsim."""


class NetworkSyntaxError(HybridSimError):
    def __init__(self, message: str, line: int, column: int):
        super().__init__(f"line {line}, column {column}: {message}")
        self.line = line
        self.column = column


class NetworkValidationError(HybridSimError):
    pass


class ImpossibleEventError(HybridSimError):
    """A fired event would drive a discrete count negative (scheduler bug)."""


class IntensityBoundExceeded(HybridSimError):
    """Total jump propensity exceeded the reference intensity."""

    def __init__(self, state, total: float, lambda_max: float):
        super().__init__(
            f"intensity bound exceeded: total jump propensity {total:.6g} > lambda_max {lambda_max:.6g}"
        )
        self.state = state
        self.total = total
        self.lambda_max = lambda_max


class StateSpaceError(HybridSimError):
    """Truncated state space too large, or too much probability leaked past the cap."""


class BatchFailure(HybridSimError):
    def __init__(self, message: str, failures):
        super().__init__(message)
        self.failures = failures
