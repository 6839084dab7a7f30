class NumericalError(Exception):
    """Base class for failures of the numerics rather than of the inputs."""


class QuadratureError(NumericalError):
    pass


class DegenerateSeriesError(NumericalError):
    pass


class IllConditionedError(NumericalError):
    def __init__(self, message, condition_number=None):
        super().__init__(message)
        self.condition_number = condition_number


class DivergenceError(NumericalError):
    """Raised when training blows up.

    `trace` holds the partial `TrainTrace` recorded before the abort when the
    failure happened inside `run_two_phase`.
    """
    def __init__(self, message, trace=None):
        super().__init__(message)
        self.trace = trace


class IntegralDivergenceError(DivergenceError):
    """An improper integral does not converge on the quadrature range.

    Never carries a trace.
    """


class TheoryViolationError(NumericalError):
    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}
