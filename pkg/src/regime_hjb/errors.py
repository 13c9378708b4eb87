"""Exception types shared across the solver and the simulator."""


class ParamError(ValueError):
    """A model parameter violates its positivity/sign constraint."""


class NonPositiveLambda(ParamError):
    pass


class DomainError(ValueError):
    pass


class NoConvergence(RuntimeError):
    """Iteration budget exhausted. ``report`` carries the last state when available."""

    def __init__(self, msg, report=None, fields=None):
        super().__init__(msg)
        self.report = report
        self.fields = fields


class PositiveRoot(RuntimeError):
    pass


class SingularMatrix(RuntimeError):
    pass


class BracketViolation(RuntimeError):
    def __init__(self, msg, report=None, fields=None):
        super().__init__(msg)
        self.report = report
        self.fields = fields


class PolicyBlowUp(RuntimeError):
    pass
