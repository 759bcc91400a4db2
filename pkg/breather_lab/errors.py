"""
Breather Lab Errors
===================

Exception hierarchy shared by all modules. Every error carries the
process exit code the experiment driver reports for it.
"""


class BreatherLabError(Exception):
    exit_code = 1


class ConfigInvalid(BreatherLabError):
    """Experiment configuration fails validation before dispatch."""
    exit_code = 2

    def __init__(self, violations):
        if isinstance(violations, str):
            violations = [violations]
        self.violations = list(violations)
        super().__init__("; ".join(self.violations))


# ------------------------------------------------------------------
# Solver failures (exit code 3)
# ------------------------------------------------------------------

class SolverError(BreatherLabError):
    exit_code = 3


class NonConvergence(SolverError):
    def __init__(self, message: str, iterations: int = 0, residual: float = float("nan")):
        self.iterations = iterations
        self.residual = residual
        super().__init__(message)


class SingularJacobian(SolverError):
    pass


class InvalidFrequency(SolverError):
    pass


class EigenSolverFailure(SolverError):
    pass


class MatchAmbiguity(SolverError):
    pass


# ------------------------------------------------------------------
# Size caps (exit code 4)
# ------------------------------------------------------------------

class CapExceeded(BreatherLabError):
    exit_code = 4


class DimensionOverflow(CapExceeded):
    pass


class DegreeOverflow(CapExceeded):
    pass


class OrderOverflow(CapExceeded):
    pass
