"""Exception types shared across the package.

Each error carries the exit code the command line maps it to
(2 precondition, 3 numerical non-convergence, 4 IO/config).
"""


class RenormError(Exception):
    exit_code = 1


class PreconditionError(RenormError):
    exit_code = 2


class ConvergenceError(RenormError):
    exit_code = 3


class ConfigError(RenormError):
    exit_code = 4


class ExactResonance(PreconditionError):
    def __init__(self, k, divisor=0.0):
        self.k = tuple(int(v) for v in k)
        self.divisor = float(divisor)
        super().__init__(f"exact resonance at k={self.k} (|k.omega|={self.divisor:.3e})")


class NotUnimodular(PreconditionError):
    pass


class ReductionFailure(ConvergenceError):
    pass


class ScheduleInfeasible(PreconditionError):
    pass


class EmptyCone(RenormError):
    pass


class AliasingBudgetExceeded(ConvergenceError):
    pass


class InsufficientModes(PreconditionError):
    pass


class PreconditionViolated(PreconditionError):
    def __init__(self, msg, step=None):
        self.step = step
        super().__init__(msg)


class NotRenormalizable(PreconditionError):
    def __init__(self, msg, step=None):
        self.step = step
        super().__init__(msg)


class NoConvergence(ConvergenceError):
    def __init__(self, iters, residual, what="iteration"):
        self.iters = iters
        self.residual = residual
        super().__init__(f"{what} did not converge after {iters} iterations (residual {residual:.3e})")


class NeumannDivergence(ConvergenceError):
    pass


class SingularJacobian(ConvergenceError):
    pass


class SmallDivisorFloor(PreconditionError):
    pass
