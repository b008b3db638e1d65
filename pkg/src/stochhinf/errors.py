"""Exception hierarchy shared by the solvers, the learner and the CLI."""


class StochHinfError(Exception):
    """Base class for every error raised by this package."""


class DimensionError(StochHinfError, ValueError):
    pass


class ModelError(StochHinfError, ValueError):
    pass


class NumericalError(StochHinfError):
    """Base class for failures the CLI maps to exit code 3."""


class SingularOperator(NumericalError):
    def __init__(self, smallest_singular_value: float, largest_singular_value: float):
        self.smallest_singular_value = smallest_singular_value
        self.largest_singular_value = largest_singular_value
        super().__init__(
            f"generalized Lyapunov operator is singular: smallest singular value "
            f"{smallest_singular_value:.3e} (largest {largest_singular_value:.3e})"
        )


class StepUnstable(NumericalError):
    def __init__(self, iteration: int, max_real_part: float):
        self.iteration = iteration
        self.max_real_part = max_real_part
        super().__init__(
            f"closed-loop pencil at iteration {iteration} is not mean-square stable "
            f"(max Re eigenvalue {max_real_part:.6g}); re-initialize with a stabilizing "
            f"P0 or gains"
        )


class NonConvergence(NumericalError):
    def __init__(self, iterations: int, residual: float, hint: str = ""):
        self.iterations = iterations
        self.residual = residual
        msg = f"no convergence after {iterations} iterations (residual {residual:.3e})"
        if hint:
            msg += f"; {hint}"
        super().__init__(msg)


class PathDiverged(NumericalError):
    def __init__(self, path: int, step: int):
        self.path = path
        self.step = step
        super().__init__(f"sample path {path} produced a non-finite state at step {step}")


class AlignmentError(StochHinfError, ValueError):
    pass


class RankDeficient(NumericalError):
    def __init__(self, rank: int, required: int, detail: str = ""):
        self.rank = rank
        self.required = required
        msg = (
            f"data matrix has rank {rank}, {required} required; collect more intervals, "
            f"add sample paths or increase the exploration amplitude"
        )
        if detail:
            msg += f" ({detail})"
        super().__init__(msg)


class BlockSingular(NumericalError):
    def __init__(self, block: str, cond: float):
        self.block = block
        self.cond = cond
        super().__init__(
            f"perturbed block {block} is numerically singular (condition {cond:.3e}); "
            f"the injected evaluation error is too large"
        )


class NonFiniteIterate(NumericalError):
    def __init__(self, iteration: int, trace=None):
        self.iteration = iteration
        self.trace = trace
        super().__init__(f"learning produced a non-finite iterate at iteration {iteration}")


class ConfigError(StochHinfError, ValueError):
    def __init__(self, field: str, message: str):
        self.field = field
        super().__init__(f"{field}: {message}")
