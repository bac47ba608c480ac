
class SentinelInferError(Exception):
    """
    Base class of every exception raised by ``sentinelinfer``.
    """
    def __init__(self, message: str):
        super().__init__(message)
        self.message = message


class DomainError(SentinelInferError, ValueError):
    """
    Exception raised when an argument lies outside the domain of an operation.

    Examples are auditing rates outside (0, 1), negative payments, or arrays of
    mismatched lengths.
    """
    pass


class FamilyError(DomainError):
    """
    Exception raised when an operation requires a specific effort-model family.

    The closed-form designs only hold for linear correction, quadratic cost and
    (for some of them) identity utility.
    """
    def __init__(self, operation: str, requirement: str):
        super().__init__(f"{operation} requires {requirement}!")


class ConfigError(DomainError):
    """
    Exception raised when an experiment configuration is invalid.
    """
    pass


class NumericError(SentinelInferError):
    """
    Exception raised when a function evaluation returns a non-finite value.
    """
    pass


class InfeasibleError(SentinelInferError):
    """
    Exception raised when no payment or design can achieve the requested goal.
    """
    pass


class InfeasibleBudgetError(InfeasibleError):
    """
    Exception raised when the budget leaves nothing for sampling.

    Under the aggregate cost mode this happens whenever ``B <= rho * k``.
    """
    def __init__(self, budget: float, reserved: float):
        super().__init__(
            f"Budget {budget} does not exceed the fixed sentinel cost {reserved}!"
        )


class InfiniteObjectiveError(SentinelInferError):
    """
    Exception raised when the variance objective is infinite.

    This happens when an instance with positive prediction error has zero
    sampling probability or zero correction probability.
    """
    def __init__(self, index: int):
        super().__init__(
            f"Instance at position {index} has positive prediction error but zero pi * q(e)!"
        )


class DataError(SentinelInferError):
    """
    Exception raised when a dataset violates its invariants or lacks a column.
    """
    pass


class ParseError(DataError):
    """
    Exception raised when a row of an input file cannot be parsed.

    The ``line`` attribute holds the 1-based line number in the file, counting
    the header as line 1.
    """
    def __init__(self, line: int, reason: str):
        super().__init__(f"Line {line}: {reason}")
        self.line = line


class DegeneracyError(SentinelInferError):
    """
    Exception raised when an estimator is undefined at the given inputs.

    Examples are vanishing ``pi * q(e)`` products, a singular Hessian, or a
    probability estimate sitting at 0 or 1.
    """
    pass


class OptimizationError(SentinelInferError):
    """
    Exception raised when an iterative solver fails to converge.
    """
    def __init__(self, solver: str, iterations: int, residual: float):
        super().__init__(
            f"{solver} did not converge in {iterations} iterations (residual {residual:.3e})!"
        )
        self.iterations = iterations
        self.residual = residual


class ExtrapolationError(SentinelInferError):
    """
    Exception raised when a target width is not bracketed by a width curve.
    """
    def __init__(self, method: str, target: float, lowest: float, highest: float):
        super().__init__(
            f"Target width {target} lies outside [{lowest}, {highest}] for method '{method}'!"
        )


class DuplicatedKeyError(SentinelInferError):
    """
    Exception raised when an axis of a result grid has duplicate labels.
    """
    def __init__(self):
        super().__init__("Duplicated keys!")


class WrongArrayDimensionException(SentinelInferError):
    """
    Exception raised when a key or an array has the wrong number of dimensions.
    """
    def __init__(self, expected_dimension: int, given_dimensions: int):
        super().__init__(
            f"Expected dimension: {expected_dimension}, but {given_dimensions} dimensions are given!"
        )


class WrongArrayShapeException(SentinelInferError):
    """
    Exception raised when an array does not match the shape of a result grid.
    """
    def __init__(self, expected_shape: tuple[int, ...], given_shape: tuple[int, ...]):
        super().__init__(
            f"Expected shape: {', '.join(str(dim_len) for dim_len in expected_shape)}, "
            f"but the given array shape is {', '.join(str(dim_len) for dim_len in given_shape)}!"
        )
