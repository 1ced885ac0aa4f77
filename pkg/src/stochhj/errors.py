"""Exception hierarchy shared by every stochhj module."""


class StochHJError(Exception):
    """Base class for all numerical and input errors raised by the toolkit."""


class DimensionError(StochHJError, ValueError):
    pass


class EvaluationError(StochHJError, ArithmeticError):
    """A field could not be evaluated (domain error or non-finite result)."""


class LexError(StochHJError, ValueError):
    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} at offset {offset}")
        self.offset = offset


class ParseError(StochHJError, ValueError):
    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} at offset {offset}")
        self.offset = offset


class BindError(StochHJError, NameError):
    def __init__(self, name: str, space: str):
        super().__init__(f"variable {name!r} is not bound in the {space} variable space")
        self.name = name


class StepDivergence(StochHJError, RuntimeError):
    """The implicit midpoint solve did not converge; try a smaller time step."""

    def __init__(self, message: str, node: int | None = None):
        if node is not None:
            message = f"{message} (step {node})"
        super().__init__(message)
        self.node = node


class StateError(StochHJError, RuntimeError):
    pass


class TruncationMismatch(StochHJError, RuntimeError):
    """A finite-difference probe hit the stopping time before the requested node."""


class PdeError(StochHJError, RuntimeError):
    pass


class TransformError(StochHJError, RuntimeError):
    pass


class ReliabilityWarning(UserWarning):
    """Too many Monte Carlo paths were truncated for the estimate to be trusted."""
