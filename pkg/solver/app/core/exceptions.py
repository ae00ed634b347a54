"""
Failure types shared by the solvers.
"""


class NumericalFailure(ArithmeticError):
    """Non-finite iterate or objective, or a violated step-size margin."""

    def __init__(self, message: str, iteration: int | None = None):
        self.iteration = iteration
        if iteration is not None:
            message = f"iteration {iteration}: {message}"
        super().__init__(message)
