"""Exception types shared across the package."""

import numpy as np


class InvalidArgumentError(ValueError):
    pass


class SingularMatrixError(np.linalg.LinAlgError):
    pass


class PartitionPremiseError(ValueError):
    """Raised when the leading primary-path block is not (numerically) zero."""

    def __init__(self, norm, tol):
        self.norm = float(norm)
        self.tol = float(tol)
        super().__init__(
            f"partition premise violated: ||p_0k|| = {self.norm:.3e} exceeds tolerance {self.tol:.3e}"
        )


class DivergenceError(RuntimeError):
    pass


class TrainingDivergedError(RuntimeError):
    pass
