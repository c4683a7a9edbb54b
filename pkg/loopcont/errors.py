"""Exception hierarchy shared by every loopcont module."""

from typing import Optional


class LoopContError(Exception):
    """Base class for all toolkit errors"""


class GridError(LoopContError, ValueError):
    """Invalid grid description"""


class WeightExprError(LoopContError, ValueError):
    """Weight expression failed to parse"""

    def __init__(self, message: str, position: int):
        super().__init__(f"{message} (at position {position})")
        self.position = position


class WeightDomainError(LoopContError, ValueError):
    """Weight expression cannot be evaluated at a node"""

    def __init__(self, message: str, node: int):
        super().__init__(f"{message} (node {node})")
        self.node = node


class StructuralHypothesisError(LoopContError):
    """A standing sign hypothesis on the weights is violated"""


class GuardViolationError(LoopContError, ValueError):
    """State left the admissible region s > -eps/2"""


class EigenSolveError(LoopContError):
    """Eigensolver did not converge or returned unusable pairs"""


class NoPositivePrincipalEigenvalueError(EigenSolveError):
    """No eigenvalue of the requested sign has a positive eigenvector"""


class SingularJacobianError(LoopContError):
    """Newton matrix could not be factorized"""

    def __init__(self, message: str, lam: Optional[float] = None):
        if lam is not None:
            message = f"{message} at lambda={lam:.6g}"
        super().__init__(message)
        self.lam = lam


class OrderingError(LoopContError, ValueError):
    """Sub- and supersolution are not ordered"""


class SubSupError(LoopContError):
    """Sub/supersolution inequality fails at a node"""


class ConvergenceError(LoopContError):
    """An iteration that must return a solution ran out of iterations"""


class BoundsError(LoopContError):
    """A priori constant could not be computed"""


class FloorError(BoundsError):
    """Small-solution floor threshold is unreachable"""


class ConfigError(LoopContError, ValueError):
    """Invalid run configuration"""

    def __init__(self, message: str, key: Optional[str] = None,
                 section: Optional[str] = None, line: Optional[int] = None):
        super().__init__(message)
        self.key = key
        self.section = section
        self.line = line


class FitError(LoopContError):
    """Too few branch points for a regression, or a branch from the wrong end"""
