"""Exception hierarchy shared by all modules."""


class ScaleFreeError(Exception):
    """Base class for every error raised by this package."""


class DimensionError(ScaleFreeError, ValueError):
    """Matrix or vector shapes do not fit together."""


class GraphError(ScaleFreeError, ValueError):
    """Invalid graph data (self-loop, negative weight, bad index...)."""


class EigenvalueError(ScaleFreeError, ArithmeticError):
    """The eigenvalue routine failed to converge."""


class SynthesisError(ScaleFreeError):
    """Gain or compensator design failed."""


class ConvergenceError(SynthesisError):
    """An iterative design routine did not converge."""


class UnsupportedClassError(SynthesisError):
    """Agent lies outside the class the pre-compensator construction covers."""


class StructuralError(ScaleFreeError):
    """A graph condition required by a theorem is violated."""


class DivergedError(ScaleFreeError, ArithmeticError):
    """A simulated state exceeded the divergence guard."""


class ConsistencyError(ScaleFreeError, AssertionError):
    """Two routes that must agree numerically did not."""


class ConfigError(ScaleFreeError, ValueError):
    """Malformed experiment configuration."""
