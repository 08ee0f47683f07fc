"""Exception hierarchy shared across the package."""


class SchurSortError(Exception):
    """Base class for all package errors."""


class ParameterError(SchurSortError, ValueError):
    """An argument or configuration value is out of its valid range."""


class InputError(SchurSortError, ValueError):
    """Structured input (order, dataset, graph file) violates its contract."""


class GenerationError(SchurSortError):
    """Sampling produced non-finite values.

    Carries the index of the first offending node so mechanism overflow
    (e.g. the cubic post-nonlinearity) can be reported precisely.
    """

    def __init__(self, node: int, message: str | None = None):
        self.node = node
        super().__init__(message or f"non-finite samples generated at node {node}")


class UnsupportedMechanismError(SchurSortError):
    """The requested analytic derivative/log-density path does not exist."""


class CapabilityError(SchurSortError):
    """A Hessian provider lacks the capability required by the operation."""


class BuildError(SchurSortError):
    """Information-matrix accumulation failed (non-finite contribution).

    ``sample_index`` is the first offending sample, when known.
    """

    def __init__(self, message: str, sample_index: int | None = None):
        self.sample_index = sample_index
        super().__init__(message)


class EliminationError(SchurSortError):
    """A block inversion inside Schur elimination failed."""


class TrainingError(SchurSortError):
    """Score-model training diverged; ``epoch`` is where it happened."""

    def __init__(self, epoch: int, message: str | None = None):
        self.epoch = epoch
        super().__init__(message or f"training diverged at epoch {epoch}")


class CriterionError(SchurSortError):
    """A leaf-selection criterion is undefined for some node."""


class SolverError(SchurSortError):
    """An iterative solver failed to converge; message names the node."""


class UndefinedMetricError(SchurSortError):
    """A metric has no defined value for the given inputs."""
