"""
Exception hierarchy for the detection pipeline
"""


class TrojaTensorError(Exception):
    """Base class for every error raised by the pipeline"""


class ConvergenceWarning(UserWarning):
    """An iterative solver stopped at max_iter; the best iterate is returned"""


# Ingest

class MissingFile(TrojaTensorError, FileNotFoundError):
    """A manifest or activation file does not exist"""

    def __init__(self, path):
        self.path = str(path)
        super().__init__(f"file not found: {self.path}")

    def __str__(self):
        return f"file not found: {self.path}"


class SchemaViolation(TrojaTensorError, ValueError):
    """A manifest or ATF file does not follow its schema"""

    def __init__(self, field: str, detail: str = ""):
        self.field = field
        message = f"schema violation in '{field}'"
        if detail:
            message += f": {detail}"
        super().__init__(message)


class DuplicateModelId(TrojaTensorError, ValueError):
    """Two manifest entries share an id"""


class InconsistentShape(TrojaTensorError, ValueError):
    """Activation files of one zoo disagree on M or C"""


class BadMagic(TrojaTensorError, ValueError):
    """A file does not start with the ATF magic bytes"""


class TruncatedFile(TrojaTensorError, ValueError):
    """An ATF file ends before its declared payload"""


class NonFiniteValue(TrojaTensorError, ValueError):
    """An activation tensor contains NaN or Inf"""


class ShapeMismatch(TrojaTensorError, ValueError):
    """Array shapes do not agree with what the operation expects"""


class IoFailure(TrojaTensorError, OSError):
    """Writing a file failed"""


# Decomposition

class PreconditionViolation(TrojaTensorError, ValueError):
    """Inputs violate an operation precondition"""


class OrderExceedsRank(TrojaTensorError, ValueError):
    """Requested model order is larger than the numerical rank"""


class SingularDemixing(TrojaTensorError, ArithmeticError):
    """A demixing matrix became numerically singular"""


class IndexOutOfRange(TrojaTensorError, IndexError):
    """A 1-based component index is outside 1..N"""


class RankTooLarge(TrojaTensorError, ValueError):
    """Decomposition rank exceeds min(MC, R)"""


class DegenerateSlice(TrojaTensorError, ValueError):
    """A feature matrix has zero Frobenius norm"""


# Statistics and detection

class ZeroVariance(TrojaTensorError, ValueError):
    """A source vector is constant"""

    def __init__(self, model_id: str):
        self.model_id = model_id
        super().__init__(f"source vector of model '{model_id}' has zero variance")


class NoBackdoorReference(TrojaTensorError, ValueError):
    """No training model is labelled backdoor"""


class EmptyEvaluation(TrojaTensorError, ValueError):
    """No labelled model to evaluate"""


class SingleClassOnly(TrojaTensorError, ValueError):
    """ROC-AUC needs both classes among the ground-truth labels"""


# Clustering

class RankTooSmall(TrojaTensorError, ValueError):
    """Fewer than two components are available for 2-D contributions"""


class DegenerateInput(TrojaTensorError, ValueError):
    """All points to cluster are identical"""


class SingleCluster(TrojaTensorError, ValueError):
    """Silhouette needs two clusters"""


# Synthetic zoo

class SpecViolation(TrojaTensorError, ValueError):
    """Synthetic zoo parameters are out of range"""
