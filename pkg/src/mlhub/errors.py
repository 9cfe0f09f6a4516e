"""Exception taxonomy shared across the package.

Every error raised by library code derives from :class:`MlhubError` so
callers (and the CLI) can map failure classes to exit codes without
string matching.
"""

from __future__ import annotations


class MlhubError(Exception):
    """Base class for all library errors."""


# --- semantic DAG construction and matching ---


class DuplicateNodeId(MlhubError):
    """Two node definitions share the same id."""


class DanglingSuccessor(MlhubError):
    """A node lists a successor id that no node defines."""


class CycleDetected(MlhubError):
    """The directed graph is not acyclic; message names a cycle path."""


class ProviderFailure(MlhubError):
    """An external embedding provider raised or returned garbage."""


# --- model labelling ---


class EmptyTrace(MlhubError):
    """A logit trace has no nodes, or a listed node has no samples."""


class NonFiniteLogit(MlhubError):
    """A trace contains NaN or infinite logit entries."""


class MissingMeans(MlhubError):
    """No per-node mean logits are available to aggregate."""


class VersionRegression(MlhubError):
    """A label update targets an older graph version than the label's."""


# --- head-combination optimisation ---


class MissingNodeScore(MlhubError):
    """A label lacks a score vector for a requested target node."""


class DegenerateLabel(MlhubError):
    """A label carries non-finite score entries."""


class ShapeMismatch(MlhubError):
    """Matrix operands disagree on head or class dimensions."""


class SingleClassTask(MlhubError):
    """The discriminative objective needs at least two classes."""


# --- selection ---


class LabelVersionMismatch(MlhubError):
    """A label was built against a different graph version than the match."""


# --- reuse / prediction ---


class MissingModelOutput(MlhubError):
    """An ensemble member has no output for the current sample."""


class NoCoveredClasses(MlhubError):
    """Prediction requested but the selection covers no class at all."""


class PartitionMismatch(MlhubError):
    """Expert/generalist class split disagrees with the selection coverage."""


# --- synthetic worlds ---


class UnknownClass(MlhubError):
    """A requested class id does not exist in the synthetic world."""


class InstanceTooLarge(MlhubError):
    """Exhaustive grid search was asked for an intractable instance."""


# --- persistence ---


class StoreError(MlhubError):
    """Base class for artifact file problems."""


class FormatVersionUnsupported(StoreError):
    """The file declares a format version newer than this code supports."""


class SchemaViolation(StoreError):
    """A field is missing, of the wrong type, or out of its domain."""


class TruncatedFile(StoreError):
    """The file ends mid-record."""
