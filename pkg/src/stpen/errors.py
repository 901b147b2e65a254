"""Exception types shared across the package.

The CLI maps EngineError to exit status 1 and UsageError to status 2;
everything else is a bug.
"""


class EngineError(Exception):
    """Base class for all recoverable runtime failures."""


class UsageError(EngineError):
    """Bad invocation: missing paths, unknown config keys, invalid flags."""


class ShapeError(EngineError):
    """Tensor shapes incompatible with the requested operation."""


class InvalidArgument(EngineError):
    """Argument outside the operation's documented domain."""


class BoxError(EngineError):
    """Degenerate or out-of-range bounding box."""


class LabelError(EngineError):
    """Classification target outside {0, 1}."""


class NonFiniteError(EngineError):
    """NaN or Inf encountered where finite values are required."""


class ParseError(EngineError):
    """Malformed annotation file; message carries the location."""


class ValidationError(EngineError):
    """Parsed value violates a field constraint (e.g. coordinate range)."""


class VocabError(EngineError):
    """Unknown behavior id or name."""


class UnsupportedShapeError(EngineError):
    """Annotation region is not a rectangle."""


class SplitSizeError(EngineError):
    """Too few keyframes to form a 7:2:1 split."""


class WindowError(EngineError):
    """Frame store too short for the requested clip window."""


class SpecError(EngineError):
    """Synthetic clip spec cannot be realized (actor does not fit)."""


class ConsistencyError(EngineError):
    """Parameter/gradient bookkeeping mismatch; message names the path."""


class CheckpointError(EngineError):
    """Base class for checkpoint load failures."""


class CheckpointVersionError(CheckpointError):
    """Checkpoint format version not supported."""


class CheckpointTruncatedError(CheckpointError):
    """Checkpoint file shorter than its header promises."""


class CheckpointDigestError(CheckpointError):
    """Checkpoint payload does not match its integrity digest."""


class UndefinedClassError(EngineError):
    """Average precision requested for a class with no positives."""


class EmptyEvalError(EngineError):
    """No class has ground-truth positives; nothing to evaluate."""


class DuplicateConfigError(EngineError):
    """Two ablation runs share the same module on/off combination."""
