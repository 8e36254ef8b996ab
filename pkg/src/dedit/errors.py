"""Exception hierarchy shared by every dedit module."""


class DeditError(Exception):
    """Base class for all errors raised by this package."""


class DimensionError(DeditError):
    """Operand shapes are incompatible."""


class ConfigError(DeditError):
    """A configuration value is out of its legal range."""


class ContractError(DeditError):
    """A caller violated an operation's precondition."""


class DivergenceError(DeditError):
    """A numeric value became NaN or infinite."""


class EvaluationError(DeditError):
    """A user-supplied function produced an unusable value."""


class ScheduleError(DeditError):
    """A noise-schedule value makes the requested step impossible."""


class StateError(DeditError):
    """The object is not in the right lifecycle state for this call."""


class OrderingError(StateError):
    """A multi-stage operation was invoked out of order."""


class VocabularyError(DeditError):
    """A token id or word is not part of the vocabulary."""


class InjectionError(DeditError):
    """Token injection failed (collision or repeated injection)."""


class AssignmentError(DeditError):
    """A patch/pixel assignment references an invalid item."""


class EmptyPromptError(DeditError):
    """An item has no prompt tokens to attend to."""


class IntegrityError(DeditError):
    """A segmentation map violates the exact-partition invariant."""


class EditError(DeditError):
    """A mask or item edit cannot be applied."""


class MetricError(DeditError):
    """A region metric is undefined for the given inputs."""


class GenerationError(DeditError):
    """The synthetic scene generator could not satisfy its spec."""


class CorruptionError(DeditError):
    """A stored artifact failed its integrity check."""


class VersionError(DeditError):
    """A stored artifact has an unsupported format version."""


class NotFoundError(DeditError):
    """A referenced entity does not exist."""
