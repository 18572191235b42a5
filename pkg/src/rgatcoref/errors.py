"""Exception hierarchy.

Everything raised on bad input derives from :class:`ValidationError` (CLI exit
code 1); failures during numerical work derive from :class:`TrainingError`
(CLI exit code 2).
"""


class RgatError(Exception):
    pass


class ValidationError(RgatError, ValueError):
    pass


class DimensionError(ValidationError):
    pass


class ParseError(ValidationError):
    pass


class StructureError(ValidationError):
    pass


class FormatError(ValidationError):
    pass


class ConsistencyError(ValidationError):
    pass


class DuplicationError(ValidationError):
    pass


class AlignmentError(ValidationError):
    pass


class CoverageError(ValidationError):
    pass


class LabelError(ValidationError):
    pass


class ConfigError(ValidationError):
    pass


class UsageError(ValidationError):
    pass


class BatchError(ValidationError):
    pass


class MissingEmbeddingError(ValidationError, KeyError):
    def __str__(self):
        return str(self.args[0]) if self.args else ""


class TrainingError(RgatError, RuntimeError):
    pass


class NumericalError(TrainingError, FloatingPointError):
    """A non-finite value appeared in a forward result or gradient."""
