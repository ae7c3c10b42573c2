"""
Exceptions raised by the flex package
Everything derives from FlexError so the CLI can catch one thing
"""


class FlexError(Exception):
    """Base class for all flex errors"""


class ConfigError(FlexError):
    """Invalid configuration value or file"""


class ShapeError(FlexError):
    """Operand shapes don't conform for an op"""

    def __init__(self, op: str, dims):
        self.op = op
        self.dims = dims
        super().__init__(f"shape mismatch in {op}: {dims}")


class NonFiniteError(FlexError):
    """An op produced NaN or Inf"""

    def __init__(self, op: str):
        self.op = op
        super().__init__(f"non-finite value produced by {op}")


class NotScalarError(FlexError):
    """backward() was called on a non-scalar node"""


class LogicRangeError(FlexError):
    """A truth value left [0, 1] by more than round-off"""


class TripleFormatError(FlexError):
    """Malformed line in a triple file"""

    def __init__(self, path, line_no: int, message: str):
        self.path = path
        self.line_no = line_no
        super().__init__(f"{path}:{line_no}: {message}")


class VocabularyError(FlexError):
    """Unknown name or id, or vocabularies that don't match"""


class QuerySyntaxError(FlexError):
    """Query DSL text doesn't follow the grammar"""

    def __init__(self, message: str, offset: int):
        self.offset = offset
        super().__init__(f"{message} at offset {offset}")


class UnsupportedQueryError(FlexError):
    """Query outside the supported fragment (Not at root, Or under Not, ...)"""


class DnfLimitError(FlexError):
    """DNF expansion produced too many disjuncts"""


class CheckpointError(FlexError):
    """Checkpoint can't be read or doesn't match the data"""


class TrainingError(FlexError):
    """Training can't start or continue"""


class GenerationError(FlexError):
    """Synthetic dataset generation failed"""
