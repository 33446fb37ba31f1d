"""Exception types shared across the package."""


class ValidationError(ValueError):
    """Input violates a documented precondition."""


class ShapeError(ValidationError):
    """Operands have incompatible shapes."""


class ParseError(ValidationError):
    """A corpus line could not be parsed."""


class FormatError(ValidationError):
    """A file (embeddings, checkpoint) is malformed."""


class DegenerateMaskError(ValidationError):
    """Every position of an attention mask is disabled."""


class TrainingError(RuntimeError):
    """Optimization aborted, e.g. on a non-finite gradient."""
