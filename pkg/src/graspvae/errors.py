"""Exception hierarchy. Each class carries the CLI exit code it maps to."""


class GraspVAEError(Exception):
    exit_code = 1
    kind = "error"


class UsageError(GraspVAEError):
    exit_code = 2
    kind = "usage-error"


class PathError(GraspVAEError):
    exit_code = 3
    kind = "path-error"


class FormatError(GraspVAEError):
    exit_code = 4
    kind = "format-error"

    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class ValidationError(GraspVAEError):
    exit_code = 5
    kind = "validation-error"


class DegenerateDatasetError(ValidationError):
    kind = "degenerate-dataset"

    def __init__(self, message, dimension=None):
        super().__init__(message)
        self.dimension = dimension


class DegenerateOrientationError(ValidationError):
    kind = "degenerate-orientation"


class ShapeError(ValidationError):
    kind = "shape-error"


class NumericError(GraspVAEError):
    exit_code = 6
    kind = "numeric-error"


class NonFiniteError(NumericError):
    kind = "non-finite"


class UndefinedCorrelationError(NumericError):
    kind = "undefined-correlation"
