"""Exception hierarchy shared across the package."""


class RebalanceError(Exception):
    """Base class for every error raised by this package."""


class AnnotationParseError(RebalanceError, ValueError):
    """Malformed annotation input. ``where`` locates the offending field or line."""

    def __init__(self, message, where=None):
        self.where = where
        super().__init__(f"{where}: {message}" if where else message)


class AnnotationValidationError(RebalanceError, ValueError):
    def __init__(self, message, issues=()):
        self.issues = list(issues)
        super().__init__(message)


class EmptyDatasetError(RebalanceError, ValueError):
    pass


class FactorDomainError(RebalanceError, ValueError):
    pass


class FactorOverflowError(RebalanceError, OverflowError):
    def __init__(self, message, category=None):
        self.category = category
        super().__init__(message)


class InsufficientDataError(RebalanceError, ValueError):
    pass


class DiagnosticError(RebalanceError, ValueError):
    def __init__(self, message, points=()):
        self.points = list(points)
        super().__init__(message)


class GenerationError(RebalanceError, ValueError):
    pass


class ManifestFormatError(RebalanceError, ValueError):
    pass
