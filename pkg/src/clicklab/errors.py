"""Exception types raised across clicklab."""


class ClickLabError(Exception):
    pass


class InvalidInputError(ClickLabError, ValueError):
    pass


class EnumerationCapError(ClickLabError):
    """Raised when an exact computation would enumerate too many rankings."""


class ParseError(ClickLabError, ValueError):
    def __init__(self, message, line_number=None):
        if line_number is not None:
            message = f"line {line_number}: {message}"
        super().__init__(message)
        self.line_number = line_number


class SupportViolationError(ClickLabError):
    """A clicked or clickable document has zero logging propensity."""


class DegenerateTrainingError(ClickLabError):
    pass


class InfeasiblePlanError(ClickLabError):
    pass
