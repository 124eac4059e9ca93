class QuestionatorError(Exception):
    """Base class of the errors raised by questionator.

    Messages are kept on a single line so that the command line front end can
    report them as a one line diagnostic."""

    def __init__(self, message):
        self.message = message
        super().__init__(self.message)

    def __str__(self):
        return self.message


class ContractError(QuestionatorError):
    """A precondition of an operation was violated."""


class NumericDomainError(QuestionatorError):
    """A computation produced or consumed a non-finite value."""

    def __init__(self, message, index=None):
        self.index = index
        super().__init__(message)


class ParseError(QuestionatorError):
    """A line of an input file could not be parsed."""

    def __init__(self, path, line, reason):
        self.path = path
        self.line = line
        super().__init__(f"{path}:{line}: {reason}")


class ConfigError(QuestionatorError):
    """A configuration file does not match the configuration schema."""

    def __init__(self, path, field, reason):
        self.path = path
        self.field = field
        super().__init__(f"{path}: field '{field}': {reason}")


class UndefinedMetricError(QuestionatorError):
    """A metric was requested on input for which it is not defined."""
