"""Exception hierarchy and CLI exit statuses."""


class RefactorError(Exception):
    exit_code = 1


class GraphFormatError(RefactorError, ValueError):
    """Malformed triple or feature input; messages carry the line or label."""
    exit_code = 2


class VocabularyError(RefactorError, ValueError):
    exit_code = 2


class ConfigError(RefactorError, ValueError):
    exit_code = 2


class NumericalError(RefactorError, ArithmeticError):
    exit_code = 3


class ArtifactError(RefactorError, OSError):
    exit_code = 2
