class ProfvecError(Exception):
    """Base class for every error raised on purpose by this package."""


class ParseError(ProfvecError):
    def __init__(self, message, path=None, lineno=None):
        self.path = path
        self.lineno = lineno
        where = ""
        if path is not None:
            where += f"{path}"
        if lineno is not None:
            where += f":{lineno}" if where else f"line {lineno}"
        super().__init__(f"{where}: {message}" if where else message)


class ValidationError(ProfvecError):
    pass


class VocabularyError(ProfvecError):
    pass


class OOVError(ProfvecError, KeyError):
    def __init__(self, token):
        self.token = token
        super().__init__(f"token not in vocabulary: {token!r}")

    def __str__(self):
        return self.args[0]


class TrainingError(ProfvecError):
    pass


class DegenerateLabelsError(ProfvecError):
    def __init__(self, message="degenerate training labels"):
        super().__init__(message)


class DimensionError(ProfvecError):
    pass


class LeakageError(ProfvecError):
    pass
