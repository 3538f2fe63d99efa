"""Exception hierarchy. ``exit_code`` is what the CLI returns for each."""


class KinjectError(Exception):
    exit_code = 2


class DataError(KinjectError):
    """Bad or missing input data."""


class FormatError(DataError):
    """A binary or JSON file does not match its documented layout."""


class MalformedLineError(DataError):
    def __init__(self, path, lineno, reason):
        super().__init__(f"{path}:{lineno}: {reason}")
        self.path = path
        self.lineno = lineno


class DuplicateIdError(DataError):
    pass


class UnknownIdError(DataError, KeyError):
    def __str__(self):
        return Exception.__str__(self)


class ConfigError(KinjectError):
    pass


class ShapeError(KinjectError, ValueError):
    pass


class NumericError(KinjectError):
    exit_code = 3
