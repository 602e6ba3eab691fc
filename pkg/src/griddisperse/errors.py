"""Exception hierarchy shared by the grid, protocol, engine and verifier."""


class DispersionError(Exception):
    pass


class BoundsError(DispersionError, IndexError):
    pass


class NoSuchPort(DispersionError):
    pass


class NotAdjacent(DispersionError):
    pass


class NotInternal(DispersionError):
    pass


class BadDimensions(DispersionError, ValueError):
    pass


class RankOverflow(DispersionError, ValueError):
    pass


class InternalError(DispersionError):
    pass


class ProtocolViolation(DispersionError):
    """A robot observed something its phase rules out, or chose an illegal move."""


class ConfigError(DispersionError, ValueError):
    def __init__(self, path, message=""):
        self.path = path
        super().__init__(f"{path}: {message}" if message else path)


class ParseError(DispersionError, ValueError):
    def __init__(self, line, message=""):
        self.line = line
        super().__init__(f"line {line}: {message}")


class RegisterOverflow(DispersionError, ValueError):
    """A memory field does not fit its declared register width."""
