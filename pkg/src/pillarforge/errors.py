"""Exception types raised across the toolkit."""


class PillarforgeError(Exception):
    """Base class for all toolkit errors."""


class PCDFormatError(PillarforgeError):
    """Malformed PCD header or data section."""

    def __init__(self, message, line=None, path=None):
        self.line = line
        self.path = path
        where = []
        if path is not None:
            where.append(str(path))
        if line is not None:
            where.append(f"line {line}")
        prefix = f"{':'.join(where)}: " if where else ""
        super().__init__(prefix + message)


class PCDTruncationError(PCDFormatError):
    """Fewer data records than the header declares."""


class SchemaError(PillarforgeError):
    """A JSON document is missing a required key; ``path`` names the location."""

    def __init__(self, path, message="missing key"):
        self.path = path
        super().__init__(f"{path}: {message}")


class ValidationError(PillarforgeError, ValueError):
    """A value is structurally present but not acceptable."""


class UnknownClassError(PillarforgeError, ValueError):
    def __init__(self, classes):
        self.classes = sorted(set(classes))
        super().__init__(f"unknown class name(s): {', '.join(self.classes)}")


class FitError(PillarforgeError):
    """Plane fitting could not produce a model."""


class ProfileError(PillarforgeError):
    """Height profile could not be built."""


class CoverageError(PillarforgeError):
    """A query lies outside the height profile."""


class EvaluationError(PillarforgeError):
    pass


class ConfigError(PillarforgeError):
    pass
