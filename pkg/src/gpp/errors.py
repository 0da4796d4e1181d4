"""Exception hierarchy shared by all gpp modules."""


class GPPError(Exception):
    """Base class for every error raised by this package."""


class GeometryError(GPPError):
    """A geometric construction is infeasible for the given inputs."""


class SingularCamera(GeometryError):
    pass


class RayParallelToPlane(GeometryError):
    pass


class IntersectionBehindCamera(GeometryError):
    pass


class DegenerateConfiguration(GeometryError):
    pass


class DegenerateEdge(GeometryError):
    pass


class InsufficientPoints(GPPError):
    pass


class NoFeasiblePlane(GPPError):
    pass


class DomainError(GPPError, ValueError):
    pass


class LengthMismatch(GPPError, ValueError):
    pass


class NonConvexFootprint(GPPError):
    pass


class ParseError(GPPError):
    """Malformed input file. Carries the 1-based line or the byte offset."""

    def __init__(self, message, path=None, line=None, offset=None):
        self.path = path
        self.line = line
        self.offset = offset
        where = []
        if path is not None:
            where.append(str(path))
        if line is not None:
            where.append(f"line {line}")
        if offset is not None:
            where.append(f"byte {offset}")
        prefix = ":".join(where)
        super().__init__(f"{prefix}: {message}" if prefix else message)
