"""Exception hierarchy.

Everything raised on purpose derives from :class:`MvskError`. Geometry problems
(empty meshes, shapes outside a voxel window, ...) derive from
:class:`GeometryError` so the command line can map them to their own exit code.
"""


class MvskError(Exception):
    pass


class ConfigError(MvskError):
    pass


class GeometryError(MvskError):
    pass


class ParseError(MvskError):
    def __init__(self, msg, path=None, line=None, offset=None):
        where = []
        if path is not None:
            where.append(str(path))
        if line is not None:
            where.append(f"line {line}")
        if offset is not None:
            where.append(f"byte {offset}")
        super().__init__(f"{': '.join(where)}: {msg}" if where else msg)
        self.path = path
        self.line = line
        self.offset = offset


class UnsupportedFeature(UserWarning):
    """Issued (as a warning) for mesh features that get converted on load."""


class EmptyMesh(GeometryError):
    pass


class ZeroArea(GeometryError):
    pass


class EmptySilhouette(GeometryError):
    pass


class OutOfWindow(GeometryError):
    pass


class NoCrossing(GeometryError):
    pass


class NoObservations(GeometryError):
    pass


class FrameMismatch(MvskError):
    pass


class DimMismatch(MvskError):
    pass


class ResolutionMismatch(MvskError):
    pass


class EmptyMask(MvskError):
    pass


class NotFitted(MvskError):
    pass


class EmptyGallery(MvskError):
    pass


class InconsistentGallery(MvskError):
    pass


class InsufficientData(ConfigError):
    pass
