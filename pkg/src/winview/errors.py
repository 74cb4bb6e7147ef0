"""Exception hierarchy shared by the loaders, renderer and batch engine."""


class WinviewError(Exception):
    """Base class for every error raised by winview."""


class ParseError(WinviewError):
    """Input file is malformed."""


class ValidationError(WinviewError):
    """Input parsed fine but violates a model invariant."""


class UnknownColorError(WinviewError):
    """A pixel color is not one of the four palette entries.

    This means the renderer leaked a non-palette color (blending, anti-aliasing
    or a bug), so it is never silently mapped to the nearest label.
    """

    def __init__(self, color, count=1):
        self.color = tuple(int(c) for c in color)
        self.count = count
        super().__init__(f"unknown color {self.color} ({count} pixel(s))")


class EmptyMeshError(WinviewError):
    pass


class EmptyCloudError(WinviewError):
    pass


class DimensionMismatchError(WinviewError):
    pass


class IdMismatchError(WinviewError):
    pass


class UnknownFixtureError(WinviewError):
    pass


class WindowError(WinviewError):
    """Wraps a per-window failure with the offending window id."""

    def __init__(self, window_id, cause):
        self.window_id = window_id
        self.cause = cause
        super().__init__(f"window {window_id!r}: {cause}")
