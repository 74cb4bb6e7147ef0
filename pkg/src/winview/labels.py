"""Semantic labels, the fixed four-color palette and the WVI record."""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from fractions import Fraction
from typing import NamedTuple

import numpy as np

from .errors import UnknownColorError, ValidationError


class SemanticLabel(enum.IntEnum):
    """The four view classes. Integer values double as file-format codes."""

    GREENERY = 0
    WATERBODY = 1
    SKY = 2
    CONSTRUCTION = 3


LABELS = tuple(SemanticLabel)

# Priority used when a triangle's three vertex labels all differ.
TRIANGLE_PRIORITY = (
    SemanticLabel.CONSTRUCTION,
    SemanticLabel.GREENERY,
    SemanticLabel.WATERBODY,
)


class Rgb8(NamedTuple):
    r: int
    g: int
    b: int

    @classmethod
    def checked(cls, r, g, b) -> "Rgb8":
        for c in (r, g, b):
            if not 0 <= int(c) <= 255 or int(c) != c:
                raise ValueError(f"channel out of 8-bit range: {c!r}")
        return cls(int(r), int(g), int(b))


_PALETTE = {
    SemanticLabel.GREENERY: Rgb8(0, 255, 0),
    SemanticLabel.WATERBODY: Rgb8(0, 0, 255),
    SemanticLabel.SKY: Rgb8(255, 255, 255),
    SemanticLabel.CONSTRUCTION: Rgb8(255, 0, 0),
}
_INVERSE = {color: label for label, color in _PALETTE.items()}

# (4, 3) uint8 lookup table indexed by label code.
PALETTE_ARRAY = np.array([_PALETTE[l] for l in LABELS], dtype=np.uint8)
PALETTE_ARRAY.setflags(write=False)


def label_to_color(label: SemanticLabel) -> Rgb8:
    return _PALETTE[SemanticLabel(label)]


def color_to_label(color) -> SemanticLabel:
    """Exact inverse of :func:`label_to_color`.

    Raises:
        UnknownColorError: ``color`` is not one of the four palette colors.
    """
    key = Rgb8(*(int(c) for c in color))
    try:
        return _INVERSE[key]
    except KeyError:
        raise UnknownColorError(key) from None


def label_from_code(code, *, allow_sky=False) -> SemanticLabel:
    """Parse an integer label code from a file, rejecting sky on geometry."""
    try:
        label = SemanticLabel(int(code))
    except ValueError:
        raise ValidationError(f"unknown label code {code!r}") from None
    if label is SemanticLabel.SKY and not allow_sky:
        raise ValidationError("sky label on geometry (code 2 is reserved for the background)")
    return label


def check_geometry_codes(codes: np.ndarray) -> np.ndarray:
    """Vectorised :func:`label_from_code` over an integer array; returns int8 codes."""
    codes = np.asarray(codes)
    if codes.size and (codes.min() < 0 or codes.max() > 3):
        bad = codes[(codes < 0) | (codes > 3)][0]
        raise ValidationError(f"unknown label code {int(bad)}")
    if np.any(codes == SemanticLabel.SKY):
        raise ValidationError("sky label on geometry (code 2 is reserved for the background)")
    return codes.astype(np.int8)


@dataclass(frozen=True)
class WviRecord:
    """Four WVIs for one window, in label order.

    When produced by the counter, ``counts`` holds the exact integer pixel
    counts (greenery, waterbody, sky, construction); the floats are derived
    from them by a single division each.
    """

    window_id: str
    wvi_greenery: float
    wvi_waterbody: float
    wvi_sky: float
    wvi_construction: float
    counts: tuple[int, int, int, int] | None = field(default=None, compare=False)

    def __post_init__(self):
        for v in self.values():
            if not 0.0 <= v <= 1.0:
                raise ValidationError(f"WVI out of [0, 1]: {v!r}")

    @classmethod
    def from_counts(cls, window_id: str, counts) -> "WviRecord":
        counts = tuple(int(c) for c in counts)
        n = sum(counts)
        if n <= 0:
            raise ValidationError("cannot compute WVIs of an empty image")
        return cls(window_id, *(c / n for c in counts), counts=counts)

    def values(self) -> tuple[float, float, float, float]:
        return (self.wvi_greenery, self.wvi_waterbody, self.wvi_sky, self.wvi_construction)

    def exact_sum(self) -> Fraction:
        """Sum of the four WVIs computed on the integer counts."""
        if self.counts is None:
            raise ValueError("record carries no pixel counts")
        n = sum(self.counts)
        return sum((Fraction(c, n) for c in self.counts), Fraction(0))
