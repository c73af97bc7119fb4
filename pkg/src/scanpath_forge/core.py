"""Domain types: fixations, scanpaths, saliency maps, observer pools, reports.

Coordinates follow the raster convention: x to the right, y downward,
origin at the top-left corner of the screen.  Fixation onset times are
carried along but no computation uses them.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from typing import Iterable, Sequence

import numpy as np

from .errors import (
    EmptyPool,
    EmptyScanpath,
    NonFinite,
    OutOfBounds,
    ScreenMismatch,
    ValidationError,
)


@dataclass(frozen=True)
class Fixation:
    x: float
    y: float
    t_ms: float | None = None


@dataclass(frozen=True)
class Scanpath:
    """An ordered fixation sequence recorded (or predicted) on one screen."""

    image_id: str
    observer_id: str
    screen_w: int
    screen_h: int
    fixations: tuple[Fixation, ...]

    def __post_init__(self):
        object.__setattr__(self, "fixations", tuple(self.fixations))

    def __len__(self) -> int:
        return len(self.fixations)

    @property
    def xy(self) -> np.ndarray:
        """Fixation coordinates as an ``n x 2`` float array."""
        return np.array([(f.x, f.y) for f in self.fixations], dtype=np.float64).reshape(-1, 2)

    @property
    def diagonal(self) -> float:
        return math.hypot(self.screen_w, self.screen_h)

    @classmethod
    def from_xy(
        cls,
        xy: Iterable[Sequence[float]],
        screen_w: int,
        screen_h: int,
        image_id: str = "",
        observer_id: str = "",
        t_ms: Sequence[float] | None = None,
    ) -> "Scanpath":
        pts = [tuple(map(float, p)) for p in xy]
        times = list(t_ms) if t_ms is not None else [None] * len(pts)
        fixations = tuple(Fixation(x, y, t) for (x, y), t in zip(pts, times))
        return cls(image_id, observer_id, int(screen_w), int(screen_h), fixations)


@dataclass(frozen=True)
class SaliencyMap:
    """Nonnegative ``height x width`` grid; ``values`` is row-major."""

    values: np.ndarray

    def __post_init__(self):
        arr = np.array(self.values, dtype=np.float64)
        if arr.ndim != 2 or arr.size == 0:
            raise ValidationError(f"saliency map must be a nonempty 2-D grid, got shape {arr.shape}")
        if not np.all(np.isfinite(arr)):
            raise ValidationError("saliency map has non-finite values")
        if np.any(arr < 0):
            raise ValidationError("saliency map has negative values")
        arr.setflags(write=False)
        object.__setattr__(self, "values", arr)

    @property
    def height(self) -> int:
        return self.values.shape[0]

    @property
    def width(self) -> int:
        return self.values.shape[1]


@dataclass(frozen=True)
class ObserverPool:
    """All recorded scanpaths for one image, one per observer."""

    image_id: str
    scanpaths: tuple[Scanpath, ...]

    def __post_init__(self):
        sps = tuple(self.scanpaths)
        object.__setattr__(self, "scanpaths", sps)
        if not sps:
            raise EmptyPool()
        w, h = sps[0].screen_w, sps[0].screen_h
        for sp in sps:
            if sp.image_id != self.image_id:
                raise ValidationError(f"scanpath for image {sp.image_id!r} in pool {self.image_id!r}")
            if (sp.screen_w, sp.screen_h) != (w, h):
                raise ScreenMismatch(f"pool {self.image_id!r} mixes screen sizes")

    def __len__(self) -> int:
        return len(self.scanpaths)

    @property
    def screen(self) -> tuple[int, int]:
        return self.scanpaths[0].screen_w, self.scanpaths[0].screen_h


MM_FIELDS = ("mm_shape", "mm_direction", "mm_length", "mm_position")
REPORT_FIELDS = MM_FIELDS + ("mm_mean", "nss", "congruency")


@dataclass(frozen=True)
class MetricReport:
    """One row of the evaluation table."""

    mm_shape: float
    mm_direction: float
    mm_length: float
    mm_position: float
    mm_mean: float
    nss: float
    congruency: float

    def __post_init__(self):
        for name in MM_FIELDS + ("mm_mean", "congruency"):
            v = getattr(self, name)
            if not -1e-12 <= v <= 1 + 1e-12:
                raise ValidationError(f"{name}={v} outside [0, 1]")
        expect = sum(getattr(self, n) for n in MM_FIELDS) / 4.0
        if abs(expect - self.mm_mean) > 1e-9:
            raise ValidationError("mm_mean must equal the mean of the four MultiMatch components")

    def to_dict(self) -> dict[str, float]:
        return asdict(self)

    @classmethod
    def from_components(cls, mm: Sequence[float], nss: float, congruency: float) -> "MetricReport":
        shape, direction, length, position = (float(v) for v in mm[:4])
        return cls(shape, direction, length, position, (shape + direction + length + position) / 4.0, float(nss), float(congruency))


def validate_scanpath(sp: Scanpath) -> None:
    """Raise if ``sp`` breaks a Scanpath invariant; return ``None`` when valid."""
    if sp.screen_w <= 0 or sp.screen_h <= 0:
        raise ValidationError(f"screen size must be positive, got {sp.screen_w}x{sp.screen_h}")
    if len(sp.fixations) == 0:
        raise EmptyScanpath()
    for i, f in enumerate(sp.fixations):
        if not (math.isfinite(f.x) and math.isfinite(f.y)):
            raise NonFinite(i)
        if not (0.0 <= f.x <= sp.screen_w and 0.0 <= f.y <= sp.screen_h):
            raise OutOfBounds(i, f.x, f.y, sp.screen_w, sp.screen_h)


def is_valid(sp: Scanpath) -> bool:
    try:
        validate_scanpath(sp)
    except ValidationError:
        return False
    return True


def normalize_coords(sp: Scanpath) -> np.ndarray:
    """Map fixations to ``[0, 1]^2`` as ``(x / W, y / H)``; returns ``n x 2``."""
    validate_scanpath(sp)
    return sp.xy / np.array([sp.screen_w, sp.screen_h], dtype=np.float64)


def denormalize_coords(
    uv: np.ndarray,
    screen_w: int,
    screen_h: int,
    image_id: str = "",
    observer_id: str = "",
) -> Scanpath:
    """Inverse of :func:`normalize_coords`."""
    uv = np.asarray(uv, dtype=np.float64).reshape(-1, 2)
    return Scanpath.from_xy(uv * np.array([screen_w, screen_h]), screen_w, screen_h, image_id, observer_id)
