"""Raster, box, and annotation primitives shared by every pipeline stage.

Coordinate conventions used throughout the library:

* the origin is the top-left corner, x grows right, y grows down;
* pixel centers sit at integer coordinates, so a full W x H image is
  covered by the box (0, 0, W, H);
* boxes are corner pairs (x_min, y_min, x_max, y_max) and containment is
  closed on all four boundaries.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import DegenerateCropError


def _freeze(arr: np.ndarray) -> np.ndarray:
    # always copy so freezing never locks a caller-owned array
    arr = np.array(arr, order="C", copy=True)
    arr.flags.writeable = False
    return arr


@dataclass(frozen=True, eq=False)
class GrayImage:
    """8-bit grayscale raster stored as a read-only (height, width) array."""

    data: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.data)
        if arr.ndim != 2 or arr.shape[0] < 1 or arr.shape[1] < 1:
            raise ValueError(f"image must be 2-D and non-empty, got shape {arr.shape}")
        if arr.dtype != np.uint8:
            if not np.issubdtype(arr.dtype, np.integer):
                raise ValueError(f"image data must be integer-valued, got {arr.dtype}")
            if arr.min() < 0 or arr.max() > 255:
                raise ValueError("image intensities must lie in [0, 255]")
            arr = arr.astype(np.uint8)
        object.__setattr__(self, "data", _freeze(arr))

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]


@dataclass(frozen=True, eq=False)
class BinaryMask:
    """Boolean foreground raster stored as a read-only (height, width) array."""

    data: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.data)
        if arr.ndim != 2 or arr.shape[0] < 1 or arr.shape[1] < 1:
            raise ValueError(f"mask must be 2-D and non-empty, got shape {arr.shape}")
        object.__setattr__(self, "data", _freeze(arr.astype(bool)))

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    def count(self) -> int:
        """Number of foreground pixels."""
        return int(self.data.sum())


@dataclass(frozen=True)
class Point:
    """Pixel-space location (real-valued, finite)."""

    x: float
    y: float

    def __post_init__(self):
        if not (math.isfinite(self.x) and math.isfinite(self.y)):
            raise ValueError(f"point coordinates must be finite, got ({self.x}, {self.y})")


@dataclass(frozen=True)
class BoundingBox:
    """Axis-aligned box as corner pairs, origin top-left."""

    x_min: float
    y_min: float
    x_max: float
    y_max: float

    def __post_init__(self):
        for v in (self.x_min, self.y_min, self.x_max, self.y_max):
            if not math.isfinite(v):
                raise ValueError("box coordinates must be finite")
        if self.x_min < 0 or self.y_min < 0:
            raise ValueError("box coordinates must be non-negative")
        if not (self.x_min < self.x_max and self.y_min < self.y_max):
            raise ValueError(
                f"box corners must be ordered, got ({self.x_min}, {self.y_min}, "
                f"{self.x_max}, {self.y_max})"
            )

    @property
    def width(self) -> float:
        return self.x_max - self.x_min

    @property
    def height(self) -> float:
        return self.y_max - self.y_min

    @property
    def area(self) -> float:
        return self.width * self.height


@dataclass(frozen=True)
class LesionAnnotation:
    """Ground-truth lesion: box plus optional MLD location and value (px)."""

    bbox: BoundingBox
    mld_point: Point | None = None
    mld_px: float | None = None

    def __post_init__(self):
        if self.mld_point is not None and not bbox_contains(self.bbox, self.mld_point):
            raise ValueError("mld_point must lie inside the lesion box")
        if self.mld_px is not None and not self.mld_px > 0:
            raise ValueError(f"mld_px must be positive, got {self.mld_px}")


@dataclass(frozen=True)
class Detection:
    """Predicted lesion box with its confidence, tied to a manifest image."""

    image_id: str
    bbox: BoundingBox
    confidence: float

    def __post_init__(self):
        if not 0.0 <= self.confidence <= 1.0:
            raise ValueError(f"confidence must lie in [0, 1], got {self.confidence}")


@dataclass(frozen=True)
class ImageRecord:
    """One manifest entry: image identity, storage path, size, lesions."""

    id: str
    path: str
    width: int
    height: int
    lesions: tuple[LesionAnnotation, ...] = field(default_factory=tuple)

    def __post_init__(self):
        if self.width < 1 or self.height < 1:
            raise ValueError("image dimensions must be positive")
        object.__setattr__(self, "lesions", tuple(self.lesions))
        for lesion in self.lesions:
            b = lesion.bbox
            if b.x_max > self.width or b.y_max > self.height:
                raise ValueError(f"lesion box {b} exceeds image bounds of '{self.id}'")


@dataclass(frozen=True)
class DatasetManifest:
    """Collection of annotated images with unique ids."""

    images: tuple[ImageRecord, ...]

    def __post_init__(self):
        object.__setattr__(self, "images", tuple(self.images))
        ids = [rec.id for rec in self.images]
        if len(set(ids)) != len(ids):
            raise ValueError("manifest image ids must be unique")

    def by_id(self) -> dict[str, ImageRecord]:
        return {rec.id: rec for rec in self.images}


@dataclass(frozen=True)
class CropContext:
    """Affine back-mapping from crop space to source-image space.

    ``x_scale``/``y_scale`` are source pixels per output pixel, so a point
    p in crop space maps back to (x_offset + p.x * x_scale,
    y_offset + p.y * y_scale).
    """

    x_offset: float
    y_offset: float
    x_scale: float
    y_scale: float

    @classmethod
    def identity(cls) -> "CropContext":
        return cls(0.0, 0.0, 1.0, 1.0)


def bbox_iou(a: BoundingBox, b: BoundingBox) -> float:
    """Intersection-over-union of two boxes; 0.0 when disjoint."""
    ix = min(a.x_max, b.x_max) - max(a.x_min, b.x_min)
    iy = min(a.y_max, b.y_max) - max(a.y_min, b.y_min)
    if ix <= 0.0 or iy <= 0.0:
        return 0.0
    inter = ix * iy
    return inter / (a.area + b.area - inter)


def bbox_contains(b: BoundingBox, p: Point) -> bool:
    """Closed-box containment: boundary points count as inside."""
    return b.x_min <= p.x <= b.x_max and b.y_min <= p.y <= b.y_max


def _bilinear_sample(arr: np.ndarray, ys: np.ndarray, xs: np.ndarray) -> np.ndarray:
    """Sample arr at the grid ys x xs with border clamping."""
    h, w = arr.shape
    xs = np.clip(xs, 0.0, w - 1.0)
    ys = np.clip(ys, 0.0, h - 1.0)
    x0 = np.floor(xs).astype(np.intp)
    y0 = np.floor(ys).astype(np.intp)
    x1 = np.minimum(x0 + 1, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    fx = (xs - x0)[None, :]
    fy = (ys - y0)[:, None]
    a = arr.astype(np.float64)
    top = a[y0][:, x0] * (1.0 - fx) + a[y0][:, x1] * fx
    bot = a[y1][:, x0] * (1.0 - fx) + a[y1][:, x1] * fx
    return top * (1.0 - fy) + bot * fy


def crop_resize(
    img: GrayImage, b: BoundingBox, out_w: int, out_h: int
) -> tuple[GrayImage, CropContext]:
    """Bilinear crop-and-resize of a box region to out_w x out_h.

    The box is clipped to the image first; a clipped box with zero width
    or height raises DegenerateCropError. The returned context back-maps
    crop-space points to source-image coordinates.
    """
    if out_w < 1 or out_h < 1:
        raise ValueError("output dimensions must be positive")
    x0 = max(b.x_min, 0.0)
    y0 = max(b.y_min, 0.0)
    x1 = min(b.x_max, float(img.width))
    y1 = min(b.y_max, float(img.height))
    cw = x1 - x0
    ch = y1 - y0
    if cw <= 0.0 or ch <= 0.0:
        raise DegenerateCropError(f"box {b} clips to zero area on a {img.width}x{img.height} image")
    sx = cw / out_w
    sy = ch / out_h
    xs = x0 + np.arange(out_w, dtype=np.float64) * sx
    ys = y0 + np.arange(out_h, dtype=np.float64) * sy
    sampled = _bilinear_sample(img.data, ys, xs)
    out = np.clip(np.rint(sampled), 0, 255).astype(np.uint8)
    return GrayImage(out), CropContext(x0, y0, sx, sy)


def uncrop_point(p: Point, ctx: CropContext) -> Point:
    """Map a crop-space point back to source-image coordinates."""
    return Point(ctx.x_offset + p.x * ctx.x_scale, ctx.y_offset + p.y * ctx.y_scale)
