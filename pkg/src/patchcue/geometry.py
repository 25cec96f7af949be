"""Pixel and patch coordinate types for patch-grid visual cues.

Conventions used throughout the package:

* Pixel boxes have *inclusive* corners: ``(x1, y1)`` is the top-left pixel and
  ``(x2, y2)`` the bottom-right pixel that still belongs to the region.
* Patch boxes are inclusive as well, in (row, column) order.
* IoU between pixel boxes uses the continuous area ``(x2 - x1) * (y2 - y1)``.
  This is the usual detection convention and is what grounding models emit
  for normalized boxes, so inclusive corners only matter for patch binning.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple

DEFAULT_PATCH_SIZE = 28


class OutOfGridError(ValueError):
    """A point or box falls outside the patch grid it is bound to."""


@dataclass(frozen=True)
class PatchGrid:
    """Image dimensions (already patch multiples) plus the patch cell size.

    ``raw_height``/``raw_width`` keep the original image size before padding;
    normalized boxes are scaled against them.
    """

    image_height: int
    image_width: int
    patch_height: int = DEFAULT_PATCH_SIZE
    patch_width: int = DEFAULT_PATCH_SIZE
    raw_height: int | None = None
    raw_width: int | None = None

    def __post_init__(self) -> None:
        for name in ("image_height", "image_width", "patch_height", "patch_width"):
            value = getattr(self, name)
            if not isinstance(value, int) or isinstance(value, bool) or value <= 0:
                raise ValueError(f"{name} must be a positive integer, got {value!r}")
        if self.image_height % self.patch_height or self.image_width % self.patch_width:
            raise ValueError(
                f"image {self.image_height}x{self.image_width} is not a multiple of "
                f"patch {self.patch_height}x{self.patch_width}; use make_grid()"
            )
        if self.raw_height is None:
            object.__setattr__(self, "raw_height", self.image_height)
        if self.raw_width is None:
            object.__setattr__(self, "raw_width", self.image_width)
        if not 0 < self.raw_height <= self.image_height or not 0 < self.raw_width <= self.image_width:
            raise ValueError("raw dimensions must be positive and fit inside the padded image")

    @property
    def rows(self) -> int:
        return self.image_height // self.patch_height

    @property
    def cols(self) -> int:
        return self.image_width // self.patch_width

    @property
    def num_patches(self) -> int:
        return self.rows * self.cols

    def contains(self, pb: PatchBBox) -> bool:
        return 0 <= pb.r1 and 0 <= pb.c1 and pb.r2 < self.rows and pb.c2 < self.cols

    def full_box(self) -> PatchBBox:
        return PatchBBox(0, 0, self.rows - 1, self.cols - 1)


class PixelPoint(NamedTuple):
    x: float
    y: float


class PatchCoord(NamedTuple):
    r: int
    c: int


@dataclass(frozen=True)
class PixelBBox:
    x1: float
    y1: float
    x2: float
    y2: float
    normalized: bool = False

    def __post_init__(self) -> None:
        coords = (self.x1, self.y1, self.x2, self.y2)
        if not all(math.isfinite(v) for v in coords):
            raise ValueError(f"bbox coordinates must be finite, got {coords}")
        if self.x1 > self.x2 or self.y1 > self.y2:
            raise ValueError(f"inverted bbox {coords}")
        if self.normalized and not all(0.0 <= v <= 1.0 for v in coords):
            raise ValueError(f"normalized bbox coordinates must lie in [0, 1], got {coords}")
        if not self.normalized and min(coords) < 0:
            raise ValueError(f"pixel bbox coordinates must be non-negative, got {coords}")

    @property
    def area(self) -> float:
        return (self.x2 - self.x1) * (self.y2 - self.y1)

    def as_list(self) -> list[float]:
        return [self.x1, self.y1, self.x2, self.y2]


@dataclass(frozen=True, order=True)
class PatchBBox:
    r1: int
    c1: int
    r2: int
    c2: int

    def __post_init__(self) -> None:
        coords = (self.r1, self.c1, self.r2, self.c2)
        if not all(isinstance(v, int) and not isinstance(v, bool) for v in coords):
            raise ValueError(f"patch indices must be integers, got {coords}")
        if min(coords) < 0:
            raise ValueError(f"patch indices must be non-negative, got {coords}")
        if self.r1 > self.r2 or self.c1 > self.c2:
            raise ValueError(f"inverted patch bbox {coords}")

    @property
    def num_cells(self) -> int:
        return (self.r2 - self.r1 + 1) * (self.c2 - self.c1 + 1)

    def as_list(self) -> list[int]:
        return [self.r1, self.c1, self.r2, self.c2]

    def shifted(self, dr: int, dc: int) -> PatchBBox:
        return PatchBBox(self.r1 + dr, self.c1 + dc, self.r2 + dr, self.c2 + dc)


PatchSet = frozenset  # frozenset[PatchCoord]


def _ceil_multiple(value: int, step: int) -> int:
    return -(-value // step) * step


def make_grid(
    raw_height: int,
    raw_width: int,
    patch_h: int = DEFAULT_PATCH_SIZE,
    patch_w: int = DEFAULT_PATCH_SIZE,
) -> PatchGrid:
    """Build a grid whose dimensions are the smallest patch multiples covering the image.

    The image is treated as padded on the bottom/right, so no content is lost.
    """
    for name, value in (("raw_height", raw_height), ("raw_width", raw_width),
                        ("patch_h", patch_h), ("patch_w", patch_w)):
        if not isinstance(value, int) or isinstance(value, bool) or value <= 0:
            raise ValueError(f"{name} must be a positive integer, got {value!r}")
    return PatchGrid(
        image_height=_ceil_multiple(raw_height, patch_h),
        image_width=_ceil_multiple(raw_width, patch_w),
        patch_height=patch_h,
        patch_width=patch_w,
        raw_height=raw_height,
        raw_width=raw_width,
    )


def pixel_to_patch(p: PixelPoint, grid: PatchGrid) -> PatchCoord:
    x, y = p
    if not (0 <= x < grid.image_width and 0 <= y < grid.image_height):
        raise OutOfGridError(
            f"pixel ({x}, {y}) outside {grid.image_width}x{grid.image_height} image"
        )
    return PatchCoord(int(y // grid.patch_height), int(x // grid.patch_width))


def _to_absolute(b: PixelBBox, grid: PatchGrid) -> tuple[float, float, float, float]:
    if not b.normalized:
        return b.x1, b.y1, b.x2, b.y2
    # Scale against the unpadded image and clamp to the last real pixel, so a
    # coordinate of exactly 1.0 does not spill into a phantom row/column.
    w, h = grid.raw_width, grid.raw_height
    xs = [min(math.floor(v * w), w - 1) for v in (b.x1, b.x2)]
    ys = [min(math.floor(v * h), h - 1) for v in (b.y1, b.y2)]
    return xs[0], ys[0], xs[1], ys[1]


def pixel_bbox_to_patch_bbox(b: PixelBBox, grid: PatchGrid) -> PatchBBox:
    """Convert an inclusive pixel box to the patch box whose cells cover it."""
    x1, y1, x2, y2 = _to_absolute(b, grid)
    if x2 >= grid.image_width or y2 >= grid.image_height:
        raise OutOfGridError(
            f"bbox {[x1, y1, x2, y2]} outside {grid.image_width}x{grid.image_height} image"
        )
    r1, c1 = pixel_to_patch(PixelPoint(x1, y1), grid)
    r2, c2 = pixel_to_patch(PixelPoint(x2, y2), grid)
    return PatchBBox(r1, c1, r2, c2)


def expand_patch_set(pb: PatchBBox) -> frozenset[PatchCoord]:
    return frozenset(
        PatchCoord(i, j)
        for i in range(pb.r1, pb.r2 + 1)
        for j in range(pb.c1, pb.c2 + 1)
    )


def patch_bbox_to_pixel_bbox(pb: PatchBBox, grid: PatchGrid) -> PixelBBox:
    """Pixel footprint of a patch box (inclusive corners, absolute coordinates)."""
    if not grid.contains(pb):
        raise OutOfGridError(f"patch bbox {pb.as_list()} outside {grid.rows}x{grid.cols} grid")
    h, w = grid.patch_height, grid.patch_width
    return PixelBBox(pb.c1 * w, pb.r1 * h, (pb.c2 + 1) * w - 1, (pb.r2 + 1) * h - 1)


def iou(a: PixelBBox, b: PixelBBox) -> float:
    """Intersection over union under the continuous-area convention.

    Zero-area boxes have no meaningful ratio; they score 1.0 against an
    identical box and 0.0 otherwise.
    """
    if a.normalized != b.normalized:
        raise ValueError("cannot compare normalized and absolute boxes")
    if a.area == 0 or b.area == 0:
        same = (a.x1, a.y1, a.x2, a.y2) == (b.x1, b.y1, b.x2, b.y2)
        return 1.0 if same else 0.0
    iw = min(a.x2, b.x2) - max(a.x1, b.x1)
    ih = min(a.y2, b.y2) - max(a.y1, b.y1)
    if iw <= 0 or ih <= 0:
        return 0.0
    inter = iw * ih
    union = a.area + b.area - inter
    return min(1.0, max(0.0, inter / union))


def area_fraction(pb: PatchBBox, grid: PatchGrid) -> float:
    if not grid.contains(pb):
        raise OutOfGridError(f"patch bbox {pb.as_list()} outside {grid.rows}x{grid.cols} grid")
    return pb.num_cells / grid.num_patches
