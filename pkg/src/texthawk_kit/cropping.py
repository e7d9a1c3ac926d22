"""Shape-adaptive cropping: score candidate sub-image grids by IoU and tile the image.

Boxes are origin-anchored and written ``(0, 0, height, width)``:

* image box ``(0, 0, h, w)``
* grid box ``(0, 0, r*H, c*W)``
* shape-oriented box ``(0, 0, (w*r/h)*H, c*W)`` with ``shape_box="literal"``
  or ``(0, 0, r*H, (w*r/h)*H)`` with ``shape_box="aspect"``.

Note that under ``"literal"`` both compared boxes share width ``c*W`` and their
heights both scale with ``r``, so the shape score reduces to
``min(h, w) / max(h, w)`` for every grid.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np


@dataclass(frozen=True)
class ImageShape:
    h: int
    w: int

    def __post_init__(self):
        if self.h < 1 or self.w < 1:
            raise ValueError(f"image extents must be >= 1, got {self.h}x{self.w}")


@dataclass(frozen=True, order=True)
class Grid:
    r: int
    c: int

    @property
    def area(self) -> int:
        return self.r * self.c


@dataclass(frozen=True)
class CropConfig:
    l: int = 12
    n: int = 36
    k: int = 9
    H: int = 224
    W: int = 224
    p: int = 14
    shape_box: str = "literal"

    def __post_init__(self):
        if self.l < 1 or self.n < 1:
            raise ValueError("l and n must be >= 1")
        if self.H % self.p or self.W % self.p:
            raise ValueError(f"sub-image {self.H}x{self.W} not divisible by patch {self.p}")
        if self.shape_box not in ("literal", "aspect"):
            raise ValueError(f"shape_box must be 'literal' or 'aspect', got {self.shape_box!r}")
        if not 1 <= self.k <= len(grid_set(self.l, self.n)):
            raise ValueError(f"k={self.k} outside [1, {len(grid_set(self.l, self.n))}]")

    @property
    def patches_per_subimage(self) -> int:
        return (self.H // self.p) * (self.W // self.p)


@dataclass(frozen=True)
class GridChoice:
    grid: Grid
    s_r: float
    s_s: float
    s: float


@lru_cache(maxsize=None)
def grid_set(l: int, n: int) -> tuple[Grid, ...]:
    """All grids with 1 <= r, c <= l and r*c <= n, in row-major (r, c) order."""
    return tuple(Grid(r, c) for r in range(1, l + 1) for c in range(1, l + 1) if r * c <= n)


def iou_origin_boxes(h1, w1, h2, w2) -> float:
    if min(h1, w1, h2, w2) <= 0:
        raise ValueError("box extents must be positive")
    inter = min(h1, h2) * min(w1, w2)
    return inter / (h1 * w1 + h2 * w2 - inter)


def score_grid(v: ImageShape, g: Grid, cfg: CropConfig) -> GridChoice:
    gh, gw = g.r * cfg.H, g.c * cfg.W
    s_r = iou_origin_boxes(v.h, v.w, gh, gw)
    # IoU is invariant to scaling one axis of both boxes, so the shape box is
    # compared after multiplying that axis by h; integer inputs stay exact.
    if cfg.shape_box == "literal":
        s_s = iou_origin_boxes(v.w * g.r * cfg.H, gw, gh * v.h, gw)
    else:
        s_s = iou_origin_boxes(gh, v.w * g.r * cfg.H, gh, gw * v.h)
    return GridChoice(g, s_r, s_s, s_r + s_s)


def _prefer(a: GridChoice) -> tuple[int, int]:
    # tie-break: fewer sub-images, then fewer rows
    return a.grid.area, a.grid.r


def shortlist(v: ImageShape, cfg: CropConfig) -> list[GridChoice]:
    """The ``k`` grids with the highest regular IoU, best first."""
    scored = [score_grid(v, g, cfg) for g in grid_set(cfg.l, cfg.n)]
    scored.sort(key=lambda ch: (-ch.s_r, *_prefer(ch)))
    return scored[: cfg.k]


def select_grid(v: ImageShape, cfg: CropConfig) -> GridChoice:
    return min(shortlist(v, cfg), key=lambda ch: (-ch.s, *_prefer(ch)))


# ---- resizing and tiling ---------------------------------------------------

def _bilinear_axis(n_in: int, n_out: int):
    """Source indices and weights for half-pixel-centre bilinear sampling."""
    scale = n_in / n_out
    src = (np.arange(n_out, dtype=np.float64) + 0.5) * scale - 0.5
    src = np.clip(src, 0.0, n_in - 1)
    i0 = np.floor(src).astype(np.int64)
    i1 = np.minimum(i0 + 1, n_in - 1)
    frac = (src - i0).astype(np.float32)
    return i0, i1, frac


def resize_bilinear(image: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Bilinear resize of an (h, w, channels) array, half-pixel centres, no antialiasing.

    Sampling position for output pixel ``j`` is ``(j + 0.5) * in/out - 0.5``,
    clamped to the valid range. Same-size resizes return the input unchanged.
    """
    if out_h < 1 or out_w < 1:
        raise ValueError(f"degenerate resize target {out_h}x{out_w}")
    img = np.asarray(image, dtype=np.float32)
    if img.ndim != 3 or img.shape[0] < 1 or img.shape[1] < 1:
        raise ValueError(f"expected a non-empty (h, w, channels) image, got {img.shape}")
    if img.shape[:2] == (out_h, out_w):
        return img.copy()
    y0, y1, fy = _bilinear_axis(img.shape[0], out_h)
    x0, x1, fx = _bilinear_axis(img.shape[1], out_w)
    fy = fy[:, None, None]
    fx = fx[None, :, None]
    top = img[y0][:, x0] * (1 - fx) + img[y0][:, x1] * fx
    bot = img[y1][:, x0] * (1 - fx) + img[y1][:, x1] * fx
    return (top * (1 - fy) + bot * fy).astype(np.float32)


@dataclass
class SubImage:
    pixels: np.ndarray  # (H, W, channels)
    row: int
    col: int


def crop(image: np.ndarray, choice: GridChoice | Grid, cfg: CropConfig) -> list[SubImage]:
    """Resize to (r*H, c*W) and split into r*c tiles in row-major order."""
    grid = choice.grid if isinstance(choice, GridChoice) else choice
    resized = resize_bilinear(image, grid.r * cfg.H, grid.c * cfg.W)
    return [
        SubImage(resized[i * cfg.H:(i + 1) * cfg.H, j * cfg.W:(j + 1) * cfg.W].copy(), i, j)
        for i in range(grid.r)
        for j in range(grid.c)
    ]


def reassemble(tiles: list[SubImage], grid: Grid) -> np.ndarray:
    rows = [np.concatenate([t.pixels for t in tiles[i * grid.c:(i + 1) * grid.c]], axis=1)
            for i in range(grid.r)]
    return np.concatenate(rows, axis=0)
