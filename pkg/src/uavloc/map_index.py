"""Overlapping tile partition of the map raster and the confidence-driven search area."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from uavloc.errors import InvalidArgument

W_FLOOR = 0.2


@dataclass(frozen=True)
class Tile:
    grid_index: tuple  # (col, row)
    origin_px: tuple  # (x0, y0) of the top-left pixel in the full raster
    width: int
    height: int
    view: np.ndarray = field(repr=False, compare=False, default=None)

    def contains_px(self, u, v):
        x0, y0 = self.origin_px
        return x0 <= u <= x0 + self.width - 1 and y0 <= v <= y0 + self.height - 1

    @property
    def center_px(self):
        x0, y0 = self.origin_px
        return (x0 + (self.width - 1) / 2.0, y0 + (self.height - 1) / 2.0)


def _axis_origins(size, tile, stride):
    n = 1 if size == tile else int(math.ceil((size - tile) / stride)) + 1
    return [min(i * stride, size - tile) for i in range(n)]


@dataclass(frozen=True)
class TileGrid:
    tile_width: int
    tile_height: int
    stride_x: int
    stride_y: int
    cols: int
    rows: int
    duplication_rate: float
    raster: np.ndarray = field(repr=False, compare=False)

    @property
    def n_tiles(self):
        return self.cols * self.rows

    def origin(self, col, row):
        x0 = min(col * self.stride_x, self.raster.shape[1] - self.tile_width)
        y0 = min(row * self.stride_y, self.raster.shape[0] - self.tile_height)
        return (x0, y0)

    def tile(self, col, row) -> Tile:
        if not (0 <= col < self.cols and 0 <= row < self.rows):
            raise InvalidArgument(f"tile ({col}, {row}) outside a {self.cols}x{self.rows} grid")
        x0, y0 = self.origin(col, row)
        view = self.raster[y0 : y0 + self.tile_height, x0 : x0 + self.tile_width]
        return Tile((col, row), (x0, y0), self.tile_width, self.tile_height, view)

    def tiles(self):
        return [self.tile(c, r) for r in range(self.rows) for c in range(self.cols)]

    def tiles_containing(self, u, v):
        return [t for t in self.tiles() if t.contains_px(u, v)]

    def layout(self):
        """Plain-data description used by the ``tiles`` subcommand."""
        return {
            "tile_width": self.tile_width,
            "tile_height": self.tile_height,
            "stride_x": self.stride_x,
            "stride_y": self.stride_y,
            "cols": self.cols,
            "rows": self.rows,
            "n_tiles": self.n_tiles,
            "duplication_rate": self.duplication_rate,
            "raster_width": int(self.raster.shape[1]),
            "raster_height": int(self.raster.shape[0]),
            "tiles": [
                {"col": c, "row": r, "x0": self.origin(c, r)[0], "y0": self.origin(c, r)[1]}
                for r in range(self.rows)
                for c in range(self.cols)
            ],
        }


def partition(world, tile_dims, duplication_rate=0.5) -> TileGrid:
    """Slide a ``tile_dims`` window over the raster with the given overlap.

    ``world`` may be a WorldMap or a bare 2-D raster. ``tile_dims`` is an int or
    (width, height). The last row and column are clamped inward so every tile
    lies inside the raster.
    """
    raster = np.asarray(getattr(world, "raster", world))
    if raster.ndim != 2:
        raise InvalidArgument("raster must be 2-D")
    tw, th = (tile_dims, tile_dims) if np.isscalar(tile_dims) else tuple(tile_dims)
    tw, th = int(tw), int(th)
    if not 0.0 <= duplication_rate < 1.0:
        raise InvalidArgument(f"duplication_rate must be in [0, 1), got {duplication_rate}")
    h, w = raster.shape
    if tw < 1 or th < 1 or tw > w or th > h:
        raise InvalidArgument(f"tile {tw}x{th} does not fit raster {w}x{h}")
    sx = max(1, int(math.floor(tw * (1.0 - duplication_rate))))
    sy = max(1, int(math.floor(th * (1.0 - duplication_rate))))
    cols = len(_axis_origins(w, tw, sx))
    rows = len(_axis_origins(h, th, sy))
    return TileGrid(tw, th, sx, sy, cols, rows, float(duplication_rate), raster)


def search_radius(w) -> int:
    """Tile radius ceil(10 ** (1 - w)) of the next search area."""
    w = float(w)
    if not 0.0 <= w <= 1.0 or math.isnan(w):
        raise InvalidArgument(f"confidence must lie in [0, 1], got {w}")
    return int(math.ceil(10.0 ** (1.0 - w)))


@dataclass
class SearchState:
    current_tile: Optional[tuple] = None
    last_confidence: float = 0.0

    def __post_init__(self):
        if not 0.0 <= self.last_confidence <= 1.0:
            raise InvalidArgument("last_confidence must lie in [0, 1]")

    def reset(self):
        self.current_tile = None
        self.last_confidence = 0.0

    def update(self, tile_index, w, w_floor=W_FLOOR):
        """Move the search centre, or fall back to a full search below ``w_floor``."""
        if tile_index is None or w < w_floor:
            self.reset()
        else:
            self.current_tile = tuple(tile_index)
            self.last_confidence = float(np.clip(w, 0.0, 1.0))


def candidate_tiles(grid: TileGrid, state: SearchState):
    """Tiles to try next: the whole grid on a cold start, else a Chebyshev ball.

    The ball is ordered by distance from the current tile, ties in row-major order.
    """
    if state.current_tile is None:
        return grid.tiles()
    c0, r0 = state.current_tile
    rad = search_radius(state.last_confidence)
    cells = []
    for r in range(max(0, r0 - rad), min(grid.rows, r0 + rad + 1)):
        for c in range(max(0, c0 - rad), min(grid.cols, c0 + rad + 1)):
            cells.append((max(abs(c - c0), abs(r - r0)), r, c))
    if not cells:
        # stale centre outside this grid
        return grid.tiles()
    cells.sort()
    return [grid.tile(c, r) for _, r, c in cells]
