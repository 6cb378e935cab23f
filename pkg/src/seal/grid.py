"""Fixed-resolution grid geometry shared by the belief layers."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class GridGeometry:
    rows: int
    cols: int
    resolution: float

    @classmethod
    def like(cls, world) -> "GridGeometry":
        return cls(world.height_cells, world.width_cells, world.resolution)

    @property
    def shape(self) -> tuple[int, int]:
        return (self.rows, self.cols)

    @property
    def size(self) -> int:
        return self.rows * self.cols

    @property
    def width_m(self) -> float:
        return self.cols * self.resolution

    @property
    def height_m(self) -> float:
        return self.rows * self.resolution

    def to_cell(self, x, y):
        return (np.floor(np.asarray(y) / self.resolution).astype(int),
                np.floor(np.asarray(x) / self.resolution).astype(int))

    def inside(self, row, col):
        row = np.asarray(row)
        col = np.asarray(col)
        return (row >= 0) & (row < self.rows) & (col >= 0) & (col < self.cols)

    def flat_index(self, x, y):
        """Flat cell index for each point, -1 where the point is off-grid."""
        row, col = self.to_cell(x, y)
        ok = self.inside(row, col)
        return np.where(ok, row * self.cols + col, -1)

    def cell_center(self, row, col):
        return ((np.asarray(col) + 0.5) * self.resolution,
                (np.asarray(row) + 0.5) * self.resolution)

    def centers(self, mask: np.ndarray | None = None) -> np.ndarray:
        """(N, 2) cell centers, row-major, optionally restricted to ``mask``."""
        if mask is None:
            rr, cc = np.indices(self.shape)
            rr, cc = rr.ravel(), cc.ravel()
        else:
            rr, cc = np.nonzero(mask)
        x, y = self.cell_center(rr, cc)
        return np.column_stack([x, y])
