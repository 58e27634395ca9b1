#!/usr/bin/env python3
"""
Scalar Grid Fields
Cell-centered samples on a uniform box grid, with the CSV form
(header: bounds and resolution, then row-major values).
"""

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Dict, Sequence, Tuple, Union

import numpy as np

from .errors import OutOfBounds, OutputError
from .reporting import format_number


@dataclass(frozen=True)
class GridSpec:
    bounds: Tuple[Tuple[float, float], ...]
    resolution: Tuple[int, ...]

    def __post_init__(self):
        if len(self.bounds) != len(self.resolution):
            raise ValueError("bounds and resolution must have one entry per axis")
        if any(r < 2 for r in self.resolution):
            raise ValueError("resolution must be at least 2 per axis")
        if any(not lo < hi for lo, hi in self.bounds):
            raise ValueError("each axis needs lo < hi")

    @classmethod
    def cube(cls, low: float, high: float, cells: int, dim: int) -> "GridSpec":
        return cls(tuple((float(low), float(high)) for _ in range(dim)), tuple([int(cells)] * dim))

    @property
    def dim(self) -> int:
        return len(self.bounds)

    @property
    def shape(self) -> Tuple[int, ...]:
        return tuple(self.resolution)

    @property
    def widths(self) -> np.ndarray:
        return np.array([(hi - lo) / n for (lo, hi), n in zip(self.bounds, self.resolution)])

    @property
    def cell_volume(self) -> float:
        return float(np.prod(self.widths))

    @property
    def volume(self) -> float:
        return float(np.prod([hi - lo for lo, hi in self.bounds]))

    @property
    def diameter(self) -> float:
        return float(np.linalg.norm([hi - lo for lo, hi in self.bounds]))

    def edges(self):
        return [np.linspace(lo, hi, n + 1) for (lo, hi), n in zip(self.bounds, self.resolution)]

    def centers(self) -> np.ndarray:
        """(*shape, d) array of cell centers"""
        axes = [lo + (np.arange(n) + 0.5) * w
                for (lo, _), n, w in zip(self.bounds, self.resolution, self.widths)]
        return np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1)

    def inside(self, points: np.ndarray) -> np.ndarray:
        points = np.asarray(points, dtype=float)
        lo = np.array([b[0] for b in self.bounds])
        hi = np.array([b[1] for b in self.bounds])
        return np.all((points >= lo) & (points <= hi), axis=-1)

    def cell_index(self, points: np.ndarray) -> np.ndarray:
        """Integer cell indices (n, d); points on the upper face go to the last cell"""
        points = np.atleast_2d(np.asarray(points, dtype=float))
        if not np.all(self.inside(points)):
            raise OutOfBounds("point outside the grid bounds")
        lo = np.array([b[0] for b in self.bounds])
        idx = np.floor((points - lo) / self.widths).astype(int)
        return np.minimum(idx, np.array(self.resolution) - 1)


@dataclass
class ScalarGridField:
    spec: GridSpec
    values: np.ndarray
    fill: float = 0.0
    meta: Dict[str, float] = field(default_factory=dict)

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float).reshape(self.spec.shape)
        if not np.all(np.isfinite(self.values)):
            raise ValueError("grid values must be finite")

    @classmethod
    def from_function(cls, spec: GridSpec, func: Callable[[np.ndarray], np.ndarray],
                      fill: float = 0.0) -> "ScalarGridField":
        return cls(spec, func(spec.centers()), fill)

    @property
    def bounds(self):
        return self.spec.bounds

    @property
    def resolution(self):
        return self.spec.resolution

    def total_mass(self) -> float:
        return float(np.sum(self.values) * self.spec.cell_volume)

    def value_at(self, points) -> np.ndarray:
        """Cell value at each point (piecewise constant)"""
        idx = self.spec.cell_index(points)
        return self.values[tuple(idx.T)]

    def lp_norm(self, p: float, mask: np.ndarray = None) -> float:
        vals = np.abs(self.values) if mask is None else np.abs(self.values[mask])
        return float((np.sum(vals ** p) * self.spec.cell_volume) ** (1.0 / p))


def write_grid_csv(grid: ScalarGridField, path: Union[str, Path], config_digest: str = "") -> Path:
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", newline="") as handle:
            if config_digest:
                handle.write(f"# config_hash={config_digest}\n")
            writer = csv.writer(handle, lineterminator="\n")
            writer.writerow(["dim", grid.spec.dim, "fill", format_number(grid.fill)])
            for (lo, hi), n in zip(grid.spec.bounds, grid.spec.resolution):
                writer.writerow(["axis", format_number(lo), format_number(hi), n])
            for row in grid.values.reshape(-1, grid.spec.resolution[-1]):
                writer.writerow([format_number(v) for v in row])
    except OSError as e:
        raise OutputError(f"cannot write grid to {path}: {e}") from e
    return path


def read_grid_csv(path: Union[str, Path]) -> ScalarGridField:
    with open(path, newline="") as handle:
        rows = [r for r in csv.reader(line for line in handle if not line.startswith("#"))]
    dim = int(rows[0][1])
    fill = float(rows[0][3])
    axes = rows[1:1 + dim]
    spec = GridSpec(tuple((float(a[1]), float(a[2])) for a in axes), tuple(int(a[3]) for a in axes))
    values = np.array([[float(v) for v in r] for r in rows[1 + dim:]])
    return ScalarGridField(spec, values, fill)
