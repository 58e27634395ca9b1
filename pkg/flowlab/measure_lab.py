#!/usr/bin/env python3
"""
Measure Lab
Particle ensembles for absolutely continuous reference measures, histogram
push-forward densities and compressibility estimates.
"""

import csv
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, List, Optional, Sequence, Tuple, Union

import numpy as np

from .errors import AllPointsLost, OutputError, RegionEmpty
from .field_core import SingularSet, VectorFieldSpec
from .flow_engine import DEFAULT_TOL, NUMERIC, FlowQuery, FlowResult, apply_flow, flow_points
from .grids import GridSpec, ScalarGridField
from .reporting import format_number
from .streams import BLOCK_SIZE, block_generator

logger = logging.getLogger("flowlab-measure")

GAUSSIAN = "gaussian"
UNIFORM_BOX = "uniform_box"
RESTRICTED = "restricted"
MAX_REJECTION_ROUNDS = 1000


@dataclass(frozen=True)
class MeasureSource:
    """Reference measure: standard Gaussian, uniform on a box, or uniform on box ∩ ball"""
    kind: str
    dim: int
    bounds: Optional[Tuple[Tuple[float, float], ...]] = None
    center: Optional[Tuple[float, ...]] = None
    radius: Optional[float] = None
    exclusion: Optional[SingularSet] = None

    @classmethod
    def gaussian(cls, dim: int, exclusion: Optional[SingularSet] = None) -> "MeasureSource":
        return cls(GAUSSIAN, dim, exclusion=exclusion)

    @classmethod
    def uniform_box(cls, bounds, exclusion: Optional[SingularSet] = None) -> "MeasureSource":
        bounds = tuple((float(lo), float(hi)) for lo, hi in bounds)
        return cls(UNIFORM_BOX, len(bounds), bounds=bounds, exclusion=exclusion)

    @classmethod
    def restricted(cls, bounds, center=None, radius: Optional[float] = None,
                   exclusion: Optional[SingularSet] = None) -> "MeasureSource":
        bounds = tuple((float(lo), float(hi)) for lo, hi in bounds)
        center = None if center is None else tuple(float(c) for c in center)
        return cls(RESTRICTED, len(bounds), bounds, center, radius, exclusion)

    @property
    def density_sup(self) -> float:
        return (2 * math.pi) ** (-self.dim / 2) if self.kind == GAUSSIAN else 1.0

    def _box_volume(self) -> float:
        return float(np.prod([hi - lo for lo, hi in self.bounds]))

    def _candidates(self, rng: np.random.Generator, count: int) -> np.ndarray:
        if self.kind == GAUSSIAN:
            return rng.standard_normal((count, self.dim))
        lo = np.array([b[0] for b in self.bounds])
        hi = np.array([b[1] for b in self.bounds])
        return lo + (hi - lo) * rng.random((count, self.dim))

    def _region_mask(self, pts: np.ndarray) -> np.ndarray:
        if self.kind == RESTRICTED and self.radius is not None:
            center = np.zeros(self.dim) if self.center is None else np.asarray(self.center)
            return np.linalg.norm(pts - center, axis=1) <= self.radius
        return np.ones(len(pts), dtype=bool)


@dataclass
class ParticleEnsemble:
    points: np.ndarray
    weights: np.ndarray
    seed: int
    source: MeasureSource

    def __post_init__(self):
        if len(self.points) != len(self.weights):
            raise ValueError("points and weights differ in length")
        if np.any(self.weights < 0):
            raise ValueError("weights must be nonnegative")

    def __len__(self) -> int:
        return len(self.points)

    @property
    def total_mass(self) -> float:
        return float(np.sum(self.weights))

    def subset(self, mask: np.ndarray) -> "ParticleEnsemble":
        return ParticleEnsemble(self.points[mask], self.weights[mask], self.seed, self.source)


def _sample_block(source: MeasureSource, rng: np.random.Generator, size: int):
    """Rejection-sample one block; returns (points, region tries, region hits)"""
    kept, tries, hits = [], 0, 0
    have = 0
    for _ in range(MAX_REJECTION_ROUNDS):
        cand = source._candidates(rng, max(2 * (size - have), 16))
        in_region = source._region_mask(cand)
        tries += len(cand)
        hits += int(np.sum(in_region))
        cand = cand[in_region]
        if source.exclusion is not None:
            cand = cand[~source.exclusion.in_tube(cand)]
        kept.append(cand)
        have += len(cand)
        if have >= size:
            return np.concatenate(kept)[:size], tries, hits
    raise RegionEmpty(f"could not place {size} samples in the {source.kind} region")


def sample_reference_measure(source: MeasureSource, n: int, seed: int) -> ParticleEnsemble:
    """n i.i.d. points with exclusion-tube rejection, reproducible from the seed"""
    if n < 1:
        raise ValueError("need at least one sample")
    parts, tries, hits = [], 0, 0
    for block, start in enumerate(range(0, n, BLOCK_SIZE)):
        size = min(BLOCK_SIZE, n - start)
        pts, t, h = _sample_block(source, block_generator(seed, block, f"measure:{source.kind}"), size)
        parts.append(pts)
        tries += t
        hits += h
    points = np.concatenate(parts)
    if source.kind == GAUSSIAN:
        mass = 1.0
    elif source.kind == UNIFORM_BOX:
        mass = source._box_volume()
    else:
        mass = source._box_volume() * hits / tries
    weights = np.full(n, mass / n)
    logger.debug(f"sampled {n} points from {source.kind} (seed {seed})")
    return ParticleEnsemble(points, weights, seed, source)


def write_ensemble_csv(ens: ParticleEnsemble, path: Union[str, Path], config_digest: str = "") -> Path:
    """Columns: weight, x_1..x_d"""
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", newline="") as handle:
            if config_digest:
                handle.write(f"# config_hash={config_digest}\n")
            writer = csv.writer(handle, lineterminator="\n")
            writer.writerow(["weight"] + [f"x_{i + 1}" for i in range(ens.points.shape[1])])
            for w, p in zip(ens.weights, ens.points):
                writer.writerow([format_number(w)] + [format_number(v) for v in p])
    except OSError as e:
        raise OutputError(f"cannot write ensemble to {path}: {e}") from e
    return path


FlowLike = Union[FlowQuery, Callable[[np.ndarray], Union[FlowResult, np.ndarray]]]


def _transport(ens: ParticleEnsemble, flow: FlowLike) -> FlowResult:
    if isinstance(flow, FlowQuery):
        return apply_flow(flow, ens.points)
    moved = flow(ens.points)
    if isinstance(moved, FlowResult):
        return moved
    moved = np.asarray(moved, dtype=float)
    n = len(moved)
    ok = np.all(np.isfinite(moved), axis=1)
    return FlowResult(moved, ok, np.zeros(n, dtype=bool), np.where(ok, 0, 3))


def histogram_density(points: np.ndarray, weights: np.ndarray, grid: GridSpec) -> ScalarGridField:
    counts, _ = np.histogramdd(points, bins=grid.edges(), weights=weights)
    inside_mass = float(np.sum(counts))
    density = ScalarGridField(grid, counts / grid.cell_volume)
    density.meta["outside_mass"] = float(np.sum(weights)) - inside_mass
    return density


def pushforward_density(ens: ParticleEnsemble, flow: FlowLike, grid: GridSpec) -> ScalarGridField:
    """Histogram density of the transported ensemble, per unit cell volume"""
    moved = _transport(ens, flow)
    if not np.any(moved.ok):
        raise AllPointsLost("no ensemble point survived the flow")
    density = histogram_density(moved.points[moved.ok], ens.weights[moved.ok], grid)
    density.meta.update({
        "lost": float(moved.lost),
        "lost_fraction": moved.lost / len(ens),
        "lost_mass": float(np.sum(ens.weights[~moved.ok])),
        "total_mass": ens.total_mass,
    })
    if moved.lost:
        logger.warning(f"{moved.lost} of {len(ens)} points lost during transport")
    return density


@dataclass
class CompressibilityReport:
    times: np.ndarray
    density_sup: np.ndarray
    C_estimate: float
    bin_count: int
    sample_count: int
    tolerance: float = 0.0
    lost: List[int] = field(default_factory=list)

    def within_tolerance(self, expected: float = 1.0) -> bool:
        return bool(np.all(np.abs(self.density_sup - expected) <= self.tolerance * expected))


def compressibility_estimate(field: VectorFieldSpec, ens: ParticleEnsemble, times: Sequence[float],
                             grid: GridSpec, method: str = NUMERIC, tol: float = DEFAULT_TOL,
                             oracle: Optional[Callable] = None,
                             flow: Optional[Callable[[np.ndarray, float], FlowResult]] = None
                             ) -> CompressibilityReport:
    """Sup of the pushed histogram density over the sup of the initial one, per time"""
    initial = histogram_density(ens.points, ens.weights, grid)
    initial_sup = float(np.max(initial.values))
    if initial_sup <= 0:
        raise AllPointsLost("the ensemble puts no mass on the grid")
    mover = flow or (lambda pts, t: flow_points(field, pts, t, tol, method, oracle))
    ratios, lost = [], []
    for t in times:
        pushed = pushforward_density(ens, lambda pts, t=t: mover(pts, t), grid)
        ratios.append(float(np.max(pushed.values)) / initial_sup)
        lost.append(int(pushed.meta["lost"]))
        logger.info(f"{field.name}: t={t} sup density ratio {ratios[-1]:.4f}")
    mean_weight = ens.total_mass / len(ens)
    expected_peak = initial_sup * grid.cell_volume / mean_weight
    tolerance = 4.0 * math.sqrt(1.0 / expected_peak)
    ratios = np.asarray(ratios)
    return CompressibilityReport(np.asarray(times, dtype=float), ratios,
                                 float(np.max(ratios, initial=0.0)),
                                 int(np.prod(grid.resolution)), len(ens), tolerance, lost)
