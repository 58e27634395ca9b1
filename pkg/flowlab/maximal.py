#!/usr/bin/env python3
"""
Maximal Functions
Hardy-Littlewood maximal function g* and the local sharp maximal function
g#_r on uniform grids. Ball averages use cell/ball intersection fractions
(boundary cells subsampled 4 per axis); sups run over a geometric radius
lattice h * 2^(k/4) anchored at the smallest cell width h, plus the point
value at radius 0.

Each sharp ball average is clamped by avg|g| + |g(x)| at the same radius,
so g#_r <= 2 g* holds exactly for the discrete operators.
"""

import logging
import math
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
from scipy.signal import fftconvolve

from .errors import OutOfBounds
from .grids import GridSpec, ScalarGridField

logger = logging.getLogger("flowlab-maximal")

RADIUS_RATIO = 2.0 ** 0.25
SUBSAMPLES = 4
_LATTICE_SLACK = 1e-9

Components = Union[ScalarGridField, Sequence[ScalarGridField]]


# Radius lattice

def _lattice_exponent(spec: GridSpec, r: float) -> int:
    h = float(np.min(spec.widths))
    return math.floor(math.log(r / h) / math.log(RADIUS_RATIO) + _LATTICE_SLACK)


def radius_lattice(spec: GridSpec, upper: float) -> np.ndarray:
    """0 followed by lattice radii h * 2^(k/4) in [h/2, upper]"""
    h = float(np.min(spec.widths))
    if upper < 0.5 * h * (1 - _LATTICE_SLACK):
        return np.array([0.0])
    k_low = -4
    k_high = _lattice_exponent(spec, upper)
    ks = np.arange(k_low, k_high + 1)
    return np.concatenate([[0.0], h * RADIUS_RATIO ** ks])


def snap_radius(spec: GridSpec, r: float) -> float:
    """Largest lattice radius not above r (0 below h/2)"""
    return float(radius_lattice(spec, r)[-1])


def snap_radius_up(spec: GridSpec, r: float) -> float:
    """Smallest lattice radius not below r"""
    if r <= 0:
        return 0.0
    h = float(np.min(spec.widths))
    if r <= 0.5 * h:
        return 0.5 * h
    k = math.ceil(math.log(r / h) / math.log(RADIUS_RATIO) - _LATTICE_SLACK)
    return float(h * RADIUS_RATIO ** k)


def maximal_radii(spec: GridSpec) -> np.ndarray:
    return radius_lattice(spec, spec.diameter)


def sharp_radii(spec: GridSpec, r: float) -> np.ndarray:
    return radius_lattice(spec, r)


# Ball/cell intersection

def cell_fractions(rel: np.ndarray, widths: np.ndarray, s: float) -> np.ndarray:
    """Fraction of each cell (center offset rel from the ball center) inside B_s"""
    half = 0.5 * widths
    far = np.linalg.norm(np.abs(rel) + half, axis=-1)
    near = np.linalg.norm(np.maximum(np.abs(rel) - half, 0.0), axis=-1)
    frac = np.where(far <= s, 1.0, 0.0)
    partial = (far > s) & (near < s)
    if np.any(partial):
        d = rel.shape[-1]
        ticks = (np.arange(SUBSAMPLES) + 0.5) / SUBSAMPLES - 0.5
        sub = np.stack(np.meshgrid(*([ticks] * d), indexing="ij"), axis=-1).reshape(-1, d) * widths
        pts = rel[partial][:, None, :] + sub[None, :, :]
        inside = np.linalg.norm(pts, axis=-1) <= s
        frac[partial] = inside.mean(axis=1)
    return frac


def ball_kernel(spec: GridSpec, s: float) -> np.ndarray:
    """Dense kernel of cell fractions for a ball centered on a cell center"""
    widths = spec.widths
    reach = [int(math.ceil(s / w)) for w in widths]
    axes = [np.arange(-k, k + 1) * w for k, w in zip(reach, widths)]
    rel = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1)
    return cell_fractions(rel, widths, s)


# Grid operators

def _stack(g: Components) -> Tuple[GridSpec, np.ndarray, np.ndarray]:
    """(spec, values with a trailing component axis, fill vector)"""
    fields = [g] if isinstance(g, ScalarGridField) else list(g)
    spec = fields[0].spec
    values = np.stack([f.values for f in fields], axis=-1)
    fill = np.array([f.fill for f in fields], dtype=float)
    return spec, values, fill


def _pad(values: np.ndarray, reach: Sequence[int], fill: np.ndarray) -> np.ndarray:
    padded = np.empty(tuple(n + 2 * k for n, k in zip(values.shape[:-1], reach)) + values.shape[-1:])
    padded[...] = fill
    inner = tuple(slice(k, k + n) for n, k in zip(values.shape[:-1], reach))
    padded[inner] = values
    return padded


def _norm(values: np.ndarray) -> np.ndarray:
    return values[..., 0] if values.shape[-1] == 1 else np.linalg.norm(values, axis=-1)


def _abs_average(spec: GridSpec, values: np.ndarray, fill: np.ndarray, s: float) -> np.ndarray:
    """Average of |g| over B_s(cell center) at every cell"""
    magnitude = np.abs(_norm(values))
    if s == 0.0:
        return magnitude
    kernel = ball_kernel(spec, s)
    total = float(np.sum(kernel))
    if total == 0.0:
        return magnitude
    reach = [k // 2 for k in kernel.shape]
    padded = _pad(magnitude[..., None], reach, np.array([abs(float(_norm(fill[None, :])[0]))]))[..., 0]
    conv = fftconvolve(padded, kernel, mode="valid")
    return np.maximum(conv, 0.0) / total


def _oscillation_average(spec: GridSpec, values: np.ndarray, fill: np.ndarray, s: float) -> np.ndarray:
    """Average of |g(y) - g(x)| over B_s(x), by direct shifted sums"""
    if s == 0.0:
        return np.zeros(values.shape[:-1])
    kernel = ball_kernel(spec, s)
    total = float(np.sum(kernel))
    if total == 0.0:
        return np.zeros(values.shape[:-1])
    reach = [k // 2 for k in kernel.shape]
    padded = _pad(values, reach, fill)
    acc = np.zeros(values.shape[:-1])
    shape = values.shape[:-1]
    for offset in np.argwhere(kernel > 0):
        window = tuple(slice(o, o + n) for o, n in zip(offset, shape))
        acc += kernel[tuple(offset)] * _norm(padded[window] - values)
    return acc / total


def maximal_grid(g: Components, radii: Optional[Sequence[float]] = None) -> np.ndarray:
    """g* at every cell center"""
    spec, values, fill = _stack(g)
    radii = maximal_radii(spec) if radii is None else radii
    out = np.abs(_norm(values))
    for s in radii:
        out = np.maximum(out, _abs_average(spec, values, fill, float(s)))
    return out


def sharp_maximal_stack(g: Components, radii: Sequence[float]) -> np.ndarray:
    """Running sup over the given increasing radii: entry k is g#_{radii[k]}"""
    spec, values, fill = _stack(g)
    point = np.abs(_norm(values))
    best = np.zeros(values.shape[:-1])
    out = []
    for s in radii:
        s = float(s)
        if s > 0.0:
            osc = _oscillation_average(spec, values, fill, s)
            osc = np.minimum(osc, _abs_average(spec, values, fill, s) + point)
            best = np.maximum(best, osc)
        out.append(best.copy())
    return np.stack(out)


def sharp_maximal_grid(g: Components, r: float) -> np.ndarray:
    spec = _stack(g)[0]
    return sharp_maximal_stack(g, sharp_radii(spec, r))[-1]


# Pointwise queries

def _point_average(spec: GridSpec, values: np.ndarray, fill: np.ndarray, x: np.ndarray,
                   s: float, centered: bool) -> float:
    widths = spec.widths
    lo = np.array([b[0] for b in spec.bounds])
    base = spec.cell_index(x[None, :])[0]
    gx = values[tuple(base)]
    if s == 0.0:
        return 0.0 if centered else float(np.abs(_norm(gx[None, :])[0]))
    lo_idx = np.floor((x - s - lo) / widths).astype(int)
    hi_idx = np.floor((x + s - lo) / widths).astype(int)
    axes = [np.arange(a, b + 1) for a, b in zip(lo_idx, hi_idx)]
    idx = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, spec.dim)
    centers = lo + (idx + 0.5) * widths
    frac = cell_fractions(centers - x, widths, s)
    total = float(np.sum(frac))
    if total == 0.0:
        return 0.0 if centered else float(np.abs(_norm(gx[None, :])[0]))
    inside = np.all((idx >= 0) & (idx < np.array(spec.resolution)), axis=1)
    samples = np.broadcast_to(fill, (len(idx), values.shape[-1])).copy()
    samples[inside] = values[tuple(idx[inside].T)]
    if centered:
        samples = samples - gx
    return float(np.sum(frac * np.abs(_norm(samples))) / total)


def _check_point(spec: GridSpec, x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.shape != (spec.dim,) or not spec.inside(x):
        raise OutOfBounds(f"point {x} outside the grid bounds")
    return x


def maximal_function(g: Components, x, radii: Optional[Sequence[float]] = None) -> float:
    """g*(x): sup over the radius schedule of ball averages of |g|"""
    spec, values, fill = _stack(g)
    x = _check_point(spec, x)
    radii = maximal_radii(spec) if radii is None else radii
    return max(_point_average(spec, values, fill, x, float(s), False) for s in radii)


def sharp_maximal_function(g: Components, x, r: float,
                           radii: Optional[Sequence[float]] = None) -> float:
    """g#_r(x): sup over radii in [0, r] of centered oscillation averages"""
    spec, values, fill = _stack(g)
    x = _check_point(spec, x)
    radii = sharp_radii(spec, r) if radii is None else [s for s in radii if s <= r]
    point = _point_average(spec, values, fill, x, 0.0, False)
    best = 0.0
    for s in radii:
        s = float(s)
        if s == 0.0:
            continue
        osc = _point_average(spec, values, fill, x, s, True)
        best = max(best, min(osc, _point_average(spec, values, fill, x, s, False) + point))
    return best


@dataclass
class DecayReport:
    radii: np.ndarray
    norms: np.ndarray
    p: float
    monotone: bool
    strictly_decreasing: bool
    ratios: np.ndarray


def sharp_maximal_decay(g: Components, p: float, radii: Sequence[float],
                        interior: bool = False) -> DecayReport:
    """Grid L^p norms of g#_r along a decreasing radius list"""
    if not p > 1.0:
        raise ValueError("exponent must exceed 1")
    spec = _stack(g)[0]
    snapped = np.array([snap_radius(spec, float(r)) for r in radii])
    mask = None
    if interior:
        centers = spec.centers()
        margin = float(np.max(snapped))
        lo = np.array([b[0] for b in spec.bounds]) + margin
        hi = np.array([b[1] for b in spec.bounds]) - margin
        mask = np.all((centers > lo) & (centers < hi), axis=-1)
    schedule = sharp_radii(spec, float(np.max(snapped)))
    stack = sharp_maximal_stack(g, schedule)
    norms = []
    for r in snapped:
        k = int(np.searchsorted(schedule, r * (1 + _LATTICE_SLACK), side="right")) - 1
        values = stack[max(k, 0)]
        vals = np.abs(values if mask is None else values[mask])
        norms.append(float((np.sum(vals ** p) * spec.cell_volume) ** (1.0 / p)))
    norms = np.asarray(norms)
    diffs = np.diff(norms)
    with np.errstate(divide="ignore", invalid="ignore"):
        ratios = np.where(norms[:-1] > 0, norms[1:] / norms[:-1], 0.0)
    return DecayReport(snapped, norms, p, bool(np.all(diffs <= 0)), bool(np.all(diffs < 0)), ratios)
