#!/usr/bin/env python3
"""
Sobolev Audit
Pointwise Sobolev inequalities checked on sampled point pairs:

    first_sharp    |f(y) - f(x) - Df(x)(y-x)|  vs  |y-x| (|Df|#_|y-x|(y) + |Df|#_|y-x|(x))
    first_star     |f(y) - f(x)|               vs  |y-x| (|Df|*(y) + |Df|*(x))
    second         second-order Taylor remainder vs |y-x|^2 (|D2f|*(y) + |D2f|*(x))
    second_linear  first-order remainder         vs |y-x|^2 (|D2f|*(y) + |D2f|*(x))

The ratio LHS/RHS per pair estimates the constant hidden in the inequality.
"""

import logging
from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np

from .errors import ZeroDenominator
from .field_core import ScalarFunctionSpec, SingularSet
from .grids import GridSpec, ScalarGridField
from .maximal import maximal_grid, sharp_maximal_stack, sharp_radii, snap_radius_up
from .streams import draw_blocks

logger = logging.getLogger("flowlab-sobolev")

FIRST_SHARP = "first_sharp"
FIRST_STAR = "first_star"
SECOND = "second"
SECOND_LINEAR = "second_linear"
ORDERS = (FIRST_SHARP, FIRST_STAR, SECOND, SECOND_LINEAR)


@dataclass
class AuditReport:
    order: str
    lhs: np.ndarray
    rhs: np.ndarray
    ratios: np.ndarray
    max_ratio: float
    mean_ratio: float
    skipped: int
    excluded: int
    max_lhs: float

    @property
    def pair_count(self) -> int:
        return len(self.lhs)


def gradient_grids(f: ScalarFunctionSpec, spec: GridSpec):
    centers = spec.centers()
    grad = f.grad(centers)
    return [ScalarGridField(spec, grad[..., i]) for i in range(spec.dim)]


def hessian_norm_grid(f: ScalarFunctionSpec, spec: GridSpec) -> ScalarGridField:
    hess = f.hess(spec.centers())
    return ScalarGridField(spec, np.linalg.norm(hess, axis=(-2, -1)))


def sample_point_pairs(spec: GridSpec, n: int, seed: int, max_distance: float) -> Tuple[np.ndarray, np.ndarray]:
    """x uniform in the box shrunk by max_distance, y = x + r u with r in (0, max_distance]"""
    lo = np.array([b[0] for b in spec.bounds]) + max_distance
    hi = np.array([b[1] for b in spec.bounds]) - max_distance
    if np.any(lo >= hi):
        raise ValueError("max_distance too large for the grid")
    d = spec.dim

    def draw(rng, size):
        x = lo + (hi - lo) * rng.random((size, d))
        u = rng.standard_normal((size, d))
        u /= np.linalg.norm(u, axis=1, keepdims=True)
        r = max_distance * (1.0 - rng.random(size))
        return np.concatenate([x, x + r[:, None] * u], axis=1)

    both = draw_blocks(seed, n, "sobolev-pairs", draw)
    return both[:, :d], both[:, d:]


def _lookup(spec: GridSpec, grid_values: np.ndarray, points: np.ndarray) -> np.ndarray:
    idx = spec.cell_index(points)
    return grid_values[tuple(idx.T)]


def _sharp_at(spec: GridSpec, stack: np.ndarray, schedule: np.ndarray, points: np.ndarray,
              radii: np.ndarray) -> np.ndarray:
    idx = spec.cell_index(points)
    k = np.searchsorted(schedule, radii * (1 - 1e-9), side="left")
    k = np.minimum(k, len(schedule) - 1)
    return stack[(k,) + tuple(idx.T)]


def sobolev_pointwise_audit(f: ScalarFunctionSpec, order: str, xs: np.ndarray, ys: np.ndarray,
                            spec: GridSpec, exclusion: Optional[SingularSet] = None) -> AuditReport:
    """Ratios LHS/RHS of the selected pointwise inequality over the pairs (xs[i], ys[i])"""
    if order not in ORDERS:
        raise ValueError(f"unknown order {order!r}; expected one of {ORDERS}")
    xs = np.atleast_2d(np.asarray(xs, dtype=float))
    ys = np.atleast_2d(np.asarray(ys, dtype=float))
    keep = np.ones(len(xs), dtype=bool)
    if exclusion is not None:
        keep &= ~exclusion.in_tube(xs) & ~exclusion.in_tube(ys)
    excluded = int(np.sum(~keep))
    xs, ys = xs[keep], ys[keep]

    step = ys - xs
    dist = np.linalg.norm(step, axis=1)
    fx, fy = f(xs), f(ys)
    linear = np.einsum("ij,ij->i", f.grad(xs), step)
    if order == FIRST_STAR:
        lhs = np.abs(fy - fx)
    elif order == SECOND:
        quad = 0.5 * np.einsum("ij,ijk,ik->i", step, f.hess(xs), step)
        lhs = np.abs(fy - fx - linear - quad)
    else:
        lhs = np.abs(fy - fx - linear)

    if order == FIRST_STAR:
        star = maximal_grid(gradient_grids(f, spec))
        rhs = dist * (_lookup(spec, star, ys) + _lookup(spec, star, xs))
    elif order == FIRST_SHARP:
        radii = np.array([snap_radius_up(spec, r) for r in dist])
        schedule = sharp_radii(spec, float(np.max(radii, initial=0.0)))
        stack = sharp_maximal_stack(gradient_grids(f, spec), schedule)
        rhs = dist * (_sharp_at(spec, stack, schedule, ys, radii) +
                      _sharp_at(spec, stack, schedule, xs, radii))
    else:
        star = maximal_grid(hessian_norm_grid(f, spec))
        rhs = dist ** 2 * (_lookup(spec, star, ys) + _lookup(spec, star, xs))

    valid = rhs > 0
    skipped = int(np.sum(~valid))
    if skipped:
        logger.info(f"{order}: {skipped} pairs skipped on a zero right-hand side")
    if not np.any(valid) and np.any(lhs > 1e-12):
        raise ZeroDenominator(f"{order}: every right-hand side vanished", order=order)
    ratios = lhs[valid] / rhs[valid]
    return AuditReport(order, lhs, rhs, ratios,
                       float(np.max(ratios, initial=0.0)),
                       float(np.mean(ratios)) if len(ratios) else 0.0,
                       skipped, excluded, float(np.max(lhs, initial=0.0)))
