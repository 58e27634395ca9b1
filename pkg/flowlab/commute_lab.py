#!/usr/bin/env python3
"""
Commute Lab
Flow-commutator defects F2_t(F1_s(x)) - F1_s(F2_t(x)) for single points and
Monte-Carlo tables over (s, t) grids.
"""

import logging
from dataclasses import dataclass
from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np

from .errors import FlowUndefined
from .field_catalog import pair_oracle
from .field_core import FieldPairSpec
from .flow_engine import ANALYTIC, DEFAULT_TOL, FlowResult, flow_points
from .measure_lab import MeasureSource, ParticleEnsemble, sample_reference_measure

logger = logging.getLogger("flowlab-commute")

DEFAULT_THRESHOLD = 1e-4
LEG_NAMES = ("F1_s(x)", "F2_t(F1_s(x))", "F2_t(x)", "F1_s(F2_t(x))")


@dataclass
class CommutatorDefectSample:
    x: np.ndarray
    s: float
    t: float
    forward: np.ndarray
    reverse: np.ndarray
    defect: np.ndarray
    crossed: bool


@dataclass
class DefectBatch:
    points: np.ndarray
    forward: np.ndarray
    reverse: np.ndarray
    defect: np.ndarray
    crossed: np.ndarray
    ok: np.ndarray
    failed_leg: np.ndarray

    @property
    def magnitude(self) -> np.ndarray:
        return np.linalg.norm(self.defect, axis=1)


def flow_leg(pair: FieldPairSpec, which: int, points: np.ndarray, duration: float,
             method: str = ANALYTIC, tol: float = DEFAULT_TOL) -> FlowResult:
    field = pair.component(which)
    oracle = pair_oracle(pair, which) if method == ANALYTIC else None
    if method == ANALYTIC and oracle is None:
        raise FlowUndefined(f"{pair.name} has no closed-form flow for V{which}",
                            leg=f"V{which}")
    return flow_points(field, points, duration, tol, method, oracle)


def compose_flows(pair: FieldPairSpec, points: np.ndarray, s: float, t: float,
                  method: str = ANALYTIC, tol: float = DEFAULT_TOL) -> FlowResult:
    """X_{s,t}(x) = F2_t(F1_s(x))"""
    first = flow_leg(pair, 1, points, s, method, tol)
    second = flow_leg(pair, 2, first.points, t, method, tol)
    ok = first.ok & second.ok
    return FlowResult(second.points, ok, first.crossed | second.crossed,
                      np.where(first.ok, second.status, first.status))


def commutator_defects(pair: FieldPairSpec, points, s: float, t: float, method: str = ANALYTIC,
                       tol: float = DEFAULT_TOL) -> DefectBatch:
    points = np.atleast_2d(np.asarray(points, dtype=float))
    a = flow_leg(pair, 1, points, s, method, tol)
    forward = flow_leg(pair, 2, a.points, t, method, tol)
    b = flow_leg(pair, 2, points, t, method, tol)
    reverse = flow_leg(pair, 1, b.points, s, method, tol)

    failed = np.full(len(points), -1)
    for leg, result in reversed(list(enumerate((a, forward, b, reverse)))):
        failed = np.where(~result.ok, leg, failed)
    ok = failed < 0
    defect = np.where(ok[:, None], forward.points - reverse.points, np.nan)
    crossed = a.crossed | forward.crossed | b.crossed | reverse.crossed
    return DefectBatch(points, forward.points, reverse.points, defect, crossed, ok, failed)


def commutator_defect(pair: FieldPairSpec, x, s: float, t: float, method: str = ANALYTIC,
                      tol: float = DEFAULT_TOL) -> CommutatorDefectSample:
    batch = commutator_defects(pair, np.asarray(x, dtype=float)[None, :], s, t, method, tol)
    if not batch.ok[0]:
        leg = LEG_NAMES[int(batch.failed_leg[0])]
        raise FlowUndefined(f"{pair.name}: flow leg {leg} failed", leg=leg)
    return CommutatorDefectSample(batch.points[0], float(s), float(t), batch.forward[0],
                                  batch.reverse[0], batch.defect[0], bool(batch.crossed[0]))


@dataclass
class DefectRow:
    s: float
    t: float
    fraction_above: float
    mean_defect: float
    max_defect: float
    mean_component: Tuple[float, ...]
    crossed_fraction: float
    lost: int

    def as_row(self) -> list:
        return [self.s, self.t, self.fraction_above, self.mean_defect, self.max_defect,
                *self.mean_component, self.crossed_fraction, self.lost]


def defect_header(dim: int) -> List[str]:
    return (["s", "t", "fraction_above", "mean_defect", "max_defect"] +
            [f"mean_abs_defect_{i + 1}" for i in range(dim)] + ["crossed_fraction", "lost"])


def summarize_defects(batch: DefectBatch, s: float, t: float, threshold: float) -> DefectRow:
    ok = batch.ok
    mags = batch.magnitude[ok]
    count = max(int(np.sum(ok)), 1)
    comps = np.abs(batch.defect[ok])
    return DefectRow(
        float(s), float(t),
        float(np.sum(mags > threshold)) / count,
        float(np.sum(mags)) / count,
        float(np.max(mags, initial=0.0)),
        tuple(float(v) for v in (np.sum(comps, axis=0) / count)),
        float(np.sum(batch.crossed[ok])) / count,
        int(np.sum(~ok)),
    )


DefectRunner = Callable[[FieldPairSpec, np.ndarray, float, float], DefectBatch]


def region_ensemble(pair: FieldPairSpec, region, n: int, seed: int) -> ParticleEnsemble:
    """Uniform samples in a box region, off the pair's exclusion tubes"""
    exclusion = pair.first.singular_set or pair.second.singular_set
    return sample_reference_measure(MeasureSource.uniform_box(region, exclusion), n, seed)


def defect_statistics(pair: FieldPairSpec, region, s_grid: Sequence[float], t_grid: Sequence[float],
                      n: int, seed: int, threshold: float = DEFAULT_THRESHOLD,
                      method: str = ANALYTIC, tol: float = DEFAULT_TOL,
                      runner: Optional[DefectRunner] = None) -> List[DefectRow]:
    """Monte-Carlo defect table over the (s, t) grid on one seeded ensemble"""
    ens = region_ensemble(pair, region, n, seed)
    run = runner or (lambda p, pts, s, t: commutator_defects(p, pts, s, t, method, tol))
    rows = []
    for s in s_grid:
        for t in t_grid:
            row = summarize_defects(run(pair, ens.points, float(s), float(t)), s, t, threshold)
            logger.info(f"{pair.name} s={s} t={t}: mean |defect| {row.mean_defect:.6g}, "
                        f"fraction above {threshold}: {row.fraction_above:.3f}")
            rows.append(row)
    return rows
