#!/usr/bin/env python3
"""
Concentration and Stability
Trajectory ensembles (measures on path space), the first-order displacement
residual of an ensemble against a field with its omega bound, dyadic
partition sums, the logarithmic functional phi_delta and the stability
audit comparing ensembles driven by two fields.

Field norms are grid quadratures over a box; the ensemble mass that leaves
the box is reported alongside.
"""

import logging
import math
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from .errors import ExponentMismatch, NonpositiveDelta, WindowMismatch
from .field_core import VectorFieldSpec, central_difference_jacobian
from .flow_engine import DEFAULT_TOL, TimeWindow, integrate_ensemble
from .grids import GridSpec
from .measure_lab import ParticleEnsemble, histogram_density
from .reporting import ResidualKind, ResidualReport
from .residuals import weighted_norm

logger = logging.getLogger("flowlab-concentration")

DEFAULT_BOX = (-8.0, 8.0)
DEFAULT_RESOLUTION = 64
DEFAULT_TIME_NODES = 8
DENSITY_CELLS = 16
_TIME_SLACK = 1e-12


@dataclass(frozen=True)
class NormGrid:
    """Box and per-axis resolution for field-norm quadrature"""
    low: float = DEFAULT_BOX[0]
    high: float = DEFAULT_BOX[1]
    resolution: int = DEFAULT_RESOLUTION

    def spec(self, dim: int) -> GridSpec:
        return GridSpec.cube(self.low, self.high, self.resolution, dim)

    def density_spec(self, dim: int) -> GridSpec:
        """Same box, at most DENSITY_CELLS bins per axis for histogram estimates"""
        return GridSpec.cube(self.low, self.high, min(self.resolution, DENSITY_CELLS), dim)


@dataclass
class TrajectoryEnsemble:
    times: np.ndarray
    states: np.ndarray
    weights: np.ndarray
    seed: Optional[int]
    window: TimeWindow
    field_name: str = ""

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float)
        if self.states.shape[:2] != (len(self.weights), len(self.times)):
            raise ValueError("states must be (trajectories, times, dim)")
        if self.times[0] > self.window.a + _TIME_SLACK or self.times[-1] < self.window.b - _TIME_SLACK:
            raise WindowMismatch("trajectory nodes do not cover the window")

    def __len__(self) -> int:
        return len(self.weights)

    @property
    def dim(self) -> int:
        return self.states.shape[2]

    def states_at(self, tau: float) -> np.ndarray:
        """(n, d) states at time tau, linear between nodes"""
        if not self.times[0] - _TIME_SLACK <= tau <= self.times[-1] + _TIME_SLACK:
            raise ValueError(f"time {tau} outside the ensemble window")
        k = int(np.searchsorted(self.times, tau))
        if k < len(self.times) and abs(self.times[k] - tau) <= _TIME_SLACK:
            return self.states[:, k, :]
        k = min(max(k, 1), len(self.times) - 1)
        t0, t1 = self.times[k - 1], self.times[k]
        u = (tau - t0) / (t1 - t0)
        return (1 - u) * self.states[:, k - 1, :] + u * self.states[:, k, :]

    def outside_fraction(self, grid: NormGrid) -> float:
        """Mass share of trajectories that leave the quadrature box at some node"""
        out = np.any((self.states < grid.low) | (self.states > grid.high), axis=(1, 2))
        total = float(np.sum(self.weights))
        return float(np.sum(self.weights[out])) / total if total > 0 else 0.0


def _with_window(window: TimeWindow, t_eval: Optional[Sequence[float]]) -> np.ndarray:
    nodes = [] if t_eval is None else [float(t) for t in t_eval]
    return np.unique(np.asarray(nodes + [window.a, window.b]))


def trajectory_ensemble(field: VectorFieldSpec, ens: ParticleEnsemble, window: TimeWindow,
                        t_eval: Optional[Sequence[float]] = None,
                        tol: float = DEFAULT_TOL) -> TrajectoryEnsemble:
    """Integral curves of the field from the ensemble points at window.a"""
    nodes = _with_window(window, t_eval)
    batch = integrate_ensemble(field, ens.points, window, nodes, tol)
    ok = batch.ok
    if not np.all(ok):
        logger.warning(f"{field.name}: dropped {int(np.sum(~ok))} of {len(ok)} trajectories")
    return TrajectoryEnsemble(batch.stop_times, batch.states[ok], ens.weights[ok], ens.seed,
                              window, field.name)


def curve_ensemble(curve: Callable[[np.ndarray, float], np.ndarray], ens: ParticleEnsemble,
                   window: TimeWindow, t_eval: Optional[Sequence[float]] = None,
                   name: str = "curves") -> TrajectoryEnsemble:
    """Ensemble of arbitrary curves tau -> curve(x, tau), one per ensemble point"""
    nodes = _with_window(window, t_eval)
    states = np.stack([np.asarray(curve(ens.points, float(t)), dtype=float) for t in nodes], axis=1)
    return TrajectoryEnsemble(nodes, states, ens.weights.copy(), ens.seed, window, name)


def ensemble_density_bound(traj: TrajectoryEnsemble, times: Optional[Sequence[float]] = None,
                           grid: Optional[NormGrid] = None) -> float:
    """Histogram estimate of C in e_tau # eta <= C L^d, as a sup over the sampled times
    on the box of the norm grid"""
    spec = (grid or NormGrid()).density_spec(traj.dim)
    times = traj.times if times is None else times
    best = 0.0
    for tau in times:
        density = histogram_density(traj.states_at(float(tau)), traj.weights, spec)
        best = max(best, float(np.max(density.values)))
    return best


def check_exponents(p0: float, p1: float, q: float) -> None:
    if min(p0, p1, q) < 1.0:
        raise ExponentMismatch("exponents must be at least 1", p0=p0, p1=p1, q=q)
    if abs(1.0 / p0 + 1.0 / p1 - 1.0 / q) > 1e-12:
        raise ExponentMismatch(f"1/p0 + 1/p1 must equal 1/q (got {p0}, {p1}, {q})", p0=p0, p1=p1, q=q)


# Grid quadrature of field norms

def _field_sample(f: VectorFieldSpec, points: np.ndarray, tau: float, derivative: bool) -> np.ndarray:
    if derivative:
        if f.jacobian_analytic is not None:
            jac = np.asarray(f.jacobian_analytic(points, tau), dtype=float)
            jac = np.broadcast_to(jac, points.shape + (f.dim,))
        else:
            jac = central_difference_jacobian(f, points, tau)
        return jac.reshape(len(points), -1)
    return np.broadcast_to(np.asarray(f.eval(points, tau), dtype=float), points.shape)


def _combination(fields: Tuple[VectorFieldSpec, ...], signs: Tuple[float, ...], points: np.ndarray,
                 tau: float, derivative: bool) -> np.ndarray:
    total = sum(sign * _field_sample(f, points, tau, derivative) for f, sign in zip(fields, signs))
    for f in fields:
        if f.singular_set is not None:
            total = np.where(f.singular_set.in_tube(points)[:, None], 0.0, total)
    return total


def _grid_lp(values: np.ndarray, p: float, cell_volume: float) -> float:
    mags = np.linalg.norm(values, axis=1)
    if math.isinf(p):
        return float(np.max(mags, initial=0.0))
    return float((np.sum(mags ** p) * cell_volume) ** (1.0 / p))


@lru_cache(maxsize=128)
def _grid_norm(fields: Tuple[VectorFieldSpec, ...], signs: Tuple[float, ...], tau: float, p: float,
               grid: NormGrid, derivative: bool) -> float:
    spec = grid.spec(fields[0].dim)
    points = spec.centers().reshape(-1, spec.dim)
    return _grid_lp(_combination(fields, signs, points, tau, derivative), p, spec.cell_volume)


def norm_of_integral(fields: Sequence[VectorFieldSpec], signs: Sequence[float], s: float, t: float,
                     p: float, grid: NormGrid, derivative: bool = False,
                     nodes: int = DEFAULT_TIME_NODES) -> float:
    """|| int_s^t sum_k sign_k V^k_tau dtau ||_p over the grid box"""
    if t == s:
        return 0.0
    fields, signs = tuple(fields), tuple(float(v) for v in signs)
    if not any(f.time_dependent for f in fields):
        return abs(t - s) * _grid_norm(fields, signs, float(s), float(p), grid, derivative)
    spec = grid.spec(fields[0].dim)
    points = spec.centers().reshape(-1, spec.dim)
    x, w = np.polynomial.legendre.leggauss(nodes)
    half = 0.5 * (t - s)
    integral = sum(half * wi * _combination(fields, signs, points, s + half * (xi + 1), derivative)
                   for xi, wi in zip(x, w))
    return _grid_lp(integral, p, spec.cell_volume)


def integral_of_norm(f: VectorFieldSpec, s: float, t: float, p: float, grid: NormGrid,
                     derivative: bool = False, nodes: int = DEFAULT_TIME_NODES) -> float:
    """int_s^t ||V_tau||_p dtau (||DV_tau||_p with derivative=True)"""
    if t == s:
        return 0.0
    if not f.time_dependent:
        return abs(t - s) * _grid_norm((f,), (1.0,), float(s), float(p), grid, derivative)
    x, w = np.polynomial.legendre.leggauss(nodes)
    half = 0.5 * abs(t - s)
    lo = min(s, t)
    return sum(half * wi * _grid_norm((f,), (1.0,), float(lo + half * (xi + 1)), float(p), grid, derivative)
               for xi, wi in zip(x, w))


def _field_integral_at(f: VectorFieldSpec, points: np.ndarray, s: float, t: float,
                       nodes: int) -> np.ndarray:
    """(int_s^t V_tau dtau)(points)"""
    if not f.time_dependent:
        return (t - s) * _field_sample(f, points, s, False)
    x, w = np.polynomial.legendre.leggauss(nodes)
    half = 0.5 * (t - s)
    return sum(half * wi * _field_sample(f, points, s + half * (xi + 1), False) for xi, wi in zip(x, w))


@dataclass
class ConcentrationResult:
    lhs: float
    omega_bound: float
    C: float
    norm_field: float
    norm_jacobian: float
    outside_fraction: float
    params: Dict[str, float] = field(default_factory=dict)

    @property
    def ratio(self) -> float:
        return self.lhs / self.omega_bound if self.omega_bound > 0 else math.inf if self.lhs > 0 else 0.0

    def to_report(self, seed: Optional[int], sample_count: int) -> ResidualReport:
        extra = {"omega_bound": self.omega_bound, "C": self.C, "norm_field": self.norm_field,
                 "norm_jacobian": self.norm_jacobian, "outside_fraction": self.outside_fraction}
        return ResidualReport(ResidualKind.CONCENTRATION, dict(self.params), self.lhs,
                              sample_count, seed, extra)


def concentration_residual(traj: TrajectoryEnsemble, f: VectorFieldSpec, s: float, t: float,
                           p0: float, p1: float, q: float, C: Optional[float] = None,
                           grid: Optional[NormGrid] = None,
                           nodes: int = DEFAULT_TIME_NODES) -> ConcentrationResult:
    """||theta_t - theta_s - (int_s^t V_tau dtau)(theta_s)||_{L^q(eta)} against
    C^(1/q) (int ||V||_p0)(int ||DV||_p1)"""
    check_exponents(p0, p1, q)
    grid = grid or NormGrid()
    theta_s = traj.states_at(s)
    theta_t = traj.states_at(t)
    residual = theta_t - theta_s - _field_integral_at(f, theta_s, s, t, nodes)
    lhs = weighted_norm(residual, traj.weights, q)

    C = ensemble_density_bound(traj, grid=grid) if C is None else float(C)
    norm_v = integral_of_norm(f, s, t, p0, grid, False, nodes)
    norm_dv = integral_of_norm(f, s, t, p1, grid, True, nodes)
    omega = C ** (1.0 / q) * norm_v * norm_dv
    params = {"field": f.name, "s": float(s), "t": float(t), "p0": p0, "p1": p1, "q": q}
    logger.debug(f"{f.name} [{s}, {t}]: lhs {lhs:.6g}, omega {omega:.6g}")
    return ConcentrationResult(lhs, omega, C, norm_v, norm_dv, traj.outside_fraction(grid), params)


@dataclass
class VariationRow:
    level: int
    mesh: float
    lhs_sum: float
    omega_sum: float

    def as_row(self) -> list:
        return [self.level, self.mesh, self.lhs_sum, self.omega_sum]


def partition_variation(traj: TrajectoryEnsemble, f: VectorFieldSpec, a: float, b: float,
                        levels: Sequence[int], p0: float, p1: float, q: float,
                        C: Optional[float] = None, grid: Optional[NormGrid] = None) -> List[VariationRow]:
    """Partition sums of the residual and of omega over dyadic partitions of [a, b]"""
    check_exponents(p0, p1, q)
    C = ensemble_density_bound(traj, grid=grid) if C is None else float(C)
    rows = []
    for level in levels:
        cuts = np.linspace(a, b, 2 ** int(level) + 1)
        lhs_sum = omega_sum = 0.0
        for lo, hi in zip(cuts[:-1], cuts[1:]):
            part = concentration_residual(traj, f, float(lo), float(hi), p0, p1, q, C, grid)
            lhs_sum += part.lhs
            omega_sum += part.omega_bound
        rows.append(VariationRow(int(level), float(cuts[1] - cuts[0]), lhs_sum, omega_sum))
        logger.info(f"{f.name} level {level}: residual sum {lhs_sum:.6g}, omega sum {omega_sum:.6g}")
    return rows


def phi_delta(x, delta) -> np.ndarray:
    """log(1 + |x| / delta), |x| the Euclidean norm along the last axis"""
    delta = np.asarray(delta, dtype=float)
    if np.any(delta <= 0):
        raise NonpositiveDelta("delta must be positive", delta=float(np.min(delta)))
    x = np.asarray(x, dtype=float)
    return np.log1p(np.linalg.norm(x, axis=-1) / delta)


def phi_delta_violations(xs, ys, deltas) -> int:
    """Count of pairs where phi(y) > phi(x) + |y - x| / (delta + |x|)"""
    xs = np.asarray(xs, dtype=float)
    ys = np.asarray(ys, dtype=float)
    deltas = np.asarray(deltas, dtype=float)
    bound = phi_delta(xs, deltas) + np.linalg.norm(ys - xs, axis=-1) / (deltas + np.linalg.norm(xs, axis=-1))
    return int(np.sum(phi_delta(ys, deltas) > bound))


@dataclass
class StabilityAudit:
    lhs: float
    terms: Dict[str, float]
    partition: np.ndarray
    delta: float

    @property
    def rhs_total(self) -> float:
        return float(sum(self.terms.values()))

    @property
    def ratio(self) -> float:
        total = self.rhs_total
        return self.lhs / total if total > 0 else (math.inf if self.lhs > 0 else 0.0)

    def to_report(self, seed: Optional[int], sample_count: int, params: dict) -> ResidualReport:
        extra = {**self.terms, "rhs_total": self.rhs_total, "ratio": self.ratio}
        return ResidualReport(ResidualKind.STABILITY, params, self.lhs, sample_count, seed, extra)


def _coupled_states(ens1: TrajectoryEnsemble, ens2: TrajectoryEnsemble, tau: float,
                    coupling: Optional[np.ndarray]) -> np.ndarray:
    first = ens1.states_at(tau)
    second = ens2.states_at(tau)
    return first - (second if coupling is None else second[coupling])


def stability_bound_audit(ens1: TrajectoryEnsemble, ens2: TrajectoryEnsemble, partition: Sequence[float],
                          delta: float, p0: float, p1: float, q: float,
                          field1: VectorFieldSpec, field2: VectorFieldSpec,
                          coupling: Optional[Sequence[int]] = None,
                          C1: Optional[float] = None, C2: Optional[float] = None,
                          grid: Optional[NormGrid] = None) -> StabilityAudit:
    """Running sup of phi_delta between coupled ensembles against its four-term bound"""
    check_exponents(p0, p1, q)
    if delta <= 0:
        raise NonpositiveDelta("delta must be positive", delta=delta)
    if ens1.window != ens2.window:
        raise WindowMismatch("ensembles live on different windows")
    times = np.asarray(partition, dtype=float)
    if len(times) < 2 or np.any(np.diff(times) <= 0):
        raise WindowMismatch("partition must be strictly increasing with at least two times")
    if times[0] < ens1.window.a - _TIME_SLACK or times[-1] > ens1.window.b + _TIME_SLACK:
        raise WindowMismatch("partition leaves the ensemble window")
    if coupling is None:
        if len(ens1) != len(ens2):
            raise WindowMismatch("identity coupling needs ensembles of equal size")
        index = None
    else:
        index = np.asarray(coupling, dtype=int)
        if index.shape != (len(ens1),) or np.any(index < 0) or np.any(index >= len(ens2)):
            raise WindowMismatch("coupling must map every first-ensemble trajectory into the second")

    grid = grid or NormGrid()
    running = np.zeros(len(ens1))
    for tau in times:
        running = np.maximum(running, phi_delta(_coupled_states(ens1, ens2, float(tau), index), delta))
    lhs = weighted_norm(running, ens1.weights, q)

    initial = weighted_norm(phi_delta(_coupled_states(ens1, ens2, float(times[0]), index), delta),
                            ens1.weights, q)
    C1 = ensemble_density_bound(ens1, grid=grid) if C1 is None else float(C1)
    C2 = ensemble_density_bound(ens2, grid=grid) if C2 is None else float(C2)
    jacobian_term = field_term = omega_term = 0.0
    for lo, hi in zip(times[:-1], times[1:]):
        lo, hi = float(lo), float(hi)
        jacobian_term += norm_of_integral((field1,), (1.0,), lo, hi, p1, grid, derivative=True)
        field_term += norm_of_integral((field1, field2), (1.0, -1.0), lo, hi, p0, grid)
        for f, C in ((field1, C1), (field2, C2)):
            omega_term += (C ** (1.0 / q) * integral_of_norm(f, lo, hi, p0, grid)
                           * integral_of_norm(f, lo, hi, p1, grid, derivative=True))
    terms = {
        "initial": initial,
        "jacobian": jacobian_term,
        "field_difference": field_term / delta,
        "omega": omega_term / delta,
    }
    logger.info(f"stability {field1.name} vs {field2.name}: lhs {lhs:.6g}, rhs {sum(terms.values()):.6g}")
    return StabilityAudit(lhs, terms, times, float(delta))
