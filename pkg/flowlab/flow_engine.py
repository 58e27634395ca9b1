#!/usr/bin/env python3
"""
Flow Engine
Trajectories and flow maps of catalog fields, closed-form flow oracles for
the helix and graph-foliation families, escape-time and chain-rule checks.
"""

import csv
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, List, Optional, Sequence, Tuple, Union

import numpy as np
from scipy.integrate import quad_vec
from scipy.linalg import expm

from .errors import (BlowUp, FlowUndefined, InvalidRadii, OutputError,
                     QuadratureFailure, StartOnSingularSet, StiffnessFailure)
from .field_core import ScalarFunctionSpec, VectorFieldSpec
from .integrator import BatchResult, IntegratorOptions, RowStatus, integrate_batch
from .reporting import ResidualKind, ResidualReport, format_number
from .streams import block_generator

logger = logging.getLogger("flowlab-engine")

DEFAULT_TOL = 1e-8
DEFAULT_QUADRATURE_TOL = 1e-10
NUMERIC = "numeric"
ANALYTIC = "analytic"


@dataclass(frozen=True)
class TimeWindow:
    a: float
    b: float

    def __post_init__(self):
        if not self.a < self.b:
            raise ValueError(f"time window needs a < b, got [{self.a}, {self.b}]")

    def contains(self, t: float) -> bool:
        return self.a <= t <= self.b


@dataclass(frozen=True)
class Crossing:
    time: float
    point: np.ndarray


@dataclass
class Trajectory:
    times: np.ndarray
    states: np.ndarray
    crossings: List[Crossing] = field(default_factory=list)
    field_name: str = ""
    tolerance_used: float = DEFAULT_TOL

    @property
    def dim(self) -> int:
        return self.states.shape[1]

    def crossing_flags(self) -> np.ndarray:
        flags = np.zeros(len(self.times), dtype=int)
        for c in self.crossings:
            flags[np.searchsorted(self.times, c.time)] = 1
        return flags

    def state_at(self, t: float) -> np.ndarray:
        """State at time t, linear between recorded nodes"""
        if not self.times[0] <= t <= self.times[-1]:
            raise ValueError(f"time {t} outside trajectory span")
        return np.array([np.interp(t, self.times, self.states[:, i]) for i in range(self.dim)])

    def segments(self) -> List[slice]:
        """Index ranges between crossings, each closed on both ends"""
        cuts = [0] + [int(i) + 1 for i in np.flatnonzero(self.crossing_flags())] + [len(self.times)]
        return [slice(lo, hi) for lo, hi in zip(cuts[:-1], cuts[1:]) if hi - lo > 0]


@dataclass(frozen=True)
class FlowQuery:
    field: VectorFieldSpec
    duration: float
    start: Optional[np.ndarray] = None
    method: str = NUMERIC
    tol: float = DEFAULT_TOL
    oracle: Optional[Callable] = None

    def __post_init__(self):
        if not math.isfinite(self.duration):
            raise ValueError("flow duration must be finite")


@dataclass
class FlowResult:
    points: np.ndarray
    ok: np.ndarray
    crossed: np.ndarray
    status: np.ndarray

    @property
    def lost(self) -> int:
        return int(np.sum(~self.ok))


def _field_rhs(field: VectorFieldSpec):
    def rhs(y: np.ndarray, t: np.ndarray) -> np.ndarray:
        return np.broadcast_to(field.eval(y, t), y.shape)
    return rhs


def _options(field: VectorFieldSpec, tol: float, record: bool = False) -> IntegratorOptions:
    planes = field.singular_set.hyperplanes if field.singular_set is not None else ()
    return IntegratorOptions(tol=tol, crossing_planes=planes, record=record)


def _raise_for_status(code: int, field: VectorFieldSpec) -> None:
    if code == RowStatus.BLOW_UP:
        raise BlowUp(f"{field.name}: state norm exceeded the blow-up bound")
    if code == RowStatus.START_SINGULAR:
        raise StartOnSingularSet(f"{field.name}: start point lies on the singular set")
    if code in (RowStatus.STEP_UNDERFLOW, RowStatus.MAX_STEPS):
        raise StiffnessFailure(f"{field.name}: step size underflow")
    if code == RowStatus.NONFINITE:
        raise FlowUndefined(f"{field.name}: field not finite along the path")


def integrate_trajectory(field: VectorFieldSpec, x0, window: TimeWindow, tol: float = DEFAULT_TOL,
                         t0: Optional[float] = None,
                         t_eval: Optional[Sequence[float]] = None) -> Trajectory:
    """Solve x' = V(x, t) with x(t0) = x0 over the window (t0 defaults to a)"""
    x0 = np.asarray(x0, dtype=float).reshape(1, field.dim)
    start = window.a if t0 is None else float(t0)
    if not window.contains(start):
        raise ValueError(f"start time {start} outside the window")
    if field.singular_set is not None and np.any(field.singular_set.contains(x0)):
        raise StartOnSingularSet(f"{field.name}: start point lies on the singular set")
    rhs = _field_rhs(field)
    opts = _options(field, tol, record=True)
    stops = None if t_eval is None else np.asarray(t_eval, dtype=float)

    pieces = []
    for end in (window.a, window.b):
        if end == start:
            continue
        local = None if stops is None else stops[(stops >= min(start, end)) & (stops <= max(start, end))]
        batch = integrate_batch(rhs, x0, start, end, opts, t_eval=local)
        _raise_for_status(int(batch.status[0]), field)
        pieces.append(batch.records[0])

    times, states, flags = [], [], []
    for piece in pieces:
        order = range(len(piece.times) - 1, -1, -1) if piece.times[-1] < start else range(len(piece.times))
        for i in order:
            if times and piece.times[i] == times[-1]:
                continue
            times.append(piece.times[i])
            states.append(piece.states[i])
            flags.append(piece.flags[i])
    if not times:
        times, states, flags = [start], [x0[0]], [0]
    crossings = [Crossing(t, s) for t, s, f in zip(times, states, flags) if f]
    logger.debug(f"{field.name}: {len(times)} nodes, {len(crossings)} crossings")
    return Trajectory(np.asarray(times), np.asarray(states), crossings, field.name, tol)


def flow_points(field: VectorFieldSpec, points, duration: float, tol: float = DEFAULT_TOL,
                method: str = NUMERIC, oracle: Optional[Callable] = None,
                t0: float = 0.0) -> FlowResult:
    """Apply the time-`duration` flow to every row of `points`"""
    points = np.atleast_2d(np.asarray(points, dtype=float))
    n = len(points)
    if duration == 0.0:
        return FlowResult(points.copy(), np.ones(n, bool), np.zeros(n, bool),
                          np.zeros(n, dtype=int))
    if method == ANALYTIC:
        if oracle is None:
            raise ValueError(f"{field.name} has no closed-form flow")
        moved, crossed = oracle(points, np.full(n, float(duration)))
        ok = np.all(np.isfinite(moved), axis=1)
        return FlowResult(moved, ok, crossed, np.where(ok, 0, int(RowStatus.NONFINITE)))
    batch = integrate_batch(_field_rhs(field), points, t0, t0 + duration, _options(field, tol))
    return FlowResult(batch.final.copy(), batch.ok, batch.crossed, batch.status.copy())


def integrate_ensemble(field: VectorFieldSpec, points, window: TimeWindow,
                       t_eval: Optional[Sequence[float]] = None, tol: float = DEFAULT_TOL) -> BatchResult:
    """Rows of `points` started at window.a and sampled at the t_eval nodes up to window.b"""
    points = np.atleast_2d(np.asarray(points, dtype=float))
    return integrate_batch(_field_rhs(field), points, window.a, window.b, _options(field, tol),
                           t_eval=t_eval)


def apply_flow(query: FlowQuery, points=None) -> FlowResult:
    pts = query.start if points is None else points
    return flow_points(query.field, pts, query.duration, query.tol, query.method, query.oracle)


def batch_result_to_trajectories(batch: BatchResult, field_name: str, tol: float) -> List[Trajectory]:
    """Trajectories sampled at the batch output times, crossings attached"""
    trajectories = []
    for i in range(len(batch.states)):
        crossings = [Crossing(t, p) for t, p in batch.crossings[i]]
        trajectories.append(Trajectory(batch.stop_times.copy(), batch.states[i].copy(),
                                       crossings, field_name, tol))
    return trajectories


# Closed-form oracles

def principal_arctan_ratio(x: np.ndarray, y: np.ndarray) -> np.ndarray:
    """arctan(y/x) on the principal branch; not the quadrant-aware arctan2"""
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.arctan(y / x)


def analytic_flow_helix(which: int, x0, t) -> np.ndarray:
    """Closed-form helix flows; rows of x0 flowed for times t (scalar or per row)"""
    return helix_flow_with_crossings(which, x0, t)[0]


def helix_flow_with_crossings(which: int, x0, t) -> Tuple[np.ndarray, np.ndarray]:
    pts = np.asarray(x0, dtype=float)
    single = pts.ndim == 1
    pts = np.atleast_2d(pts)
    t = np.broadcast_to(np.asarray(t, dtype=float), pts.shape[:1])
    x, y, z = pts[:, 0], pts[:, 1], pts[:, 2]
    if np.any(x == 0.0):
        raise StartOnSingularSet("helix flows start off the plane {x=0}")
    f0 = principal_arctan_ratio(x, y)
    out = pts.copy()
    crossed = np.zeros(len(pts), dtype=bool)
    if which == 2:
        out[:, 1] = y + t
        out[:, 2] = z + principal_arctan_ratio(x, y + t) - f0
    elif which == 1:
        x1 = x + t
        crossed = np.sign(x1) != np.sign(x)
        jump = np.where(crossed, np.pi * np.sign(x) * np.sign(y), 0.0)
        const = z - f0 + jump
        on_plane = x1 == 0.0
        out[:, 0] = x1
        with np.errstate(divide="ignore", invalid="ignore"):
            z1 = principal_arctan_ratio(x1, y) + const
        # limit value at the crossing instant
        z1 = np.where(on_plane, z - f0 + 0.5 * np.pi * np.sign(x) * np.sign(y), z1)
        out[:, 2] = z1
    else:
        raise ValueError("which must be 1 or 2")
    still = t == 0.0
    out[still] = pts[still]
    crossed &= ~still
    return (out[0], crossed[0]) if single else (out, crossed)


def analytic_flow_graph_foliation(f: ScalarFunctionSpec, which: int, x0, t,
                                  quadrature_tol: float = DEFAULT_QUADRATURE_TOL) -> np.ndarray:
    """Flows of V1 = dx + f_x dz and V2 = dy + f_y dz with the z-increment by quadrature"""
    pts = np.asarray(x0, dtype=float)
    single = pts.ndim == 1
    pts = np.atleast_2d(pts)
    t = np.broadcast_to(np.asarray(t, dtype=float), pts.shape[:1]).copy()
    if which not in (1, 2):
        raise ValueError("which must be 1 or 2")
    axis = which - 1
    base = pts[:, :2].copy()

    def integrand(u: float) -> np.ndarray:
        moved = base.copy()
        moved[:, axis] += u * t
        return t * f.grad(moved)[:, axis]

    increment = np.zeros(len(pts))
    live = t != 0.0
    if np.any(live):
        value, err = quad_vec(integrand, 0.0, 1.0, epsabs=quadrature_tol,
                              epsrel=quadrature_tol, norm="max", limit=2000)
        if not np.isfinite(err) or err > max(quadrature_tol, 1e-8):
            raise QuadratureFailure(f"line integral of {f.name} did not converge (err={err:.3g})")
        increment = np.where(live, value, 0.0)
    out = pts.copy()
    out[:, axis] += t
    out[:, 2] += increment
    return out[0] if single else out


def analytic_flow_linear(matrix, x0, t) -> np.ndarray:
    """exp(tA) x for rows of x0"""
    matrix = np.asarray(matrix, dtype=float)
    pts = np.atleast_2d(np.asarray(x0, dtype=float))
    t = np.broadcast_to(np.asarray(t, dtype=float), pts.shape[:1])
    out = np.empty_like(pts)
    for value in np.unique(t):
        rows = t == value
        out[rows] = pts[rows] if value == 0.0 else pts[rows] @ expm(value * matrix).T
    return out[0] if np.ndim(x0) == 1 else out


# Trajectory-level checks

def escape_time_bound(R: float, rho: float, v_sup: float, T_bar: float = math.inf) -> float:
    """Time for which paths from B_R stay in B_rho, 0.9 times the sharp bound"""
    if not 0.0 < R < rho:
        raise InvalidRadii(f"need 0 < R < rho, got R={R}, rho={rho}")
    if not v_sup > 0.0:
        raise InvalidRadii(f"need a positive speed bound, got {v_sup}")
    return 0.9 * min((rho - R) / v_sup, T_bar)


def escape_time_for_field(field: VectorFieldSpec, center, R: float, rho: float,
                          T_bar: float = math.inf, samples: int = 20000,
                          seed: int = 0) -> float:
    """Escape-time bound with sup |V| over B_rho estimated by seeded sampling"""
    center = np.asarray(center, dtype=float)
    rng = block_generator(seed, 0, tag="escape")
    direction = rng.standard_normal((samples, field.dim))
    direction /= np.linalg.norm(direction, axis=1, keepdims=True)
    radius = rho * rng.random(samples) ** (1.0 / field.dim)
    pts = center + radius[:, None] * direction
    if field.singular_set is not None:
        pts = pts[~field.singular_set.in_tube(pts)]
    speeds = np.linalg.norm(np.broadcast_to(field.eval(pts, 0.0), pts.shape), axis=1)
    v_sup = float(np.max(speeds[np.isfinite(speeds)], initial=0.0))
    # sampled sup undershoots the true one
    return escape_time_bound(R, rho, 1.1 * v_sup if v_sup > 0 else 1e-300, T_bar)


def chain_rule_residual(f: ScalarFunctionSpec, traj: Trajectory,
                        field: VectorFieldSpec) -> ResidualReport:
    """Compare d/dt f(theta_t) by finite differences with grad f . V along the path"""
    values, weights = [], []
    for seg in traj.segments():
        times = traj.times[seg]
        states = traj.states[seg]
        if len(times) < 3:
            continue
        g = f(states)
        derivative = np.gradient(g, times, edge_order=2)
        v = np.broadcast_to(field.eval(states, times), states.shape)
        expected = np.einsum("ij,ij->i", f.grad(states), v)
        gap = np.abs(derivative - expected)[1:-1]
        values.append(gap)
        weights.append(np.abs(np.diff(times[1:]) + np.diff(times[:-1])) / 2.0)
    params = {"field": field.name, "function": f.name, "nodes": len(traj.times)}
    if not values:
        return ResidualReport(ResidualKind.CHAIN_RULE, params, 0.0, 0, None, {"l1": 0.0})
    gaps = np.concatenate(values)
    l1 = float(np.sum(np.concatenate(weights) * gaps))
    return ResidualReport(ResidualKind.CHAIN_RULE, params, float(np.max(gaps)), len(gaps),
                          None, {"l1": l1})


def write_trajectory_csv(traj: Trajectory, path: Union[str, Path], header_comment: str = "") -> Path:
    """CSV columns: t, x_1..x_d, crossing_flag"""
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", newline="") as handle:
            if header_comment:
                handle.write(f"# {header_comment}\n")
            writer = csv.writer(handle, lineterminator="\n")
            writer.writerow(["t"] + [f"x_{i + 1}" for i in range(traj.dim)] + ["crossing_flag"])
            for t, state, flag in zip(traj.times, traj.states, traj.crossing_flags()):
                writer.writerow([format_number(t)] + [format_number(v) for v in state] + [int(flag)])
    except OSError as e:
        raise OutputError(f"cannot write trajectory to {path}: {e}") from e
    return path
