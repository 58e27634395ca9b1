#!/usr/bin/env python3
"""
Batched Dormand-Prince 5(4) integrator
Every row carries its own step size and controller state, so a row's result
does not depend on which other rows share the batch. Sign changes across
declared hyperplanes are located by bisection on the step interpolant and
stepped through continuously.
"""

import logging
from dataclasses import dataclass, field
from enum import IntEnum
from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np

from .field_core import Hyperplane

logger = logging.getLogger("flowlab-integrator")

Rhs = Callable[[np.ndarray, np.ndarray], np.ndarray]

_C = np.array([0.0, 1 / 5, 3 / 10, 4 / 5, 8 / 9, 1.0, 1.0])
_A = (
    (),
    (1 / 5,),
    (3 / 40, 9 / 40),
    (44 / 45, -56 / 15, 32 / 9),
    (19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729),
    (9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656),
)
_B5 = (35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84, 0.0)
_B4 = (5179 / 57600, 0.0, 7571 / 16695, 393 / 640, -92097 / 339200, 187 / 2100, 1 / 40)
_E = tuple(b5 - b4 for b5, b4 in zip(_B5, _B4))

# PI controller exponents for a fifth-order pair
_BETA = 0.04
_ALPHA = 0.2 - 0.75 * _BETA
_SAFETY = 0.9
_MIN_FACTOR = 0.2
_MAX_FACTOR = 10.0


class RowStatus(IntEnum):
    OK = 0
    BLOW_UP = 1
    STEP_UNDERFLOW = 2
    NONFINITE = 3
    MAX_STEPS = 4
    START_SINGULAR = 5


@dataclass
class IntegratorOptions:
    tol: float = 1e-8
    max_norm: float = 1e6
    max_steps: int = 200_000
    crossing_planes: Tuple[Hyperplane, ...] = ()
    near_plane_band: float = 0.05
    step_fraction: float = 0.05
    event_time_tol: float = 1e-12
    record: bool = False


@dataclass
class RowRecord:
    times: List[float] = field(default_factory=list)
    states: List[np.ndarray] = field(default_factory=list)
    flags: List[int] = field(default_factory=list)

    def append(self, t: float, y: np.ndarray, flag: int = 0) -> None:
        if self.times and t == self.times[-1]:
            self.flags[-1] = max(self.flags[-1], flag)
            return
        self.times.append(float(t))
        self.states.append(np.array(y, dtype=float))
        self.flags.append(flag)


@dataclass
class BatchResult:
    stop_times: np.ndarray
    states: np.ndarray
    status: np.ndarray
    steps: np.ndarray
    crossings: List[List[Tuple[float, np.ndarray]]]
    records: Optional[List[RowRecord]] = None

    @property
    def final(self) -> np.ndarray:
        return self.states[:, -1, :]

    @property
    def ok(self) -> np.ndarray:
        return self.status == RowStatus.OK

    @property
    def crossed(self) -> np.ndarray:
        return np.array([len(c) > 0 for c in self.crossings], dtype=bool)


def _rms(a: np.ndarray) -> np.ndarray:
    return np.sqrt(np.mean(a * a, axis=1))


def dopri_step(rhs: Rhs, t: np.ndarray, y: np.ndarray, h: np.ndarray,
               k1: np.ndarray) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """One step per row with signed sizes h; returns (y_new, f(y_new), error)"""
    hc = h[:, None]
    stages = [k1]
    for s in range(1, 6):
        incr = sum(a * stages[j] for j, a in enumerate(_A[s]))
        stages.append(rhs(y + hc * incr, t + _C[s] * h))
    y_new = y + hc * sum(b * stages[j] for j, b in enumerate(_B5[:6]) if b != 0.0)
    k7 = rhs(y_new, t + h)
    stages.append(k7)
    err = hc * sum(e * stages[j] for j, e in enumerate(_E) if e != 0.0)
    return y_new, k7, err


def hermite(y0, y1, f0, f1, h, theta):
    """Cubic Hermite interpolant of a step, theta in [0, 1]"""
    th = theta[:, None]
    hc = h[:, None]
    h00 = 2 * th ** 3 - 3 * th ** 2 + 1
    h10 = th ** 3 - 2 * th ** 2 + th
    h01 = -2 * th ** 3 + 3 * th ** 2
    h11 = th ** 3 - th ** 2
    return h00 * y0 + h10 * hc * f0 + h01 * y1 + h11 * hc * f1


def _bisect_crossing(plane: Hyperplane, y0, y1, f0, f1, h, side, time_tol) -> np.ndarray:
    """Largest step fraction still on the starting side of the plane"""
    lo = np.zeros(len(h))
    hi = np.ones(len(h))
    for _ in range(64):
        # rows stop independently so a row's answer does not depend on its batch
        live = (hi - lo) * np.abs(h) >= time_tol
        if not np.any(live):
            break
        mid = 0.5 * (lo + hi)
        same = np.sign(plane.signed(hermite(y0, y1, f0, f1, h, mid))) == side
        lo = np.where(live & same, mid, lo)
        hi = np.where(live & ~same, mid, hi)
    return lo


def _initial_step(rhs: Rhs, t, y, f0, direction, tol) -> np.ndarray:
    scale = tol * (1.0 + np.abs(y))
    d0 = _rms(y / scale)
    d1 = _rms(f0 / scale)
    with np.errstate(divide="ignore", invalid="ignore"):
        h0 = np.where((d0 < 1e-5) | (d1 < 1e-5), 1e-6, 0.01 * d0 / d1)
        f1 = rhs(y + direction * h0[:, None] * f0, t + direction * h0)
        d2 = _rms((f1 - f0) / scale) / h0
        dm = np.maximum(d1, d2)
        h1 = np.where(dm <= 1e-15, np.maximum(1e-6, h0 * 1e-3), (0.01 / dm) ** 0.2)
    h = np.minimum(100 * h0, h1)
    return np.where(np.isfinite(h) & (h > 0), h, h0)


def _stop_times(t0: float, t_end: float, t_eval: Optional[Sequence[float]],
                direction: float) -> np.ndarray:
    stops = [float(t_end)] if t_eval is None else [float(s) for s in t_eval] + [float(t_end)]
    stops = np.unique(np.asarray(stops))
    lo, hi = min(t0, t_end), max(t0, t_end)
    if np.any(stops < lo) or np.any(stops > hi):
        raise ValueError("output times must lie between the start and end time")
    return stops if direction >= 0 else stops[::-1]


def integrate_batch(rhs: Rhs, y0: np.ndarray, t0: float, t_end: float,
                    options: Optional[IntegratorOptions] = None,
                    t_eval: Optional[Sequence[float]] = None) -> BatchResult:
    """Integrate rows of y0 from t0 to t_end, sampling at each output time"""
    opts = options or IntegratorOptions()
    y = np.array(y0, dtype=float, copy=True)
    if y.ndim != 2:
        raise ValueError("integrate_batch expects a (n, d) array of start points")
    n, d = y.shape
    direction = float(np.sign(t_end - t0))
    stops = _stop_times(t0, t_end, t_eval, direction)
    k = len(stops)

    states = np.full((n, k, d), np.nan)
    status = np.full(n, RowStatus.OK, dtype=int)
    steps = np.zeros(n, dtype=int)
    crossings: List[List[Tuple[float, np.ndarray]]] = [[] for _ in range(n)]
    records = [RowRecord() for _ in range(n)] if opts.record else None
    if records is not None:
        for i in range(n):
            records[i].append(t0, y[i])

    t = np.full(n, float(t0))
    stop_idx = np.zeros(n, dtype=int)
    n_start = int(np.sum(stops == t0))
    states[:, :n_start, :] = y[:, None, :]
    stop_idx[:] = n_start
    result = BatchResult(stops, states, status, steps, crossings, records)
    if n == 0 or n_start == k:
        return result

    planes = tuple(opts.crossing_planes)
    active = np.ones(n, dtype=bool)
    for plane in planes:
        on_plane = plane.distance(y) <= 1e-12 * np.maximum(1.0, np.abs(y).max(axis=1))
        status[on_plane] = RowStatus.START_SINGULAR
        active &= ~on_plane

    k1 = np.zeros_like(y)
    k1[active] = rhs(y[active], t[active])
    bad = active & ~np.all(np.isfinite(k1), axis=1)
    status[bad] = RowStatus.NONFINITE
    active &= ~bad

    h = np.zeros(n)
    if np.any(active):
        h[active] = _initial_step(rhs, t[active], y[active], k1[active], direction, opts.tol)
    err_prev = np.full(n, 1e-4)

    while np.any(active):
        idx = np.flatnonzero(active)
        ti, yi, k1i = t[idx], y[idx], k1[idx]
        target = stops[stop_idx[idx]]
        remaining = np.abs(target - ti)
        h_prop = h[idx]
        hi = h_prop.copy()

        if planes:
            near = np.zeros(len(idx), dtype=bool)
            for plane in planes:
                near |= plane.distance(yi) < opts.near_plane_band
            speed = np.linalg.norm(k1i, axis=1)
            with np.errstate(divide="ignore"):
                cap = opts.step_fraction / speed
            hi = np.where(near, np.minimum(hi, cap), hi)

        land = hi >= remaining
        hi = np.where(land, remaining, hi)
        hs = direction * hi

        with np.errstate(over="ignore", invalid="ignore"):
            y_new, k7, err = dopri_step(rhs, ti, yi, hs, k1i)
            scale = opts.tol * (1.0 + np.maximum(np.abs(yi), np.abs(y_new)))
            en = np.sqrt(np.mean((err / scale) ** 2, axis=1))
        finite = np.isfinite(en) & np.all(np.isfinite(y_new), axis=1) & np.all(np.isfinite(k7), axis=1)
        accept = finite & (en <= 1.0)

        t_new = np.where(land, target, ti + hs)
        reached = land & accept
        hit_rows: List[Tuple[int, float, np.ndarray]] = []

        if planes and np.any(accept):
            theta = np.full(len(idx), np.inf)
            which = np.full(len(idx), -1)
            sides = np.zeros(len(idx))
            for p_i, plane in enumerate(planes):
                s0 = plane.signed(yi)
                s1 = plane.signed(y_new)
                hit = accept & (s0 != 0) & (np.sign(s1) != np.sign(s0))
                if not np.any(hit):
                    continue
                sub = np.flatnonzero(hit)
                th = _bisect_crossing(plane, yi[sub], y_new[sub], k1i[sub], k7[sub],
                                      hs[sub], np.sign(s0[sub]), opts.event_time_tol)
                better = th < theta[sub]
                theta[sub[better]] = th[better]
                which[sub[better]] = p_i
                sides[sub[better]] = np.sign(s0[sub[better]])
            c = np.flatnonzero(np.isfinite(theta))
            if len(c):
                h_part = hs[c] * theta[c]
                y_ev, v_ev, _ = dopri_step(rhs, ti[c], yi[c], h_part, k1i[c])
                t_ev = ti[c] + h_part
                tau = np.empty(len(c))
                for j, row in enumerate(c):
                    plane = planes[which[row]]
                    normal = np.asarray(plane.normal, dtype=float)
                    normal = normal / np.linalg.norm(normal)
                    signed_ev = float(plane.signed(y_ev[j]))
                    gap = abs(signed_ev) if np.sign(signed_ev) == sides[row] else 0.0
                    offset = 64 * np.finfo(float).eps * max(1.0, float(np.abs(y_ev[j]).max()))
                    vn = abs(float(v_ev[j] @ normal))
                    tau[j] = (gap + offset) / vn if vn > 0 else 0.0
                    tau[j] = max(tau[j], 4 * np.spacing(abs(t_ev[j]) + 1.0))
                y_r = y_ev + direction * tau[:, None] * v_ev
                t_r = t_ev + direction * tau
                passed = direction * (t_r - target[c]) >= 0
                t_r = np.where(passed, target[c], t_r)
                y_new[c] = y_r
                t_new[c] = t_r
                k7[c] = rhs(y_r, t_r)
                reached[c] = passed
                for j, row in enumerate(c):
                    hit_rows.append((row, float(t_ev[j]), y_ev[j].copy()))

        acc = np.flatnonzero(accept)
        rows = idx[acc]
        crossed_local = {row: (t_e, y_e) for row, t_e, y_e in hit_rows}
        for local, row in zip(acc, rows):
            if local in crossed_local:
                t_e, y_e = crossed_local[local]
                crossings[row].append((t_e, y_e))
                if records is not None:
                    records[row].append(t_e, y_e, 1)
            if records is not None:
                records[row].append(t_new[local], y_new[local], 0)
        t[rows] = t_new[acc]
        y[rows] = y_new[acc]
        k1[rows] = k7[acc]

        with np.errstate(divide="ignore", over="ignore", invalid="ignore"):
            en_safe = np.where(finite, np.maximum(en, 1e-10), np.inf)
            fac_acc = np.clip(_SAFETY * en_safe ** (-_ALPHA) * err_prev[idx] ** _BETA,
                              _MIN_FACTOR, _MAX_FACTOR)
            fac_rej = np.where(finite, np.clip(_SAFETY * en_safe ** -0.2, _MIN_FACTOR, 1.0),
                               _MIN_FACTOR)
        h_next = np.where(accept, hi * fac_acc, hi * fac_rej)
        h_next = np.where(accept & land, np.maximum(h_next, h_prop), h_next)
        h[idx] = h_next
        err_prev[rows] = np.maximum(en[acc], 1e-4)
        steps[idx] += 1

        blown = np.zeros(len(idx), dtype=bool)
        blown[acc] = np.abs(y_new[acc]).max(axis=1) > opts.max_norm
        underflow = ~accept & (h_next < 1e-14 * np.maximum(1.0, np.abs(ti)))
        exhausted = steps[idx] >= opts.max_steps

        done_rows = idx[reached & ~blown]
        states[done_rows, stop_idx[done_rows], :] = y[done_rows]
        stop_idx[done_rows] += 1

        status[idx[blown]] = RowStatus.BLOW_UP
        status[idx[underflow & finite]] = RowStatus.STEP_UNDERFLOW
        status[idx[underflow & ~finite]] = RowStatus.NONFINITE
        status[idx[exhausted & ~blown & ~underflow]] = RowStatus.MAX_STEPS
        active[idx[blown | underflow | exhausted]] = False
        active[stop_idx >= k] = False

    failed = int(np.sum(status != RowStatus.OK))
    logger.debug(f"batch of {n} rows: {int(steps.max(initial=0))} max steps, "
                 f"{sum(len(c) for c in crossings)} crossings, {failed} failed")
    return result
