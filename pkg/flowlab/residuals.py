#!/usr/bin/env python3
"""
Commutation Residuals
Monte-Carlo norms over a particle ensemble of the quantities that drive the
commutation argument for X_{s,t} = F2_t o F1_s:

    A = X_{s',t} - X_{s,t}
    B = A - (s'-s) V1(X_{s,t})
    R = V2(X_{s',t}) - V2(X_{s,t}) - DV2(X_{s,t}) A

plus log-log scaling fits over a ladder of s'-s values.
"""

import logging
import math
from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np
from scipy import stats

from .commute_lab import compose_flows
from .errors import DegenerateFit
from .field_core import FieldPairSpec, VectorFieldSpec, central_difference_jacobian
from .flow_engine import ANALYTIC, DEFAULT_TOL
from .measure_lab import ParticleEnsemble
from .reporting import ResidualKind, ResidualReport

logger = logging.getLogger("flowlab-residuals")

MIN_LADDER_POINTS = 4
MIN_DECADES = 2.0
DEFAULT_NODES = 16


def weighted_norm(values: np.ndarray, weights: np.ndarray, p: float = 1.0) -> float:
    """(sum_i w_i |v_i|^p)^(1/p); rows of a 2-D array are measured in the Euclidean norm"""
    values = np.asarray(values, dtype=float)
    mags = np.linalg.norm(values, axis=1) if values.ndim == 2 else np.abs(values)
    if math.isinf(p):
        return float(np.max(mags, initial=0.0))
    return float(np.sum(weights * mags ** p) ** (1.0 / p))


def _field_values(field: VectorFieldSpec, points: np.ndarray, t: float = 0.0) -> np.ndarray:
    return np.broadcast_to(np.asarray(field.eval(points, t), dtype=float), points.shape)


def _field_jacobian(field: VectorFieldSpec, points: np.ndarray, t: float = 0.0) -> np.ndarray:
    if field.jacobian_analytic is not None:
        jac = np.asarray(field.jacobian_analytic(points, t), dtype=float)
        return np.broadcast_to(jac, points.shape + (field.dim,))
    return central_difference_jacobian(field, points, t)


@dataclass
class _Pair:
    """X_{s,t} and X_{s',t} on the rows where both are defined"""
    base: np.ndarray
    moved: np.ndarray
    weights: np.ndarray
    lost: int
    crossed: int


def _paired_flows(pair: FieldPairSpec, ens: ParticleEnsemble, s: float, s_prime: float, t: float,
                  method: str, tol: float) -> _Pair:
    base = compose_flows(pair, ens.points, s, t, method, tol)
    moved = base if s_prime == s else compose_flows(pair, ens.points, s_prime, t, method, tol)
    ok = base.ok & moved.ok
    lost = int(np.sum(~ok))
    if lost:
        logger.warning(f"{pair.name}: {lost} of {len(ens)} samples lost (s={s}, s'={s_prime}, t={t})")
    return _Pair(base.points[ok], moved.points[ok], ens.weights[ok], lost,
                 int(np.sum((base.crossed | moved.crossed)[ok])))


def _params(pair: FieldPairSpec, s, s_prime, t, p, method, tol, **more) -> dict:
    return {"pair": pair.name, "s": float(s), "s_prime": float(s_prime), "t": float(t),
            "p": float(p), "method": method, "tol": float(tol), **more}


def _report(kind: ResidualKind, params: dict, value: float, flows: _Pair, ens: ParticleEnsemble,
            **extra) -> ResidualReport:
    extra = {"lost": float(flows.lost), "crossed": float(flows.crossed), **extra}
    return ResidualReport(kind, params, value, len(flows.weights), ens.seed, extra)


def residual_A(pair: FieldPairSpec, ens: ParticleEnsemble, s: float, s_prime: float, t: float,
               p: float = 1.0, method: str = ANALYTIC, tol: float = DEFAULT_TOL) -> ResidualReport:
    flows = _paired_flows(pair, ens, s, s_prime, t, method, tol)
    value = weighted_norm(flows.moved - flows.base, flows.weights, p)
    return _report(ResidualKind.A, _params(pair, s, s_prime, t, p, method, tol), value, flows, ens)


def residual_B(pair: FieldPairSpec, ens: ParticleEnsemble, s: float, s_prime: float, t: float,
               method: str = ANALYTIC, tol: float = DEFAULT_TOL) -> ResidualReport:
    flows = _paired_flows(pair, ens, s, s_prime, t, method, tol)
    if s_prime == s:
        value = 0.0
    else:
        drift = (s_prime - s) * _field_values(pair.first, flows.base)
        value = weighted_norm(flows.moved - flows.base - drift, flows.weights, 1.0)
    return _report(ResidualKind.B, _params(pair, s, s_prime, t, 1.0, method, tol), value, flows, ens)


def _remainder_R(pair: FieldPairSpec, flows: _Pair) -> np.ndarray:
    v2 = pair.second
    step = flows.moved - flows.base
    linear = np.einsum("nij,nj->ni", _field_jacobian(v2, flows.base), step)
    return _field_values(v2, flows.moved) - _field_values(v2, flows.base) - linear


def residual_R(pair: FieldPairSpec, ens: ParticleEnsemble, s: float, s_prime: float, t: float,
               method: str = ANALYTIC, tol: float = DEFAULT_TOL) -> ResidualReport:
    flows = _paired_flows(pair, ens, s, s_prime, t, method, tol)
    value = 0.0 if s_prime == s else weighted_norm(_remainder_R(pair, flows), flows.weights, 1.0)
    return _report(ResidualKind.R, _params(pair, s, s_prime, t, 1.0, method, tol), value, flows, ens)


def residual_R_integral(pair: FieldPairSpec, ens: ParticleEnsemble, s: float, s_prime: float,
                        T: float, nodes: int = DEFAULT_NODES, method: str = ANALYTIC,
                        tol: float = DEFAULT_TOL) -> ResidualReport:
    """Gauss-Legendre estimate of (1/|s'-s|) * integral over [-T, T] of ||R_{s,s';tau}||_1"""
    if s_prime == s:
        raise ValueError("s' must differ from s for the normalised integral")
    x, w = np.polynomial.legendre.leggauss(nodes)
    total, lost = 0.0, 0
    for node, weight in zip(T * x, T * w):
        flows = _paired_flows(pair, ens, s, s_prime, float(node), method, tol)
        total += weight * weighted_norm(_remainder_R(pair, flows), flows.weights, 1.0)
        lost = max(lost, flows.lost)
    value = total / abs(s_prime - s)
    params = _params(pair, s, s_prime, 0.0, 1.0, method, tol, T=float(T), nodes=int(nodes))
    return ResidualReport(ResidualKind.R, params, value, len(ens), ens.seed,
                          {"lost": float(lost), "integrated": 1.0})


def residual_ladder(kind: str, pair: FieldPairSpec, ens: ParticleEnsemble, s: float,
                    deltas: Sequence[float], t: float, p: float = 1.0, method: str = ANALYTIC,
                    tol: float = DEFAULT_TOL) -> List[ResidualReport]:
    """One report per delta with s' = s + delta"""
    kind = kind.upper()
    reports = []
    for delta in deltas:
        s_prime = s + float(delta)
        if kind == "A":
            reports.append(residual_A(pair, ens, s, s_prime, t, p, method, tol))
        elif kind == "B":
            reports.append(residual_B(pair, ens, s, s_prime, t, method, tol))
        elif kind == "R":
            reports.append(residual_R(pair, ens, s, s_prime, t, method, tol))
        else:
            raise ValueError(f"unknown residual kind {kind!r}")
        logger.debug(f"{kind} ladder delta={delta}: {reports[-1].value:.6g}")
    return reports


@dataclass
class ScalingFit:
    slope: float
    intercept: float
    stderr: float
    ci_low: float
    ci_high: float
    count: int
    confidence: float

    def within(self, low: float, high: float) -> bool:
        return low <= self.slope <= high


def scaling_exponent(reports: Optional[Sequence[ResidualReport]] = None,
                     deltas: Optional[Sequence[float]] = None,
                     values: Optional[Sequence[float]] = None,
                     confidence: float = 0.95) -> ScalingFit:
    """Least-squares slope of log(value) against log(delta), with a t-interval"""
    if reports is not None:
        deltas = [r.delta for r in reports]
        values = [r.value for r in reports]
    deltas = np.asarray(deltas, dtype=float)
    values = np.asarray(values, dtype=float)
    if len(deltas) != len(values) or len(deltas) < MIN_LADDER_POINTS:
        raise DegenerateFit(f"need at least {MIN_LADDER_POINTS} ladder points", points=len(deltas))
    if np.any(deltas <= 0) or np.any(values <= 0):
        raise DegenerateFit("ladder values and deltas must be positive for a log-log fit")
    decades = math.log10(float(np.max(deltas)) / float(np.min(deltas)))
    if decades < MIN_DECADES - 1e-9:
        raise DegenerateFit(f"ladder spans {decades:.2f} decades, need {MIN_DECADES}")

    fit = stats.linregress(np.log(deltas), np.log(values))
    spread = stats.t.ppf(0.5 + confidence / 2.0, len(deltas) - 2) * fit.stderr
    return ScalingFit(float(fit.slope), float(fit.intercept), float(fit.stderr),
                      float(fit.slope - spread), float(fit.slope + spread), len(deltas), confidence)


@dataclass
class GronwallAudit:
    sup_norm: float
    initial_norm: float
    lipschitz: float
    bound: float
    times: np.ndarray
    norms: np.ndarray

    @property
    def holds(self) -> bool:
        return self.sup_norm <= self.bound * (1 + 1e-9) + 1e-15


def gronwall_audit(pair: FieldPairSpec, ens: ParticleEnsemble, s: float, s_prime: float, T: float,
                   p: float = 1.0, samples: int = 9, method: str = ANALYTIC,
                   tol: float = DEFAULT_TOL) -> GronwallAudit:
    """sup over t in [-T, T] of ||A_t||_p against ||A_0||_p exp(L T), L the sampled sup |DV2|"""
    times = np.linspace(-T, T, samples)
    if not np.any(times == 0.0):
        times = np.sort(np.append(times, 0.0))
    norms, lipschitz = [], 0.0
    for t in times:
        flows = _paired_flows(pair, ens, s, s_prime, float(t), method, tol)
        norms.append(weighted_norm(flows.moved - flows.base, flows.weights, p))
        for states in (flows.base, flows.moved):
            if len(states):
                jac = _field_jacobian(pair.second, states)
                lipschitz = max(lipschitz, float(np.max(np.linalg.norm(jac, ord=2, axis=(-2, -1)))))
    norms = np.asarray(norms)
    initial = float(norms[np.flatnonzero(times == 0.0)[0]])
    bound = initial * math.exp(lipschitz * T)
    return GronwallAudit(float(np.max(norms)), initial, lipschitz, bound, times, norms)


def ladder_rows(reports: Sequence[ResidualReport]) -> List[Tuple[float, float, int, float]]:
    return [(r.delta, r.value, r.sample_count, r.extra.get("lost", 0.0)) for r in reports]
