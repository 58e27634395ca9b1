#!/usr/bin/env python3
"""
Field Core
Vector field specs, singular sets, and pointwise differential operators
(Jacobian, divergence, Lie bracket). All evaluators are vectorized over
leading axes: a point array of shape (..., d) maps to (..., d).
"""

import logging
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence, Tuple, Union

import numpy as np

from .errors import DimensionMismatch, NoAnalyticJacobian, SingularPoint

logger = logging.getLogger("flowlab-fields")

DEFAULT_FD_STEP = 1e-5
DEFAULT_EXCLUSION = 1e-3
MACHINE_TOLERANCE = 1e-12

ANALYTIC = "analytic"
CENTRAL_DIFFERENCE = "central_difference"

Evaluator = Callable[[np.ndarray, Union[float, np.ndarray]], np.ndarray]


@dataclass(frozen=True)
class Hyperplane:
    """Affine hyperplane {x : normal . x = offset}"""
    normal: Tuple[float, ...]
    offset: float = 0.0

    def signed(self, points: np.ndarray) -> np.ndarray:
        n = np.asarray(self.normal, dtype=float)
        return (np.asarray(points, dtype=float) @ n - self.offset) / np.linalg.norm(n)

    def distance(self, points: np.ndarray) -> np.ndarray:
        return np.abs(self.signed(points))

    @classmethod
    def coordinate(cls, axis: int, dim: int, value: float = 0.0) -> "Hyperplane":
        normal = [0.0] * dim
        normal[axis] = 1.0
        return cls(tuple(normal), value)


@dataclass(frozen=True)
class Tube:
    """Affine line through `point` along `direction`; distance is to the line"""
    point: Tuple[float, ...]
    direction: Tuple[float, ...]

    def distance(self, points: np.ndarray) -> np.ndarray:
        p = np.asarray(points, dtype=float) - np.asarray(self.point, dtype=float)
        u = np.asarray(self.direction, dtype=float)
        u = u / np.linalg.norm(u)
        perp = p - (p @ u)[..., None] * u
        return np.linalg.norm(perp, axis=-1)


@dataclass(frozen=True)
class SingularSet:
    """Finite union of affine pieces with an exclusion radius for sampling"""
    components: Tuple[Union[Hyperplane, Tube], ...]
    epsilon: float = DEFAULT_EXCLUSION

    def distance(self, points: np.ndarray) -> np.ndarray:
        points = np.asarray(points, dtype=float)
        if not self.components:
            return np.full(points.shape[:-1], np.inf)
        return np.min(np.stack([c.distance(points) for c in self.components]), axis=0)

    def contains(self, points: np.ndarray) -> np.ndarray:
        points = np.asarray(points, dtype=float)
        scale = np.maximum(1.0, np.linalg.norm(points, axis=-1))
        return self.distance(points) <= MACHINE_TOLERANCE * scale

    def in_tube(self, points: np.ndarray) -> np.ndarray:
        return self.distance(points) < self.epsilon

    @property
    def hyperplanes(self) -> Tuple[Hyperplane, ...]:
        return tuple(c for c in self.components if isinstance(c, Hyperplane))


@dataclass(frozen=True)
class VectorFieldSpec:
    """A named, evaluable vector field on R^d"""
    name: str
    dim: int
    eval: Evaluator
    jacobian_analytic: Optional[Evaluator] = None
    divergence_analytic: Optional[Evaluator] = None
    singular_set: Optional[SingularSet] = None
    time_dependent: bool = False
    description: str = ""

    def __post_init__(self):
        if self.dim < 1:
            raise DimensionMismatch(f"field {self.name} has dim {self.dim}")

    def singular_distance(self, points: np.ndarray) -> np.ndarray:
        points = np.asarray(points, dtype=float)
        if self.singular_set is None:
            return np.full(points.shape[:-1], np.inf)
        return self.singular_set.distance(points)


@dataclass(frozen=True)
class FieldPairSpec:
    """Two fields on the same space; `oracle` gives closed-form flows when known"""
    name: str
    first: VectorFieldSpec
    second: VectorFieldSpec
    bracket_vanishes_ae: bool
    oracle: Optional[Callable] = field(default=None, compare=False)
    description: str = ""

    def __post_init__(self):
        if self.first.dim != self.second.dim:
            raise DimensionMismatch(
                f"pair {self.name}: dims {self.first.dim} and {self.second.dim} differ")

    @property
    def dim(self) -> int:
        return self.first.dim

    def component(self, which: int) -> VectorFieldSpec:
        return self.first if which == 1 else self.second

    def swapped(self) -> "FieldPairSpec":
        oracle = None
        if self.oracle is not None:
            base = self.oracle
            oracle = lambda which, points, t: base(3 - which, points, t)
        return FieldPairSpec(f"{self.name}(swapped)", self.second, self.first,
                             self.bracket_vanishes_ae, oracle, self.description)


@dataclass(frozen=True)
class ScalarFunctionSpec:
    """Scalar function with gradient and optional Hessian, vectorized like fields"""
    name: str
    dim: int
    value: Callable[[np.ndarray], np.ndarray]
    gradient: Callable[[np.ndarray], np.ndarray]
    hessian: Optional[Callable[[np.ndarray], np.ndarray]] = None

    def __call__(self, points) -> np.ndarray:
        points = np.asarray(points, dtype=float)
        return np.broadcast_to(self.value(points), points.shape[:-1]).astype(float)

    def grad(self, points) -> np.ndarray:
        points = np.asarray(points, dtype=float)
        return np.broadcast_to(self.gradient(points), points.shape).astype(float)

    def hess(self, points) -> np.ndarray:
        if self.hessian is None:
            raise NoAnalyticJacobian(f"{self.name} has no Hessian")
        points = np.asarray(points, dtype=float)
        return np.broadcast_to(self.hessian(points), points.shape + (self.dim,)).astype(float)


def _as_points(field: VectorFieldSpec, x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.ndim == 0 or x.shape[-1] != field.dim:
        raise DimensionMismatch(
            f"{field.name} expects points of dimension {field.dim}, got shape {x.shape}")
    return x


def _check_regular(field: VectorFieldSpec, x: np.ndarray) -> None:
    if field.singular_set is not None and np.any(field.singular_set.contains(x)):
        raise SingularPoint(f"{field.name} is undefined on its singular set", field=field.name)


def eval_field(field: VectorFieldSpec, x, t: float = 0.0) -> np.ndarray:
    """Evaluate a field at one point or a batch of points"""
    x = _as_points(field, x)
    _check_regular(field, x)
    value = np.asarray(field.eval(x, t), dtype=float)
    value = np.broadcast_to(value, x.shape).copy()
    if not np.all(np.isfinite(value)):
        raise SingularPoint(f"{field.name} is not finite at the requested point", field=field.name)
    return value


def central_difference_jacobian(field: VectorFieldSpec, x: np.ndarray, t=0.0,
                                h: float = DEFAULT_FD_STEP) -> np.ndarray:
    """(…, d, d) Jacobian by central differences, stencil kept off the singular set"""
    d = field.dim
    step = np.full(x.shape[:-1], float(h))
    if field.singular_set is not None:
        step = np.minimum(step, 0.5 * field.singular_set.distance(x))
    jac = np.empty(x.shape + (d,))
    for j in range(d):
        offset = np.zeros(x.shape)
        offset[..., j] = step
        forward = np.broadcast_to(field.eval(x + offset, t), x.shape)
        backward = np.broadcast_to(field.eval(x - offset, t), x.shape)
        jac[..., :, j] = (forward - backward) / (2.0 * step[..., None])
    return jac


def jacobian(field: VectorFieldSpec, x, t: float = 0.0, method: str = ANALYTIC,
             h: float = DEFAULT_FD_STEP) -> np.ndarray:
    """Entry (i, j) is dV_i/dx_j"""
    x = _as_points(field, x)
    _check_regular(field, x)
    if method == ANALYTIC:
        if field.jacobian_analytic is None:
            raise NoAnalyticJacobian(f"{field.name} has no analytic Jacobian")
        jac = np.asarray(field.jacobian_analytic(x, t), dtype=float)
        return np.broadcast_to(jac, x.shape + (field.dim,)).copy()
    if method == CENTRAL_DIFFERENCE:
        return central_difference_jacobian(field, x, t, h)
    raise ValueError(f"unknown differentiation method {method!r}")


def lie_bracket(pair: FieldPairSpec, x, t: float = 0.0, method: str = ANALYTIC,
                h: float = DEFAULT_FD_STEP) -> np.ndarray:
    """[V1, V2] = DV2 V1 - DV1 V2"""
    v1 = eval_field(pair.first, x, t)
    v2 = eval_field(pair.second, x, t)
    j1 = jacobian(pair.first, x, t, method, h)
    j2 = jacobian(pair.second, x, t, method, h)
    return np.einsum("...ij,...j->...i", j2, v1) - np.einsum("...ij,...j->...i", j1, v2)


def divergence(field: VectorFieldSpec, x, t: float = 0.0, method: str = ANALYTIC,
               h: float = DEFAULT_FD_STEP) -> np.ndarray:
    x = _as_points(field, x)
    if method == ANALYTIC and field.divergence_analytic is not None:
        _check_regular(field, x)
        div = np.asarray(field.divergence_analytic(x, t), dtype=float)
        return np.broadcast_to(div, x.shape[:-1]).copy()
    return np.trace(jacobian(field, x, t, method, h), axis1=-2, axis2=-1)


def jacobian_agreement(field: VectorFieldSpec, x, t: float = 0.0,
                       h: float = DEFAULT_FD_STEP) -> float:
    """Max relative gap between analytic and finite-difference Jacobians"""
    analytic = jacobian(field, x, t, ANALYTIC)
    numeric = jacobian(field, x, t, CENTRAL_DIFFERENCE, h)
    scale = np.maximum(1.0, np.max(np.abs(analytic), axis=(-2, -1), keepdims=True))
    return float(np.max(np.abs(analytic - numeric) / scale))


def points_off_singular(fields: Sequence[VectorFieldSpec], points: np.ndarray) -> np.ndarray:
    """Mask of points outside every field's exclusion tube"""
    points = np.asarray(points, dtype=float)
    mask = np.ones(points.shape[:-1], dtype=bool)
    for f in fields:
        if f.singular_set is not None:
            mask &= ~f.singular_set.in_tube(points)
    return mask
