#!/usr/bin/env python3
"""
Field Catalog
Builtin field pairs and single fields, addressable by name from the CLI and
config files.

Pairs:
    helix                            V1 = dx - y/(x^2+y^2) dz, V2 = dy + x/(x^2+y^2) dz
    graph_foliation(f=sin x cos y)   V1 = dx + f_x dz, V2 = dy + f_y dz
    graph_foliation(f=gaussian)      same family, f = exp(-(x^2+y^2)/2)
    commuting_linear                 rotation about z and diag(1, 1, -2)
    rotation_dilation                rotation about z and the identity
    heisenberg_shear                 dx and x dy in the plane (bracket dy)
"""

import logging
from typing import Callable, Dict, List, Optional

import numpy as np

from .errors import UnknownCatalogEntry
from .field_core import (FieldPairSpec, Hyperplane, ScalarFunctionSpec, SingularSet,
                         VectorFieldSpec, lie_bracket, points_off_singular)
from .flow_engine import (analytic_flow_graph_foliation, analytic_flow_linear,
                          helix_flow_with_crossings, principal_arctan_ratio)
from .streams import block_generator

logger = logging.getLogger("flowlab-catalog")


# Scalar functions for graph foliations

def _xy(p: np.ndarray):
    return p[..., 0], p[..., 1]


def _arctan_value(p):
    x, y = _xy(p)
    return principal_arctan_ratio(x, y)


def _arctan_gradient(p):
    x, y = _xy(p)
    r2 = x * x + y * y
    return np.stack([-y / r2, x / r2], axis=-1)


def _arctan_hessian(p):
    x, y = _xy(p)
    r4 = (x * x + y * y) ** 2
    mixed = (y * y - x * x) / r4
    return np.stack([np.stack([2 * x * y / r4, mixed], axis=-1),
                     np.stack([mixed, -2 * x * y / r4], axis=-1)], axis=-2)


ARCTAN_RATIO = ScalarFunctionSpec("arctan(y/x)", 2, _arctan_value, _arctan_gradient, _arctan_hessian)


def _sincos_hessian(p):
    x, y = _xy(p)
    diag = -np.sin(x) * np.cos(y)
    mixed = -np.cos(x) * np.sin(y)
    return np.stack([np.stack([diag, mixed], axis=-1), np.stack([mixed, diag], axis=-1)], axis=-2)


SIN_COS = ScalarFunctionSpec(
    "sin x cos y", 2,
    lambda p: np.sin(p[..., 0]) * np.cos(p[..., 1]),
    lambda p: np.stack([np.cos(p[..., 0]) * np.cos(p[..., 1]),
                        -np.sin(p[..., 0]) * np.sin(p[..., 1])], axis=-1),
    _sincos_hessian,
)


def _gauss(p):
    x, y = _xy(p)
    return np.exp(-0.5 * (x * x + y * y))


def _gauss_hessian(p):
    x, y = _xy(p)
    g = _gauss(p)
    return np.stack([np.stack([(x * x - 1) * g, x * y * g], axis=-1),
                     np.stack([x * y * g, (y * y - 1) * g], axis=-1)], axis=-2)


GAUSSIAN = ScalarFunctionSpec(
    "gaussian", 2, _gauss,
    lambda p: -_gauss(p)[..., None] * p[..., :2],
    _gauss_hessian,
)

SCALAR_FUNCTIONS: Dict[str, ScalarFunctionSpec] = {
    "arctan(y/x)": ARCTAN_RATIO,
    "sin x cos y": SIN_COS,
    "gaussian": GAUSSIAN,
}


# Audit functions in any dimension, for maximal-function and Sobolev audits

def _linear(dim: int) -> ScalarFunctionSpec:
    a = 0.5 ** np.arange(dim) * (-1.0) ** np.arange(dim)
    return ScalarFunctionSpec(
        "linear", dim,
        lambda p: np.asarray(p, dtype=float) @ a + 1.0,
        lambda p: np.broadcast_to(a, np.shape(p)),
        lambda p: np.zeros(np.shape(p) + (dim,)),
    )


def _quadratic(dim: int) -> ScalarFunctionSpec:
    q = np.arange(1.0, dim + 1.0)
    return ScalarFunctionSpec(
        "quadratic", dim,
        lambda p: 0.5 * np.sum(q * np.asarray(p, dtype=float) ** 2, axis=-1),
        lambda p: q * np.asarray(p, dtype=float),
        lambda p: np.broadcast_to(np.diag(q), np.shape(p) + (dim,)),
    )


def _bump_parts(p):
    p = np.asarray(p, dtype=float)
    gap = 1.0 - np.sum(p * p, axis=-1)
    inside = gap > 0
    safe = np.where(inside, gap, 1.0)
    value = np.where(inside, np.exp(-1.0 / safe), 0.0)
    return p, safe, value


def _bump_value(p):
    return _bump_parts(p)[2]


def _bump_gradient(p):
    p, safe, value = _bump_parts(p)
    return (-2.0 * value / safe ** 2)[..., None] * p


def _bump_hessian(p):
    p, safe, value = _bump_parts(p)
    dim = p.shape[-1]
    u = (-2.0 / safe ** 2)[..., None] * p
    du = (-2.0 / safe ** 2)[..., None, None] * np.eye(dim) \
        - (8.0 / safe ** 3)[..., None, None] * p[..., :, None] * p[..., None, :]
    return value[..., None, None] * (u[..., :, None] * u[..., None, :] + du)


def _bump(dim: int) -> ScalarFunctionSpec:
    """exp(-1/(1-|x|^2)) inside the unit ball, 0 outside"""
    return ScalarFunctionSpec("bump", dim, _bump_value, _bump_gradient, _bump_hessian)


def _norm_parts(p):
    p = np.asarray(p, dtype=float)
    r = np.linalg.norm(p, axis=-1)
    safe = np.where(r > 0, r, 1.0)
    return p, r, safe


def _norm_hessian(p):
    p, r, safe = _norm_parts(p)
    unit = p / safe[..., None]
    proj = np.eye(p.shape[-1]) - unit[..., :, None] * unit[..., None, :]
    return np.where((r > 0)[..., None, None], proj / safe[..., None, None], 0.0)


def _norm(dim: int) -> ScalarFunctionSpec:
    return ScalarFunctionSpec(
        "norm", dim,
        lambda p: np.linalg.norm(np.asarray(p, dtype=float), axis=-1),
        lambda p: _norm_parts(p)[0] / _norm_parts(p)[2][..., None],
        _norm_hessian,
    )


_AUDIT_FUNCTIONS: Dict[str, Callable[[int], ScalarFunctionSpec]] = {
    "linear": _linear,
    "quadratic": _quadratic,
    "bump": _bump,
    "norm": _norm,
}


def audit_function_names() -> List[str]:
    return list(_AUDIT_FUNCTIONS) + list(SCALAR_FUNCTIONS)


def get_audit_function(name: str, dim: int) -> ScalarFunctionSpec:
    """Dimension-generic audit function, or a planar scalar from SCALAR_FUNCTIONS"""
    if name in _AUDIT_FUNCTIONS:
        return _AUDIT_FUNCTIONS[name](dim)
    if name in SCALAR_FUNCTIONS:
        f = SCALAR_FUNCTIONS[name]
        if f.dim != dim:
            raise UnknownCatalogEntry(f"{name} is defined on R^{f.dim}, not R^{dim}")
        return f
    raise UnknownCatalogEntry(f"no test function named {name!r}", known=audit_function_names())


def _graph_component(f: ScalarFunctionSpec, which: int, name: str,
                     singular: Optional[SingularSet]) -> VectorFieldSpec:
    axis = which - 1

    def evaluate(p, t=0.0):
        p = np.asarray(p, dtype=float)
        v = np.zeros(p.shape)
        v[..., axis] = 1.0
        v[..., 2] = f.grad(p[..., :2])[..., axis]
        return v

    def jac(p, t=0.0):
        p = np.asarray(p, dtype=float)
        j = np.zeros(p.shape + (3,))
        hess = f.hess(p[..., :2])
        j[..., 2, 0] = hess[..., axis, 0]
        j[..., 2, 1] = hess[..., axis, 1]
        return j

    return VectorFieldSpec(
        name=name, dim=3, eval=evaluate, jacobian_analytic=jac,
        divergence_analytic=lambda p, t=0.0: np.zeros(np.shape(p)[:-1]),
        singular_set=singular,
        description=f"d{'xy'[axis]} + ({f.name})_{'xy'[axis]} dz",
    )


def graph_foliation_pair(f: ScalarFunctionSpec, name: Optional[str] = None,
                         singular: Optional[SingularSet] = None) -> FieldPairSpec:
    """Pair tangent to the graphs z = f(x, y) + C"""
    name = name or f"graph_foliation(f={f.name})"

    def oracle(which, points, t):
        return analytic_flow_graph_foliation(f, which, points, t), np.zeros(len(points), dtype=bool)

    return FieldPairSpec(name, _graph_component(f, 1, f"{name}.V1", singular),
                         _graph_component(f, 2, f"{name}.V2", singular),
                         bracket_vanishes_ae=True, oracle=oracle,
                         description=f"graph foliation of z = {f.name} + C")


def helix_pair() -> FieldPairSpec:
    singular = SingularSet((Hyperplane.coordinate(0, 3),))
    base = graph_foliation_pair(ARCTAN_RATIO, "helix", singular)
    return FieldPairSpec("helix", base.first, base.second, True,
                         oracle=lambda which, points, t: helix_flow_with_crossings(which, points, t),
                         description="helix counterexample, f = arctan(y/x) on the principal branch")


# Linear and affine fields

def linear_field(name: str, matrix, shift=None, description: str = "") -> VectorFieldSpec:
    """V(x) = A x + b"""
    matrix = np.asarray(matrix, dtype=float)
    shift = np.zeros(len(matrix)) if shift is None else np.asarray(shift, dtype=float)
    return VectorFieldSpec(
        name=name, dim=len(matrix),
        eval=lambda p, t=0.0: np.asarray(p, dtype=float) @ matrix.T + shift,
        jacobian_analytic=lambda p, t=0.0: np.broadcast_to(matrix, np.shape(p) + (len(matrix),)),
        divergence_analytic=lambda p, t=0.0: np.full(np.shape(p)[:-1], np.trace(matrix)),
        description=description or f"linear field {matrix.tolist()}",
    )


def constant_field(vector, name: Optional[str] = None) -> VectorFieldSpec:
    vector = np.asarray(vector, dtype=float)
    return linear_field(name or f"constant{tuple(vector.tolist())}",
                        np.zeros((len(vector), len(vector))), vector,
                        description="constant field")


def shifted_field(base: VectorFieldSpec, shift, name: Optional[str] = None) -> VectorFieldSpec:
    """base + c for a constant vector c; same Jacobian and singular set"""
    shift = np.asarray(shift, dtype=float)
    if shift.shape != (base.dim,):
        raise UnknownCatalogEntry(f"shift of length {shift.size} for a field on R^{base.dim}")
    return VectorFieldSpec(
        name=name or f"{base.name}+{tuple(shift.tolist())}",
        dim=base.dim,
        eval=lambda p, t=0.0: np.asarray(base.eval(p, t), dtype=float) + shift,
        jacobian_analytic=base.jacobian_analytic,
        divergence_analytic=base.divergence_analytic,
        singular_set=base.singular_set,
        time_dependent=base.time_dependent,
        description=f"{base.name} shifted by {shift.tolist()}",
    )


def affine_flow(matrix, shift=None) -> Callable:
    """Closed-form flow of x' = A x + b via the augmented matrix exponential"""
    matrix = np.asarray(matrix, dtype=float)
    d = len(matrix)
    augmented = np.zeros((d + 1, d + 1))
    augmented[:d, :d] = matrix
    if shift is not None:
        augmented[:d, d] = shift

    def flow(points, t):
        points = np.atleast_2d(np.asarray(points, dtype=float))
        lifted = np.hstack([points, np.ones((len(points), 1))])
        return analytic_flow_linear(augmented, lifted, t)[:, :d]
    return flow


def linear_pair(name: str, a, b, shift_a=None, shift_b=None, bracket_vanishes: bool = True,
                description: str = "") -> FieldPairSpec:
    flows = {1: affine_flow(a, shift_a), 2: affine_flow(b, shift_b)}

    def oracle(which, points, t):
        return flows[which](points, t), np.zeros(len(points), dtype=bool)

    return FieldPairSpec(name, linear_field(f"{name}.V1", a, shift_a),
                         linear_field(f"{name}.V2", b, shift_b),
                         bracket_vanishes, oracle, description)


ROTATION_Z = np.array([[0.0, -1.0, 0.0], [1.0, 0.0, 0.0], [0.0, 0.0, 0.0]])


def pulsed_rotation() -> VectorFieldSpec:
    """Time-dependent rotation (1 + sin(t)/2)(-y, x, 0)"""
    def rate(t):
        return 1.0 + 0.5 * np.sin(np.asarray(t, dtype=float))

    return VectorFieldSpec(
        name="pulsed_rotation", dim=3,
        eval=lambda p, t=0.0: rate(t)[..., None] * (np.asarray(p, dtype=float) @ ROTATION_Z.T),
        jacobian_analytic=lambda p, t=0.0: rate(t)[..., None, None] * ROTATION_Z,
        divergence_analytic=lambda p, t=0.0: np.zeros(np.shape(p)[:-1]),
        time_dependent=True,
        description="rotation about z with a periodic rate",
    )


_PAIR_BUILDERS: Dict[str, Callable[[], FieldPairSpec]] = {
    "helix": helix_pair,
    "graph_foliation(f=sin x cos y)": lambda: graph_foliation_pair(SIN_COS),
    "graph_foliation(f=gaussian)": lambda: graph_foliation_pair(GAUSSIAN),
    "commuting_linear": lambda: linear_pair(
        "commuting_linear", ROTATION_Z, np.diag([1.0, 1.0, -2.0]),
        description="rotation about z and a volume-preserving stretch"),
    "rotation_dilation": lambda: linear_pair(
        "rotation_dilation", ROTATION_Z, np.eye(3),
        description="rotation about z and isotropic dilation"),
    "heisenberg_shear": lambda: linear_pair(
        "heisenberg_shear", np.zeros((2, 2)), np.array([[0.0, 0.0], [1.0, 0.0]]),
        shift_a=[1.0, 0.0], bracket_vanishes=False,
        description="dx and x dy, bracket dy"),
}

_FIELD_BUILDERS: Dict[str, Callable[[], VectorFieldSpec]] = {
    "rotation": lambda: linear_field("rotation", ROTATION_Z, description="(-y, x, 0)"),
    "rotation_2d": lambda: linear_field("rotation_2d", [[0.0, -1.0], [1.0, 0.0]], description="(-y, x)"),
    "dilation": lambda: linear_field("dilation", np.eye(3), description="V(x) = x"),
    "saddle": lambda: linear_field("saddle", [[1.0, 0.0], [0.0, -1.0]], description="(x, -y)"),
    "pulsed_rotation": pulsed_rotation,
}


def builtin_catalog() -> List[FieldPairSpec]:
    return [build() for build in _PAIR_BUILDERS.values()]


def pair_names() -> List[str]:
    return list(_PAIR_BUILDERS)


def get_pair(name: str) -> FieldPairSpec:
    if name not in _PAIR_BUILDERS:
        raise UnknownCatalogEntry(f"no field pair named {name!r}", known=pair_names())
    return _PAIR_BUILDERS[name]()


def builtin_fields() -> Dict[str, VectorFieldSpec]:
    fields = {name: build() for name, build in _FIELD_BUILDERS.items()}
    for pair in builtin_catalog():
        fields[pair.first.name] = pair.first
        fields[pair.second.name] = pair.second
    return fields


def get_field(name: str) -> VectorFieldSpec:
    """Standalone field or a pair component such as 'helix.V1'"""
    if name in _FIELD_BUILDERS:
        return _FIELD_BUILDERS[name]()
    pair_name, _, part = name.rpartition(".")
    if pair_name in _PAIR_BUILDERS and part in ("V1", "V2"):
        return get_pair(pair_name).component(1 if part == "V1" else 2)
    raise UnknownCatalogEntry(f"no field named {name!r}")


def pair_oracle(pair: FieldPairSpec, which: int) -> Optional[Callable]:
    """Oracle for one component in the (points, t) form flow_points expects"""
    if pair.oracle is None:
        return None
    return lambda points, t: pair.oracle(which, points, t)


def verify_pair_metadata(pair: FieldPairSpec, samples: int = 1000, seed: int = 0,
                         half_width: float = 2.0) -> float:
    """Max bracket norm over seeded points in a box, off the exclusion tubes"""
    rng = block_generator(seed, 0, tag=f"verify:{pair.name}")
    pts = rng.uniform(-half_width, half_width, (samples, pair.dim))
    pts = pts[points_off_singular([pair.first, pair.second], pts)]
    bracket = lie_bracket(pair, pts)
    worst = float(np.max(np.linalg.norm(bracket, axis=1), initial=0.0))
    logger.debug(f"{pair.name}: max bracket norm {worst:.3g} over {len(pts)} points")
    return worst
