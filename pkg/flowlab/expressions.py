#!/usr/bin/env python3
"""
Field Expressions
User-defined vector fields from a small key = value text format. Each
component is checked against a whitelist of syntax nodes with ast before
sympy sees it; the Jacobian comes from symbolic differentiation.
"""

import ast
import logging
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Union

import numpy as np
import sympy as sp
from dotenv import dotenv_values
from sympy.parsing.sympy_parser import parse_expr

from .errors import ExpressionError
from .field_core import FieldPairSpec, Hyperplane, SingularSet, VectorFieldSpec

logger = logging.getLogger("flowlab-expressions")

ALLOWED_FUNCTIONS = {
    "sin": sp.sin, "cos": sp.cos, "tan": sp.tan, "exp": sp.exp, "log": sp.log,
    "sqrt": sp.sqrt, "atan": sp.atan, "arctan": sp.atan, "abs": sp.Abs,
}
ALLOWED_NODES = (
    ast.Expression, ast.BinOp, ast.UnaryOp, ast.Constant, ast.Name, ast.Call, ast.Load,
    ast.Add, ast.Sub, ast.Mult, ast.Div, ast.Pow, ast.USub, ast.UAdd,
)
SHORT_NAMES = ("x", "y", "z")


def coordinate_names(dim: int) -> List[str]:
    return list(SHORT_NAMES[:dim]) if dim <= 3 else [f"x{i + 1}" for i in range(dim)]


def check_expression(text: str, variables: Sequence[str]) -> None:
    """Reject anything beyond arithmetic, known functions and known variables"""
    try:
        tree = ast.parse(text.replace("^", "**"), mode="eval")
    except SyntaxError as e:
        raise ExpressionError(f"cannot parse {text!r}: {e.msg}") from e
    allowed_names = set(variables) | {"t"} | set(ALLOWED_FUNCTIONS)
    for node in ast.walk(tree):
        if not isinstance(node, ALLOWED_NODES):
            raise ExpressionError(f"{type(node).__name__} is not allowed in {text!r}")
        if isinstance(node, ast.Constant) and not isinstance(node.value, (int, float)):
            raise ExpressionError(f"only numeric constants are allowed in {text!r}")
        if isinstance(node, ast.Name) and node.id not in allowed_names:
            raise ExpressionError(f"unknown name {node.id!r} in {text!r}")
        if isinstance(node, ast.Call):
            if not isinstance(node.func, ast.Name) or node.func.id not in ALLOWED_FUNCTIONS:
                raise ExpressionError(f"unsupported function call in {text!r}")
            if node.keywords or len(node.args) != 1:
                raise ExpressionError(f"functions take exactly one argument in {text!r}")


def _vectorize(func, dim: int):
    def evaluate(p, t=0.0):
        p = np.asarray(p, dtype=float)
        args = [p[..., i] for i in range(dim)] + [np.asarray(t, dtype=float)]
        with np.errstate(divide="ignore", invalid="ignore"):
            values = func(*args)
        shape = p.shape[:-1]
        return np.stack([np.broadcast_to(np.asarray(v, dtype=float), shape) for v in values], axis=-1)
    return evaluate


def _jacobian_evaluator(rows, dim: int):
    row_funcs = [_vectorize(row, dim) for row in rows]

    def evaluate(p, t=0.0):
        return np.stack([f(p, t) for f in row_funcs], axis=-2)
    return evaluate


def parse_singular(text: Optional[str], variables: Sequence[str], epsilon: float) -> Optional[SingularSet]:
    """'x=0; y=1.5' becomes coordinate hyperplanes"""
    if not text:
        return None
    planes = []
    for piece in text.replace(",", ";").split(";"):
        piece = piece.strip()
        if not piece:
            continue
        name, _, value = piece.partition("=")
        name = name.strip()
        if name not in variables:
            raise ExpressionError(f"singular set refers to unknown coordinate {name!r}")
        try:
            planes.append(Hyperplane.coordinate(list(variables).index(name), len(variables), float(value)))
        except ValueError as e:
            raise ExpressionError(f"bad singular plane {piece!r}") from e
    return SingularSet(tuple(planes), epsilon)


def field_from_expressions(name: str, components: Sequence[str], singular: Optional[str] = None,
                           epsilon: float = 1e-3) -> VectorFieldSpec:
    dim = len(components)
    if dim < 1:
        raise ExpressionError(f"field {name!r} has no components")
    variables = coordinate_names(dim)
    for text in components:
        check_expression(text, variables)
    symbols = sp.symbols(variables, real=True)
    t = sp.Symbol("t", real=True)
    local = {v: s for v, s in zip(variables, symbols)}
    local.update(ALLOWED_FUNCTIONS)
    local["t"] = t
    try:
        exprs = [parse_expr(text.replace("^", "**"), local_dict=local) for text in components]
    except (sp.SympifyError, TypeError, SyntaxError) as e:
        raise ExpressionError(f"sympy rejected a component of {name!r}: {e}") from e

    args = list(symbols) + [t]
    matrix = sp.Matrix(exprs).jacobian(sp.Matrix(symbols))
    rows = [sp.lambdify(args, list(matrix.row(i)), "numpy") for i in range(dim)]
    divergence_expr = sum(matrix[i, i] for i in range(dim))
    div_func = sp.lambdify(args, [divergence_expr], "numpy")
    eval_func = sp.lambdify(args, exprs, "numpy")
    div_eval = _vectorize(div_func, dim)

    time_dependent = any(t in e.free_symbols for e in exprs)
    logger.info(f"loaded field {name} (dim {dim}, time dependent: {time_dependent})")
    return VectorFieldSpec(
        name=name, dim=dim,
        eval=_vectorize(eval_func, dim),
        jacobian_analytic=_jacobian_evaluator(rows, dim),
        divergence_analytic=lambda p, t=0.0: div_eval(p, t)[..., 0],
        singular_set=parse_singular(singular, variables, epsilon),
        time_dependent=time_dependent,
        description=", ".join(components),
    )


def load_field_expression(path: Union[str, Path]) -> VectorFieldSpec:
    """Read a field file: name, dim, V1..Vd, optional singular and epsilon"""
    path = Path(path)
    if not path.is_file():
        raise ExpressionError(f"field file {path} does not exist")
    values: Dict[str, Optional[str]] = dotenv_values(path)
    try:
        dim = int(values.get("dim") or 0)
    except ValueError as e:
        raise ExpressionError(f"{path}: dim must be an integer") from e
    components = [values.get(f"V{i + 1}") for i in range(dim)]
    if dim < 1 or any(c is None or c.strip() == "" for c in components):
        raise ExpressionError(f"{path}: need dim and components V1..V{dim}")
    epsilon = float(values.get("epsilon") or 1e-3)
    return field_from_expressions(values.get("name") or path.stem, components,
                                  values.get("singular"), epsilon)


def load_pair_expressions(first: Union[str, Path], second: Union[str, Path], name: str = "custom",
                          bracket_vanishes_ae: bool = False) -> FieldPairSpec:
    return FieldPairSpec(name, load_field_expression(first), load_field_expression(second),
                         bracket_vanishes_ae, description=f"{first} and {second}")
