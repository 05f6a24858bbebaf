"""Safe evaluation of the small arithmetic expressions used in config files.

Configs describe potentials, coupling coefficients and nonlinear coupling
terms as strings such as ``"p**2 + 0.5*sin(x)"`` or ``"u1**2 - u2 - 1"``.
They are parsed with :mod:`ast`, checked against a whitelist of node types
and names, and compiled into vectorized numpy callables.
"""

from __future__ import annotations

import ast
import math
from typing import Callable, Sequence

import numpy as np

_FUNCTIONS = {
    "sin": np.sin,
    "cos": np.cos,
    "tan": np.tan,
    "exp": np.exp,
    "log": np.log,
    "sqrt": np.sqrt,
    "abs": np.abs,
    "tanh": np.tanh,
    "sinh": np.sinh,
    "cosh": np.cosh,
    "arctan": np.arctan,
    "minimum": np.minimum,
    "maximum": np.maximum,
}
_CONSTANTS = {"pi": math.pi, "e": math.e}

_ALLOWED_NODES = (
    ast.Expression,
    ast.BinOp,
    ast.UnaryOp,
    ast.Call,
    ast.Name,
    ast.Load,
    ast.Constant,
    ast.Add,
    ast.Sub,
    ast.Mult,
    ast.Div,
    ast.Pow,
    ast.USub,
    ast.UAdd,
)


class ExpressionError(ValueError):
    """Raised for malformed or disallowed expressions."""


def compile_expression(source: str | float | int, variables: Sequence[str]) -> Callable[..., np.ndarray]:
    """Compile ``source`` into a function of the named ``variables``.

    Numbers are accepted as constant expressions.  The returned callable
    takes one positional argument per variable and broadcasts like numpy.

    >>> f = compile_expression("x**2 + y", ["x", "y"])
    >>> float(f(2.0, 1.0))
    5.0
    """
    if isinstance(source, (int, float)) and not isinstance(source, bool):
        value = float(source)
        return lambda *args: value + 0.0 * _first(args)
    if not isinstance(source, str):
        raise ExpressionError(f"expected an expression string or number, got {type(source).__name__}")
    try:
        tree = ast.parse(source.strip(), mode="eval")
    except SyntaxError as exc:
        raise ExpressionError(f"cannot parse expression {source!r}: {exc.msg}") from None
    names = set(variables)
    for node in ast.walk(tree):
        if not isinstance(node, _ALLOWED_NODES):
            raise ExpressionError(f"disallowed syntax {type(node).__name__} in {source!r}")
        if isinstance(node, ast.Call):
            if not isinstance(node.func, ast.Name) or node.func.id not in _FUNCTIONS or node.keywords:
                raise ExpressionError(f"unsupported function call in {source!r}")
        elif isinstance(node, ast.Name):
            if node.id not in names and node.id not in _FUNCTIONS and node.id not in _CONSTANTS:
                raise ExpressionError(f"unknown name {node.id!r} in {source!r}")
        elif isinstance(node, ast.Constant) and not isinstance(node.value, (int, float)):
            raise ExpressionError(f"only numeric literals are allowed in {source!r}")
    code = compile(tree, "<config-expression>", "eval")
    env = {"__builtins__": {}, **_FUNCTIONS, **_CONSTANTS}
    varnames = list(variables)

    def evaluate(*args):
        if len(args) != len(varnames):
            raise TypeError(f"expected {len(varnames)} arguments ({', '.join(varnames)})")
        local = dict(zip(varnames, (np.asarray(a, dtype=float) for a in args)))
        out = eval(code, env, local)  # noqa: S307 - AST whitelisted above
        return np.asarray(out, dtype=float) + 0.0 * _first(args)

    evaluate.source = source  # type: ignore[attr-defined]
    return evaluate


def _first(args) -> np.ndarray | float:
    if not args:
        return 0.0
    shape = np.broadcast_shapes(*(np.shape(a) for a in args))
    return np.zeros(shape)
