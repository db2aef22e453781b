"""Small arithmetic language for scenario files.

Expressions use + - * / ^ (or **), unary minus, parentheses, numbers, the
functions sin cos exp sqrt log, the constants pi and e, the indexed
variables q[i], v[i], a[i] (0-based), time t, and named scenario
parameters.  They are parsed with :mod:`ast`, checked against a whitelist
and compiled to functions that accept floats, dual numbers or symbols alike,
so the derivative engine can differentiate them.
"""

from __future__ import annotations

import ast
import math
from typing import Callable, Mapping, Optional, Sequence, Union

import numpy as np

from . import kernel

FUNCTIONS = {"sin": kernel.sin, "cos": kernel.cos, "exp": kernel.exp, "sqrt": kernel.sqrt, "log": kernel.log}
CONSTANTS = {"pi": math.pi, "e": math.e}
_BINOPS = (ast.Add, ast.Sub, ast.Mult, ast.Div, ast.Pow)
_UNARY = (ast.UAdd, ast.USub)


class ExpressionError(ValueError):
    """Malformed or unsupported expression; ``field`` names where it came from."""

    def __init__(self, field: str, message: str, source: str = ""):
        self.field = field
        self.source = source
        super().__init__(f"{field}: {message}" + (f" in {source!r}" if source else ""))


class _Checker(ast.NodeVisitor):
    def __init__(self, field, src, variables, params, n):
        self.field = field
        self.src = src
        self.variables = variables
        self.params = params
        self.n = n

    def fail(self, node, msg):
        col = getattr(node, "col_offset", None)
        where = f" (column {col + 1})" if col is not None else ""
        raise ExpressionError(self.field, msg + where, self.src)

    def generic_visit(self, node):
        self.fail(node, f"unsupported syntax {type(node).__name__}")

    def visit_Expression(self, node):
        self.visit(node.body)

    def visit_BinOp(self, node):
        if not isinstance(node.op, _BINOPS):
            self.fail(node, f"operator {type(node.op).__name__} not allowed")
        self.visit(node.left)
        self.visit(node.right)

    def visit_UnaryOp(self, node):
        if not isinstance(node.op, _UNARY):
            self.fail(node, f"operator {type(node.op).__name__} not allowed")
        self.visit(node.operand)

    def visit_Constant(self, node):
        if isinstance(node.value, bool) or not isinstance(node.value, (int, float)):
            self.fail(node, f"constant {node.value!r} is not a number")

    def visit_Name(self, node):
        name = node.id
        if name in self.variables:
            if name != "t":
                self.fail(node, f"{name} must be indexed, e.g. {name}[0]")
            return
        if name in CONSTANTS or name in self.params:
            return
        if name in FUNCTIONS:
            self.fail(node, f"function {name} must be called")
        self.fail(node, f"unknown name {name!r}")

    def visit_Subscript(self, node):
        if not (isinstance(node.value, ast.Name) and node.value.id in self.variables and node.value.id != "t"):
            self.fail(node, "only q[i], v[i] and a[i] may be indexed")
        idx = node.slice
        if not (isinstance(idx, ast.Constant) and isinstance(idx.value, int) and not isinstance(idx.value, bool)):
            self.fail(node, "index must be an integer literal")
        if not 0 <= idx.value < self.n:
            self.fail(node, f"index {idx.value} out of range for dimension {self.n}")

    def visit_Call(self, node):
        if not (isinstance(node.func, ast.Name) and node.func.id in FUNCTIONS):
            name = getattr(node.func, "id", "?")
            self.fail(node, f"unknown function {name!r}")
        if len(node.args) != 1 or node.keywords:
            self.fail(node, f"{node.func.id} takes exactly one argument")
        self.visit(node.args[0])


def parse(src: str, field: str, n: int, params: Mapping[str, float] = (), variables=("q", "v", "t")) -> ast.Expression:
    """Parse and validate one expression; raises :class:`ExpressionError`."""
    if not isinstance(src, str):
        raise ExpressionError(field, f"expected an expression string, got {type(src).__name__}")
    if not src.strip():
        raise ExpressionError(field, "empty expression")
    text = src.replace("^", "**")
    try:
        tree = ast.parse(text.strip(), mode="eval")
    except SyntaxError as exc:
        raise ExpressionError(field, f"syntax error at column {exc.offset}", src) from None
    params = dict(params)
    clash = set(params) & (set(variables) | set(FUNCTIONS) | set(CONSTANTS))
    if clash:
        raise ExpressionError(field, f"parameter names shadow builtins: {sorted(clash)}")
    _Checker(field, src, set(variables), params, n).visit(tree)
    return tree


def compile_scalar(
    src: str,
    field: str,
    n: int,
    params: Optional[Mapping[str, float]] = None,
    accel: bool = False,
    velocity: bool = True,
) -> Callable:
    """Compile to ``f(q, v, t)`` (or ``f(q, v, a, t)`` when ``accel``).

    ``velocity=False`` rejects expressions that mention v (holonomic data).
    """
    params = dict(params or {})
    variables = ("q", "v", "a", "t") if accel else ("q", "v", "t")
    if not velocity:
        variables = ("q", "t")
    tree = parse(src, field, n, params, variables)
    code = compile(tree, f"<{field}>", "eval")
    env = {"__builtins__": {}}
    env.update(FUNCTIONS)
    env.update(CONSTANTS)
    env.update({k: float(v) for k, v in params.items()})

    if accel:

        def f(q, v, a, t):
            return eval(code, env, {"q": q, "v": v, "a": a, "t": t})

    else:

        def f(q, v, t):
            return eval(code, env, {"q": q, "v": v, "t": t})

    f.__doc__ = src
    return f


def compile_vector(
    srcs: Union[str, Sequence[str]],
    field: str,
    n: int,
    params: Optional[Mapping[str, float]] = None,
    accel=False,
    velocity=True,
) -> Callable:
    """A list of expressions compiled into one function returning a list."""
    if isinstance(srcs, str):
        srcs = [srcs]
    if not srcs:
        raise ExpressionError(field, "at least one expression required")
    fs = [compile_scalar(s, f"{field}[{i}]", n, params, accel, velocity) for i, s in enumerate(srcs)]
    if accel:
        return lambda q, v, a, t: [f(q, v, a, t) for f in fs]
    return lambda q, v, t: [f(q, v, t) for f in fs]


def evaluate(src: str, params: Optional[Mapping[str, float]] = None, **values) -> float:
    """Convenience: evaluate an expression at numeric q, v, a, t."""
    q = np.atleast_1d(np.asarray(values.get("q", [0.0]), float))
    accel = "a" in values
    f = compile_scalar(src, "expression", len(q), params, accel=accel)
    v = np.atleast_1d(np.asarray(values.get("v", np.zeros_like(q)), float))
    t = float(values.get("t", 0.0))
    if accel:
        return float(f(q, v, np.atleast_1d(np.asarray(values["a"], float)), t))
    return float(f(q, v, t))
