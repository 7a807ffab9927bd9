"""Arithmetic expressions over reaction arguments, evaluated with numpy.

Grammar: numbers, the constants ``pi`` and ``e``, the symbols
x, y, s, t, xi1, xi2, nu1, nu2, the operators + - * / ** and the functions
abs, sign, pow, sin, cos, exp, sqrt, log. Anything else is rejected.
"""

from __future__ import annotations

import ast
import operator

import numpy as np

SYMBOLS = ("x", "y", "s", "t", "xi1", "xi2", "nu1", "nu2")
CONSTANTS = {"pi": np.pi, "e": np.e}
FUNCTIONS = {
    "abs": np.abs, "sign": np.sign, "pow": np.power, "sin": np.sin, "cos": np.cos,
    "exp": np.exp, "sqrt": np.sqrt, "log": np.log,
}
_BINOPS = {
    ast.Add: operator.add, ast.Sub: operator.sub, ast.Mult: operator.mul,
    ast.Div: operator.truediv, ast.Pow: np.power,
}
_UNARY = {ast.USub: operator.neg, ast.UAdd: operator.pos}


class ExpressionError(ValueError):
    def __init__(self, message: str, source: str, column: int | None = None):
        where = f" at column {column + 1}" if column is not None else ""
        super().__init__(f"{message}{where} in expression {source!r}")
        self.column = column


class Expression:
    """Compiled expression; call with keyword arrays for the symbols it uses."""

    def __init__(self, source: str, allowed=SYMBOLS):
        self.source = source
        self.allowed = tuple(allowed)
        try:
            tree = ast.parse(source.strip(), mode="eval")
        except SyntaxError as exc:
            raise ExpressionError(f"syntax error: {exc.msg}", source,
                                  (exc.offset or 1) - 1) from None
        self.symbols = set()
        self._fn = self._compile(tree.body)

    def _compile(self, node):
        src = self.source
        if isinstance(node, ast.Constant) and isinstance(node.value, (int, float)) \
                and not isinstance(node.value, bool):
            val = float(node.value)
            return lambda env: val
        if isinstance(node, ast.Name):
            if node.id in CONSTANTS:
                val = CONSTANTS[node.id]
                return lambda env: val
            if node.id in self.allowed:
                self.symbols.add(node.id)
                name = node.id
                return lambda env: env[name]
            raise ExpressionError(f"unknown symbol {node.id!r}", src, node.col_offset)
        if isinstance(node, ast.BinOp) and type(node.op) in _BINOPS:
            op = _BINOPS[type(node.op)]
            left, right = self._compile(node.left), self._compile(node.right)
            return lambda env: op(left(env), right(env))
        if isinstance(node, ast.UnaryOp) and type(node.op) in _UNARY:
            op = _UNARY[type(node.op)]
            arg = self._compile(node.operand)
            return lambda env: op(arg(env))
        if isinstance(node, ast.Call):
            if not isinstance(node.func, ast.Name) or node.func.id not in FUNCTIONS:
                raise ExpressionError("unsupported function", src, node.col_offset)
            if node.keywords:
                raise ExpressionError("keyword arguments are not allowed", src, node.col_offset)
            fn = FUNCTIONS[node.func.id]
            nargs = 2 if node.func.id == "pow" else 1
            if len(node.args) != nargs:
                raise ExpressionError(f"{node.func.id} takes {nargs} argument(s)", src,
                                      node.col_offset)
            args = [self._compile(a) for a in node.args]
            return lambda env: fn(*(a(env) for a in args))
        raise ExpressionError(f"unsupported syntax {type(node).__name__}", src,
                              getattr(node, "col_offset", None))

    def __call__(self, **env):
        with np.errstate(all="ignore"):
            out = self._fn(env)
        shape = np.broadcast(*[np.asarray(v) for v in env.values()]).shape if env else ()
        return np.broadcast_to(np.asarray(out, dtype=float), shape).copy()

    def __repr__(self):
        return f"Expression({self.source!r})"


def spatial_function(source: str):
    """Function of a point array ``(n, 2)`` from an expression in x and y."""
    expr = Expression(source, allowed=("x", "y"))

    def f(points):
        pts = np.atleast_2d(points)
        return expr(x=pts[:, 0], y=pts[:, 1])

    f.source = source
    return f
