"""Tiny sandboxed expression language for fixture-driven mock tools.

Supports arithmetic, comparisons, boolean logic, indexing, list/dict
literals, comprehensions, and a short list of builtins (len, zip, round,
min, max, sum, abs, all, any, sorted, float, int). Names resolve only from
the provided environment; attribute access and arbitrary calls are refused,
so fixture files stay data-like.
"""

from __future__ import annotations

import ast
from typing import Any

_ALLOWED_CALLS = {"len": len, "min": min, "max": max, "sum": sum, "abs": abs,
                  "round": round, "sorted": sorted, "zip": zip, "all": all,
                  "any": any, "float": float, "int": int, "str": str,
                  "range": range, "enumerate": enumerate}

_ALLOWED_NODES = (
    ast.Expression, ast.BinOp, ast.UnaryOp, ast.BoolOp, ast.Compare,
    ast.IfExp, ast.Name, ast.Load, ast.Constant, ast.List, ast.Tuple,
    ast.Dict, ast.Subscript, ast.Slice, ast.Index, ast.Call,
    ast.ListComp, ast.comprehension, ast.Store,
    ast.Add, ast.Sub, ast.Mult, ast.Div, ast.FloorDiv, ast.Mod, ast.Pow,
    ast.USub, ast.UAdd, ast.Not, ast.And, ast.Or,
    ast.Eq, ast.NotEq, ast.Lt, ast.LtE, ast.Gt, ast.GtE, ast.In, ast.NotIn,
)


class ExpressionError(ValueError):
    pass


def _check(node: ast.AST) -> None:
    for child in ast.walk(node):
        if not isinstance(child, _ALLOWED_NODES):
            raise ExpressionError(
                f"disallowed syntax: {type(child).__name__}")
        if isinstance(child, ast.Call):
            if not isinstance(child.func, ast.Name) \
                    or child.func.id not in _ALLOWED_CALLS:
                raise ExpressionError("only whitelisted calls are allowed")


def safe_eval(expression: str, env: dict[str, Any]) -> Any:
    """Evaluate a restricted expression against ``env``."""
    try:
        tree = ast.parse(expression, mode="eval")
    except SyntaxError as exc:
        raise ExpressionError(f"syntax error: {exc}") from exc
    _check(tree)
    names = dict(_ALLOWED_CALLS)
    names.update(env)
    names["__builtins__"] = {}
    try:
        # env goes in globals: comprehension scopes cannot see eval locals
        return eval(compile(tree, "<fixture-expr>", "eval"), names)  # noqa: S307
    except ExpressionError:
        raise
    except Exception as exc:
        raise ExpressionError(f"evaluation failed: {exc}") from exc
