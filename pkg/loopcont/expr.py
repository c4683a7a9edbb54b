"""
Grammar and evaluator for weight expressions such as ``sin(3*3.14159*x) - 0.2``.

Supported: numeric literals (with exponents), the variables ``x`` and ``y``,
binary ``+ - * /`` (left associative, usual precedence), unary minus,
parentheses and the functions ``sin``, ``cos``, ``exp``, ``abs`` (radians).
"""

import logging
from functools import lru_cache
from typing import Dict

import numpy as np
from pyparsing import (Forward, Keyword, Literal, ParseBaseException, Regex,
                       ZeroOrMore, one_of)

from .errors import WeightDomainError, WeightExprError

logger = logging.getLogger(__name__)

FUNCTIONS = {
    "sin": np.sin,
    "cos": np.cos,
    "exp": np.exp,
    "abs": np.abs,
}


class Node:

    def evaluate(self, env: Dict[str, np.ndarray]) -> np.ndarray:
        raise NotImplementedError

    def variables(self) -> set:
        return set()


class Number(Node):

    def __init__(self, s, loc, toks):
        self.value = float(toks[0])

    def evaluate(self, env):
        return np.full_like(next(iter(env.values())), self.value, dtype=float)

    def __repr__(self):
        return repr(self.value)


class Variable(Node):

    def __init__(self, s, loc, toks):
        self.name = toks[0]
        self.loc = loc

    def evaluate(self, env):
        return np.asarray(env[self.name], dtype=float)

    def variables(self):
        return {self.name}

    def __repr__(self):
        return f"Variable({self.name})"


class Function(Node):

    def __init__(self, s, loc, toks):
        self.name = toks[0]
        self.arg = toks[1]

    def evaluate(self, env):
        return FUNCTIONS[self.name](self.arg.evaluate(env))

    def variables(self):
        return self.arg.variables()

    def __repr__(self):
        return f"Function({self.name}, {self.arg!r})"


class Negate(Node):

    def __init__(self, operand: Node):
        self.operand = operand

    def evaluate(self, env):
        return -self.operand.evaluate(env)

    def variables(self):
        return self.operand.variables()

    def __repr__(self):
        return f"Negate({self.operand!r})"


class Operator(Node):

    def __init__(self, op: str, lhs: Node, rhs: Node):
        self.op = op
        self.lhs = lhs
        self.rhs = rhs

    def evaluate(self, env):
        left = self.lhs.evaluate(env)
        right = self.rhs.evaluate(env)
        if self.op == "+":
            return left + right
        if self.op == "-":
            return left - right
        if self.op == "*":
            return left * right
        zero = np.flatnonzero(right == 0.0)
        if zero.size:
            raise WeightDomainError(f"Division by zero in {self!r}", node=int(zero[0]))
        return left / right

    def variables(self):
        return self.lhs.variables() | self.rhs.variables()

    def __repr__(self):
        return f"Operator({self.op}, {self.lhs!r}, {self.rhs!r})"


def _make_unary(s, loc, toks):
    *signs, operand = toks
    node = operand
    for _ in signs:
        node = Negate(node)
    return node


def _make_op(s, loc, toks):
    node = toks[0]
    for i in range(1, len(toks), 2):
        node = Operator(toks[i], node, toks[i + 1])
    return node


@lru_cache(maxsize=1)
def make_grammar():
    number = Regex(r"(\d+\.?\d*|\.\d+)([eE][+-]?\d+)?")
    variable = Keyword("x") | Keyword("y")
    function_name = one_of(list(FUNCTIONS), as_keyword=True)

    lparent = Literal("(").suppress()
    rparent = Literal(")").suppress()
    minus = Literal("-")
    add_op = one_of("+ -")
    mul_op = one_of("* /")

    expr = Forward()
    call = function_name + lparent + expr + rparent
    primary_expr = call | number | variable | (lparent + expr + rparent)
    unary_expr = ZeroOrMore(minus) + primary_expr
    mult_expr = unary_expr + ZeroOrMore(mul_op + unary_expr)
    add_expr = mult_expr + ZeroOrMore(add_op + mult_expr)

    call.set_parse_action(Function)
    number.set_parse_action(Number)
    variable.set_parse_action(Variable)
    unary_expr.set_parse_action(_make_unary)
    mult_expr.set_parse_action(_make_op)
    add_expr.set_parse_action(_make_op)

    expr <<= add_expr
    return expr


class WeightExpr:
    """Parsed weight expression; evaluation is vectorised over node coordinates"""

    def __init__(self, source: str):
        self.source = source
        try:
            self.tree = make_grammar().parse_string(source, parse_all=True)[0]
        except ParseBaseException as e:
            raise WeightExprError(f"Cannot parse weight expression {source!r}: {e.msg}", e.loc) from e

    @property
    def variables(self) -> set:
        return self.tree.variables()

    def evaluate(self, coords: np.ndarray) -> np.ndarray:
        """Evaluate at the rows of ``coords`` (shape (m, dim))"""
        coords = np.atleast_2d(np.asarray(coords, dtype=float))
        dim = coords.shape[1]
        if "y" in self.variables and dim < 2:
            raise WeightExprError(f"Expression {self.source!r} uses y on a 1D domain",
                                  self.source.index("y"))
        env = {"x": coords[:, 0]}
        if dim > 1:
            env["y"] = coords[:, 1]
        with np.errstate(over="ignore", invalid="ignore"):
            values = np.asarray(self.tree.evaluate(env), dtype=float)
        bad = np.flatnonzero(~np.isfinite(values))
        if bad.size:
            raise WeightDomainError(f"Expression {self.source!r} is not finite", node=int(bad[0]))
        return values

    def __repr__(self):
        return f"WeightExpr({self.source!r})"
