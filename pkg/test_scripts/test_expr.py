import numpy as np
import pytest

from loopcont.errors import WeightDomainError, WeightExprError
from loopcont.expr import WeightExpr

X = np.linspace(0.0, 1.0, 11).reshape(-1, 1)


def test_precedence_and_associativity():
    assert WeightExpr("1 + 2 * 3").evaluate(X) == pytest.approx(np.full(11, 7.0))
    assert WeightExpr("8 / 4 / 2").evaluate(X) == pytest.approx(np.ones(11))
    assert WeightExpr("1 - 2 - 3").evaluate(X) == pytest.approx(np.full(11, -4.0))
    assert WeightExpr("(1 - 2) * 3").evaluate(X) == pytest.approx(np.full(11, -3.0))


def test_unary_minus_and_functions():
    x = X[:, 0]
    assert WeightExpr("--x").evaluate(X) == pytest.approx(x)
    assert WeightExpr("-x*2").evaluate(X) == pytest.approx(-2 * x)
    assert WeightExpr("sin(3*3.141592653589793*x) - 0.2").evaluate(X) == pytest.approx(np.sin(3 * np.pi * x) - 0.2)
    assert WeightExpr("abs(x - 0.5) + exp(0)").evaluate(X) == pytest.approx(np.abs(x - 0.5) + 1.0)
    assert WeightExpr("2.5e-1*cos(x)").evaluate(X) == pytest.approx(0.25 * np.cos(x))


def test_two_dimensional_variables():
    coords = np.array([[0.0, 1.0], [0.5, 0.5], [1.0, 0.0]])
    expr = WeightExpr("x*y - 0.1")
    assert expr.variables == {"x", "y"}
    assert expr.evaluate(coords) == pytest.approx([-0.1, 0.15, -0.1])


@pytest.mark.parametrize("source", ["sin x", "1 +", "x ** 2", "tan(x)", "(x", "x y"])
def test_parse_errors_carry_position(source):
    with pytest.raises(WeightExprError) as info:
        WeightExpr(source)
    assert info.value.position >= 0


def test_y_on_interval_is_rejected():
    with pytest.raises(WeightExprError):
        WeightExpr("x + y").evaluate(X)


def test_division_by_zero_reports_node():
    with pytest.raises(WeightDomainError) as info:
        WeightExpr("1 / (x - 0.5)").evaluate(X)
    assert info.value.node == 5


def test_overflow_reports_node():
    with pytest.raises(WeightDomainError):
        WeightExpr("exp(1000*x)").evaluate(X)


@pytest.mark.parametrize("source", ["x ^ 2", "log(x)", "sqrt(x)"])
def test_grammar_has_no_power_log_or_sqrt(source):
    with pytest.raises(WeightExprError):
        WeightExpr(source)
