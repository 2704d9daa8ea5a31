import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from carousel.activation import (
    CELL_INPUT, CELL_OUTPUT, IDENTITY, LOGISTIC, TANH, Activation, ActivationTable, DomainError,
    Kind, derivative, evaluate, output_range,
)

ALL = [LOGISTIC, Activation(Kind.LOGISTIC, 2.5), CELL_INPUT, CELL_OUTPUT, IDENTITY, TANH]
finite = st.floats(-50, 50, allow_nan=False)


def fd(act, x, eps=1e-5):
    return (evaluate(act, x + eps) - evaluate(act, x - eps)) / (2 * eps)


def test_examples():
    assert evaluate(LOGISTIC, 0.0) == 0.5
    assert evaluate(CELL_INPUT, 0.0) == 0.0
    assert evaluate(CELL_OUTPUT, 0.0) == 0.0
    assert derivative(LOGISTIC, 0.0) == 0.25
    assert derivative(IDENTITY, 7.3) == 1.0
    d = derivative(CELL_INPUT, 1.2)
    assert abs(d - fd(CELL_INPUT, 1.2)) / abs(d) <= 1e-8


@pytest.mark.parametrize("act", ALL, ids=lambda a: a.token)
def test_derivative_matches_fd_on_grid(act):
    for x in np.linspace(-50, 50, 2001):
        d = derivative(act, x)
        assert abs(d - fd(act, x)) <= 1e-7 * max(1.0, abs(d))


@pytest.mark.parametrize("act", ALL, ids=lambda a: a.token)
@given(x=finite, y=finite)
def test_range_and_monotone(act, x, y):
    lo, hi = output_range(act)
    v = evaluate(act, x)
    if act.kind is Kind.IDENTITY:
        assert v == x
    else:
        # saturation may reach the closed endpoint in float64
        assert lo <= v <= hi
    if x <= y:
        assert evaluate(act, x) <= evaluate(act, y)


@given(x=finite)
def test_symmetries(x):
    assert math.isclose(evaluate(LOGISTIC, -x), 1 - evaluate(LOGISTIC, x), abs_tol=1e-15)
    assert math.isclose(evaluate(CELL_INPUT, -x), -evaluate(CELL_INPUT, x), abs_tol=1e-14)
    assert math.isclose(evaluate(CELL_OUTPUT, -x), -evaluate(CELL_OUTPUT, x), abs_tol=1e-15)


def test_logistic_derivative_identity_and_peak():
    xs = np.linspace(-10, 10, 4001)
    ds = derivative(LOGISTIC, xs)
    assert ds.max() == 0.25 and xs[np.argmax(ds)] == 0.0
    y = evaluate(Activation(Kind.LOGISTIC, 3.0), xs)
    np.testing.assert_allclose(derivative(Activation(Kind.LOGISTIC, 3.0), xs), 3.0 * y * (1 - y),
                               rtol=1e-14, atol=1e-300)


@pytest.mark.parametrize("bad", [math.nan, math.inf, -math.inf])
def test_non_finite_rejected(bad):
    for act in ALL:
        with pytest.raises(DomainError):
            evaluate(act, bad)
        with pytest.raises(DomainError):
            derivative(act, bad)


def test_arrays_keep_shape():
    x = np.arange(6.0).reshape(2, 3)
    assert evaluate(TANH, x).shape == (2, 3)
    assert isinstance(evaluate(TANH, 0.3), float)


def test_token_round_trip():
    for act in ALL:
        assert Activation.parse(act.token) == act
    with pytest.raises(ValueError):
        Activation(Kind.LOGISTIC, 0.0)


def test_table_matches_scalar_functions():
    acts = ALL + [LOGISTIC, CELL_INPUT]
    table = ActivationTable(acts, np.arange(len(acts)))
    s = np.random.default_rng(0).normal(0, 4, len(acts))
    f, df = table.f_df(s)
    for i, act in enumerate(acts):
        assert f[i] == evaluate(act, s[i])
        assert df[i] == pytest.approx(derivative(act, s[i]), rel=1e-14, abs=1e-300)
    np.testing.assert_array_equal(table.f(s), f)
    np.testing.assert_array_equal(table.df(s), df)
