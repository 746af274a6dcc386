import math

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ewmaopt.errors import NonConvergence
from ewmaopt.qseries import (
    QFactorialTable,
    SeriesTruncation,
    q_bracket_factorial,
    q_pochhammer,
    sum_series,
)


def test_pochhammer_empty_product_is_one():
    assert q_pochhammer(0.3, 0) == 1.0


def test_pochhammer_q_zero():
    assert q_pochhammer(0.0, 7) == 1.0


def test_pochhammer_direct_value():
    assert q_pochhammer(0.5, 2) == pytest.approx(0.375, rel=1e-15)


def test_pochhammer_rejects_bad_q():
    with pytest.raises(ValueError):
        q_pochhammer(1.0, 3)
    with pytest.raises(ValueError):
        q_pochhammer(-0.1, 3)


def test_bracket_factorial_q_zero():
    assert q_bracket_factorial(0.0, 5) == 1.0


def test_bracket_factorial_direct_value():
    # [1]_q = 1, [2]_0.5 = (1 - 0.25)/0.5 = 1.5
    assert q_bracket_factorial(0.5, 2) == pytest.approx(1.5, rel=1e-15)


def test_bracket_factorial_against_product_oracle():
    q, n = 0.9, 3
    oracle = 1.0
    for j in range(1, n + 1):
        oracle *= (1.0 - q**j) / (1.0 - q)
    assert q_bracket_factorial(q, n) == pytest.approx(oracle, rel=1e-14)


@given(
    q=st.floats(min_value=0.0, max_value=0.999, allow_nan=False),
    n=st.integers(min_value=0, max_value=60),
)
@settings(max_examples=200, deadline=None)
def test_pochhammer_recurrence(q, n):
    expected = q_pochhammer(q, n) * (1.0 - q ** (n + 1))
    assert q_pochhammer(q, n + 1) == pytest.approx(expected, rel=1e-13, abs=1e-300)


@given(
    q=st.floats(min_value=0.0, max_value=0.99, allow_nan=False),
    n=st.integers(min_value=0, max_value=50),
)
@settings(max_examples=200, deadline=None)
def test_bracket_pochhammer_identity(q, n):
    lhs = q_bracket_factorial(q, n) * (1.0 - q) ** n
    assert lhs == pytest.approx(q_pochhammer(q, n), rel=1e-14, abs=1e-300)


def test_monotonicity_in_n():
    table = QFactorialTable(0.7)
    poch = [table.pochhammer(n) for n in range(40)]
    brack = [table.bracket_factorial(n) for n in range(40)]
    assert all(a >= b > 0 for a, b in zip(poch, poch[1:]))
    assert all(b >= a for a, b in zip(brack, brack[1:]))


def test_pochhammer_bounded_below_by_limit():
    # (q;q)_n decreases to (q;q)_inf > 0
    table = QFactorialTable(0.5)
    tail = table.pochhammer(200)
    assert tail > 0.28  # (0.5;0.5)_inf ~= 0.2887880951


def test_sum_series_exponential():
    a = 2.0
    state = {"p": 1.0}

    def term(n):
        state["p"] *= a / n
        return state["p"]

    value, terms = sum_series(term)
    assert value == pytest.approx(math.e**2 - 1.0, rel=1e-12)
    assert terms < 60


def test_sum_series_all_zero_terms():
    value, terms = sum_series(lambda n: 0.0)
    assert value == 0.0
    assert terms == 3


def test_sum_series_constant_terms_do_not_converge():
    with pytest.raises(NonConvergence) as exc:
        sum_series(lambda n: 1.0, SeriesTruncation(max_terms=50))
    assert exc.value.terms == 50
    assert exc.value.partial == pytest.approx(50.0)


def test_sum_series_rejects_non_finite_terms():
    with pytest.raises(NonConvergence):
        sum_series(lambda n: math.inf)


def test_truncation_validation():
    with pytest.raises(ValueError):
        SeriesTruncation(rel_tol=0.0)
    with pytest.raises(ValueError):
        SeriesTruncation(max_terms=0)
