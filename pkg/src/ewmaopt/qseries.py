"""q-Pochhammer symbols, q-factorials, and guarded power-series summation.

The closed-form run-length formulas in :mod:`ewmaopt.analytic` are power
series whose coefficients are built from the finite products

    (q; q)_n = prod_{j=1..n} (1 - q^j)          (q-Pochhammer symbol)
    [n]_q!   = prod_{j=1..n} (1 - q^j)/(1 - q)  (q-bracket factorial)

with q equal to one minus the smoothing factor.  Tables of these products
are grown incrementally and memoized per q so series loops never
re-multiply from scratch.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, NamedTuple

from .errors import NonConvergence

__all__ = [
    "SeriesTruncation",
    "DEFAULT_TRUNCATION",
    "QFactorialTable",
    "q_table",
    "q_pochhammer",
    "q_bracket_factorial",
    "SeriesSum",
    "sum_series",
]


@dataclass(frozen=True)
class SeriesTruncation:
    """Stopping policy for infinite-series evaluation.

    Summation stops once the latest term is below ``rel_tol`` times the
    running total for three consecutive terms; ``max_terms`` caps the work.
    """

    rel_tol: float = 1e-12
    max_terms: int = 500

    def __post_init__(self):
        if not self.rel_tol > 0:
            raise ValueError("rel_tol must be positive")
        if self.max_terms < 1:
            raise ValueError("max_terms must be at least 1")


DEFAULT_TRUNCATION = SeriesTruncation()


def _check_q(q: float) -> float:
    q = float(q)
    if not 0.0 <= q < 1.0:
        raise ValueError(f"q must lie in [0, 1), got {q}")
    return q


class QFactorialTable:
    """Incrementally grown values of (q;q)_n and [n]_q! for a fixed q.

    The tables satisfy (q;q)_0 = [0]_q! = 1 and are extended on demand.
    Entries are read-only once computed, so a table can be shared freely.
    """

    def __init__(self, q: float):
        self.q = _check_q(q)
        self._qpow = [1.0]        # q^n
        self._poch = [1.0]        # (q;q)_n
        self._brackets = [1.0]    # [n]_q!

    def _grow(self, n: int) -> None:
        one_minus_q = 1.0 - self.q
        while len(self._poch) <= n:
            m = len(self._poch)
            self._qpow.append(self._qpow[-1] * self.q)
            factor = 1.0 - self._qpow[m]
            self._poch.append(self._poch[-1] * factor)
            self._brackets.append(self._brackets[-1] * factor / one_minus_q)

    def q_power(self, n: int) -> float:
        """q^n."""
        self._grow(n)
        return self._qpow[n]

    def pochhammer(self, n: int) -> float:
        """(q;q)_n."""
        if n < 0:
            raise ValueError("n must be nonnegative")
        self._grow(n)
        return self._poch[n]

    def bracket_factorial(self, n: int) -> float:
        """[n]_q! = (q;q)_n / (1-q)^n."""
        if n < 0:
            raise ValueError("n must be nonnegative")
        self._grow(n)
        return self._brackets[n]


_TABLES: dict[float, QFactorialTable] = {}


def q_table(q: float) -> QFactorialTable:
    """Memoized :class:`QFactorialTable` for the given q."""
    q = _check_q(q)
    table = _TABLES.get(q)
    if table is None:
        table = _TABLES[q] = QFactorialTable(q)
    return table


def q_pochhammer(q: float, n: int) -> float:
    """(q;q)_n = prod_{j=1..n} (1 - q^j), with (q;q)_0 = 1."""
    return q_table(q).pochhammer(n)


def q_bracket_factorial(q: float, n: int) -> float:
    """[n]_q! = prod_{j=1..n} (1 - q^j)/(1 - q), with [0]_q! = 1."""
    return q_table(q).bracket_factorial(n)


class SeriesSum(NamedTuple):
    value: float
    terms: int


def sum_series(
    term: Callable[[int], float],
    trunc: SeriesTruncation = DEFAULT_TRUNCATION,
) -> SeriesSum:
    """Sum term(1) + term(2) + ... with compensated (Kahan) accumulation.

    ``term`` is called with n = 1, 2, ... in order; it may therefore carry
    incremental state.  Stops once |term(n)| <= rel_tol * |partial sum| for
    three consecutive n and reports the number of terms consumed.

    Raises:
        NonConvergence: the stop rule did not fire within ``max_terms``,
            or a term was not finite.  The partial sum is attached.
    """
    total = 0.0
    comp = 0.0
    streak = 0
    for n in range(1, trunc.max_terms + 1):
        t = float(term(n))
        if t != t or t in (float("inf"), float("-inf")):
            raise NonConvergence(
                f"non-finite series term at n={n}", partial=total, terms=n
            )
        y = t - comp
        s = total + y
        comp = (s - total) - y
        total = s
        if abs(t) <= trunc.rel_tol * abs(total):
            streak += 1
            if streak >= 3:
                return SeriesSum(total, n)
        else:
            streak = 0
    raise NonConvergence(
        f"series did not meet rel_tol={trunc.rel_tol:g} within "
        f"{trunc.max_terms} terms",
        partial=total,
        last_term=abs(t),
        terms=trunc.max_terms,
    )
