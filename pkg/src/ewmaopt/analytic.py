"""Exact operating characteristics of the one-sided EWMA chart.

The chart tracks Z_n = (1-lambda) Z_{n-1} + lambda X_n from a headstart
Z_0 = z and stops at the first n with Z_n >= A.  For exponential
observations every performance measure of interest has a closed form:

* ``arl``     expected run length under the no-change measure,
* ``add0``    expected delay when the change is in effect from the start,
* ``rho_k``   survival probability P(T > k) under no change,
* ``delta_k`` expected residual delay E[(T - k)^+] when the change
              happens after k pre-change observations,
* ``sadd``    supremum over k of the conditional delay delta_k / rho_k,
* ``psi``     sum over k of delta_k (integral delay),
* ``stadd``   stationary delay psi / arl in the repeated-application regime.

All series are written in a scaled form whose terms involve only the
q-Pochhammer products (alpha; alpha)_n <= 1 and Poisson-like weights
u^n / n!, which keeps them overflow-free for every design this package
targets.  The delay-coefficient recursion is still subject to genuine
floating-point cancellation when A/lambda is large; the boundary identity
delta_k(A/alpha) = 0 is checked after every step and a
:class:`~ewmaopt.errors.CancellationDetected` is raised when it degrades,
so callers can switch to the quadrature solver (see
:mod:`ewmaopt.evaluate`) or to the extended-precision path.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, replace
from typing import Iterable, Iterator, NamedTuple

import numpy as np
from scipy.special import gammaln, xlogy

from .errors import CancellationDetected, DegenerateDesignWarning, NonConvergence
from .model import ExpChangeModel
from .qseries import DEFAULT_TRUNCATION, SeriesTruncation, q_table, sum_series

__all__ = [
    "EwmaDesign",
    "PerformanceProfile",
    "StabilizationRule",
    "DEFAULT_RULE",
    "SaddResult",
    "SeriesCoefficients",
    "SurvivalSystem",
    "arl",
    "add0",
    "psi",
    "stadd",
    "survival_coeffs",
    "rho_k",
    "rho_sequence",
    "delta0_coeffs",
    "delta_k_coeffs",
    "delta_value",
    "delta_boundary_residuals",
    "sadd",
    "performance_profile",
]


@dataclass(frozen=True)
class EwmaDesign:
    """One-sided EWMA chart: smoothing factor, headstart, threshold."""

    lam: float
    z: float
    threshold: float

    def __post_init__(self):
        if not 0.0 < self.lam <= 1.0:
            raise ValueError(f"smoothing factor must be in (0, 1], got {self.lam}")
        if not self.threshold > 0.0:
            raise ValueError(f"threshold must be positive, got {self.threshold}")
        if self.z < 0.0:
            raise ValueError(f"headstart must be nonnegative, got {self.z}")

    @property
    def alpha(self) -> float:
        return 1.0 - self.lam

    @property
    def is_degenerate(self) -> bool:
        """True when the chart crosses the threshold on the first step a.s."""
        return self.alpha * self.z >= self.threshold

    @property
    def headstart_cap(self) -> float:
        """Largest headstart with a nondegenerate run, A / alpha."""
        if self.alpha == 0.0:
            return math.inf
        return self.threshold / self.alpha


@dataclass(frozen=True)
class PerformanceProfile:
    """Operating characteristics of one design, delays indexed by change point."""

    arl: float
    add: tuple
    sadd: float
    psi: float
    stadd: float
    k_at_sup: int


@dataclass(frozen=True)
class StabilizationRule:
    """When to stop extending the conditional-delay sequence ADD_k.

    The sequence settles onto the quasi-stationary plateau; iteration stops
    once the relative step |ADD_k - ADD_{k-1}| stays below ``rel_tol`` for
    ``consecutive`` values of k, and fails with NonConvergence at ``k_max``.
    """

    rel_tol: float = 1e-6
    consecutive: int = 3
    k_max: int = 5000


DEFAULT_RULE = StabilizationRule()


class SaddResult(NamedTuple):
    sadd: float
    k_at_sup: int
    profile: PerformanceProfile


def _warn_degenerate(design: EwmaDesign, what: str) -> None:
    warnings.warn(
        f"degenerate design (alpha*z = {design.alpha * design.z:g} >= "
        f"A = {design.threshold:g}) stops at the first observation; "
        f"{what} returns its one-step value",
        DegenerateDesignWarning,
        stacklevel=3,
    )


def _poisson_weights(mu: float, n: np.ndarray) -> np.ndarray:
    """exp(-mu) mu^n / n! evaluated stably, including mu = 0."""
    with np.errstate(divide="ignore"):
        return np.exp(xlogy(n, mu) - mu - gammaln(n + 1.0))


# ---------------------------------------------------------------------------
# ARL and ADD_0


def arl(design: EwmaDesign, trunc: SeriesTruncation = DEFAULT_TRUNCATION) -> float:
    """Average run length to false alarm from headstart z.

    Evaluates 1 + sum_{n>=1} (alpha;alpha)_{n-1} (a^n - b^n)/n! with
    a = A/lambda and b = alpha z/lambda.  All terms are nonnegative, so a
    partial sum is a lower bound; NonConvergence carries it.
    """
    if design.is_degenerate:
        _warn_degenerate(design, "arl")
        return 1.0
    table = q_table(design.alpha)
    a = design.threshold / design.lam
    b = design.alpha * design.z / design.lam
    pa = pb = 1.0

    def term(n: int) -> float:
        nonlocal pa, pb
        pa *= a / n
        pb *= b / n
        return table.pochhammer(n - 1) * (pa - pb)

    try:
        total, _ = sum_series(term, trunc)
    except NonConvergence as exc:
        raise NonConvergence(
            f"run-length series did not converge for lam={design.lam:g}, "
            f"z={design.z:g}, A={design.threshold:g}",
            partial=1.0 + (exc.partial or 0.0),
            last_term=exc.last_term,
            terms=exc.terms,
        ) from exc
    return 1.0 + total


def add0(
    design: EwmaDesign,
    model: ExpChangeModel,
    trunc: SeriesTruncation = DEFAULT_TRUNCATION,
) -> float:
    """Expected detection delay when all observations are post-change.

    Same series as :func:`arl` with a and b divided by the post-change
    mean 1 + theta.
    """
    if design.is_degenerate:
        _warn_degenerate(design, "add0")
        return 1.0
    table = q_table(design.alpha)
    m = model.post_mean
    a = design.threshold / (design.lam * m)
    b = design.alpha * design.z / (design.lam * m)
    pa = pb = 1.0

    def term(n: int) -> float:
        nonlocal pa, pb
        pa *= a / n
        pb *= b / n
        return table.pochhammer(n - 1) * (pa - pb)

    total, _ = sum_series(term, trunc)
    return 1.0 + total


# ---------------------------------------------------------------------------
# Integral delay psi and the stationary delay


def psi(
    design: EwmaDesign,
    model: ExpChangeModel,
    trunc: SeriesTruncation = DEFAULT_TRUNCATION,
) -> float:
    """Integral average detection delay, the sum over k of delta_k(z)."""
    if design.is_degenerate:
        _warn_degenerate(design, "psi")
        return 1.0
    lam, alpha, A, z = design.lam, design.alpha, design.threshold, design.z
    table = q_table(alpha)
    r = 1.0 / model.post_mean
    ell0 = arl(replace(design, z=0.0), trunc)
    d00 = add0(replace(design, z=0.0), model, trunc)
    a = A / lam
    b = alpha * z / lam
    pa = pb = 1.0
    rn = 1.0
    s_prev = 0.0  # s_{n-1}, running geometric-over-(1 - alpha^n) sum

    def term(n: int) -> float:
        nonlocal pa, pb, rn, s_prev
        pa *= a / n
        pb *= b / n
        rn *= r
        g = table.pochhammer(n - 1)
        val = 0.0
        if n >= 2:
            val -= g * pa * s_prev
        val -= g * pb * (rn + d00 - s_prev)
        apow = table.q_power(n)
        s_prev += rn * apow / (1.0 - apow)
        return val

    total, _ = sum_series(term, trunc)
    return ell0 * d00 + total


def stadd(
    design: EwmaDesign,
    model: ExpChangeModel,
    trunc: SeriesTruncation = DEFAULT_TRUNCATION,
) -> float:
    """Stationary average detection delay psi(z) / arl(z)."""
    if design.is_degenerate:
        _warn_degenerate(design, "stadd")
        return 1.0
    return psi(design, model, trunc) / arl(design, trunc)


# ---------------------------------------------------------------------------
# Survival probabilities rho_k


@dataclass(frozen=True)
class SurvivalSystem:
    """Toeplitz system whose solution drives the survival probabilities.

    ``toeplitz_column`` holds h_i(A) for i = 1..k-1, the strictly-lower
    band of the unit-diagonal system (I + M) c = 1.
    """

    k: int
    toeplitz_column: np.ndarray
    c: np.ndarray


class _SurvivalChain:
    """Grows c_1..c_k and evaluates rho_k(z) one step at a time."""

    def __init__(self, design: EwmaDesign, z: float | None = None):
        self.design = design
        self.z = design.z if z is None else float(z)
        self._table = q_table(design.alpha)
        self.k = 0
        cap = 256
        self._h = np.zeros(cap)  # h_i(A), slot 0 unused
        self._g = np.zeros(cap)  # h_m(z) * (1 - alpha^m)
        self._c = np.zeros(cap)
        self.rho = 1.0

    def _ensure(self, n: int) -> None:
        if n >= self._h.size:
            cap = max(2 * self._h.size, n + 1)
            for name in ("_h", "_g", "_c"):
                arr = np.zeros(cap)
                old = getattr(self, name)
                arr[: old.size] = old
                setattr(self, name, arr)

    def advance(self) -> float:
        d = self.design
        k = self.k + 1
        self._ensure(k)
        apk = self._table.q_power(k)
        poch_k = self._table.pochhammer(k)
        self._h[k] = math.exp(-d.threshold * (1.0 - apk) / d.lam) / poch_k
        self._g[k] = (
            math.exp((apk * self.z - d.threshold) / d.lam) / poch_k * (1.0 - apk)
        )
        self._c[k] = 1.0 - float(np.dot(self._h[1:k], self._c[1:k][::-1]))
        self.rho = 1.0 - float(np.dot(self._c[1 : k + 1], self._g[1 : k + 1][::-1]))
        self.k = k
        return self.rho


def survival_coeffs(design: EwmaDesign, k: int) -> SurvivalSystem:
    """Solve the lower-triangular Toeplitz system for c_1..c_k.

    The system (I + M) c = 1, with M having zero diagonal and constant
    subdiagonals h_i(A), is solved exactly by forward substitution.
    """
    if k < 1:
        raise ValueError("k must be at least 1")
    chain = _SurvivalChain(design)
    for _ in range(k):
        chain.advance()
    return SurvivalSystem(
        k=k,
        toeplitz_column=chain._h[1:k].copy(),
        c=chain._c[1 : k + 1].copy(),
    )


def rho_k(design: EwmaDesign, k: int, z: float | None = None) -> float:
    """P(run length > k) under the no-change measure, from headstart z."""
    if k < 0:
        raise ValueError("k must be nonnegative")
    if k == 0:
        return 1.0
    if design.is_degenerate:
        return 0.0
    chain = _SurvivalChain(design, z)
    for _ in range(k):
        chain.advance()
    return chain.rho


def rho_sequence(design: EwmaDesign, k_max: int, z: float | None = None) -> np.ndarray:
    """rho_0..rho_{k_max} as an array (rho_0 = 1)."""
    out = np.empty(k_max + 1)
    out[0] = 1.0
    if design.is_degenerate:
        out[1:] = 0.0
        return out
    chain = _SurvivalChain(design, z)
    for k in range(1, k_max + 1):
        out[k] = chain.advance()
    return out


# ---------------------------------------------------------------------------
# Delay coefficients delta_k


@dataclass(frozen=True)
class SeriesCoefficients:
    """Taylor coefficients of delta_k(z) = b0 + sum_n B_n z^n / n!.

    The raw B_n grow like (alpha/lambda)^n; internally everything is kept
    in the scaled form T_n = B_n (lambda/alpha)^n, which stays O(b0).  The
    ``b`` property reconstructs B_n for n >= 1 and may overflow for small
    smoothing factors; the scaled array is what evaluation uses.
    """

    order: int
    b0: float
    scaled: np.ndarray
    ratio: float  # alpha / lambda

    @property
    def b(self) -> np.ndarray:
        n = np.arange(1, self.scaled.size, dtype=float)
        with np.errstate(over="ignore", under="ignore"):
            return self.scaled[1:] * self.ratio**n


def _delta_n_terms(design: EwmaDesign, trunc: SeriesTruncation) -> int:
    a = design.threshold / design.lam
    n = int(math.ceil(a + 10.0 * math.sqrt(a) + 25.0))
    if n > max(trunc.max_terms, 200):
        raise NonConvergence(
            f"delay coefficients need {n} terms (A/lambda = {a:.1f}), "
            f"above the cap {trunc.max_terms}",
            terms=n,
        )
    return n


class _DeltaChain:
    """Advances the scaled delay coefficients one change-point step at a time.

    Scaled recursion, k -> k+1:
        U_n = sum_{m<n} alpha^m T_m,
        b0' = sum_{n>=1} Poisson(A/lambda)_n U_n,
        T_n' = b0' - U_n.
    """

    def __init__(
        self,
        design: EwmaDesign,
        model: ExpChangeModel,
        trunc: SeriesTruncation = DEFAULT_TRUNCATION,
    ):
        self.design = design
        n_terms = _delta_n_terms(design, trunc)
        n = np.arange(n_terms, dtype=float)
        table = q_table(design.alpha)
        table.pochhammer(n_terms)
        poch = np.array([table.pochhammer(int(m)) for m in range(n_terms)])
        self._alpha_pows = design.alpha**n
        self._a = design.threshold / design.lam
        self._pois_a = _poisson_weights(self._a, n)
        r = 1.0 / model.post_mean
        d00 = add0(replace(design, z=0.0), model, trunc)
        T = np.empty(n_terms)
        T[0] = d00
        T[1:] = -(r ** n[1:]) * poch[:-1]
        self.T = T
        self.order = 0

    def advance(self) -> float:
        ua = self._alpha_pows * self.T
        U = np.empty_like(self.T)
        U[0] = 0.0
        np.cumsum(ua[:-1], out=U[1:])
        b0 = float(np.dot(self._pois_a[1:], U[1:]))
        self.T = b0 - U
        self.order += 1
        return b0

    def value(self, z: float) -> float:
        u = self.design.alpha * z / self.design.lam
        if u == 0.0:
            return float(self.T[0])
        w = _poisson_weights(u, np.arange(self.T.size, dtype=float))
        return math.exp(u) * float(np.dot(self.T, w))

    def boundary_rel_residual(self) -> float:
        """|delta_k(A/alpha)| relative to delta_k(0); the precision sentinel."""
        num = abs(float(np.dot(self.T, self._pois_a)))
        with np.errstate(under="ignore"):
            denom = abs(float(self.T[0])) * math.exp(-self._a)
        if denom == 0.0:
            return math.inf
        return num / denom


def delta0_coeffs(
    design: EwmaDesign,
    model: ExpChangeModel,
    trunc: SeriesTruncation = DEFAULT_TRUNCATION,
) -> SeriesCoefficients:
    """Coefficients of delta_0, the base of the delay recursion."""
    chain = _DeltaChain(design, model, trunc)
    return SeriesCoefficients(
        order=0,
        b0=float(chain.T[0]),
        scaled=chain.T.copy(),
        ratio=design.alpha / design.lam,
    )


def delta_k_coeffs(
    prev: SeriesCoefficients,
    design: EwmaDesign,
    *,
    boundary_rtol: float = 1e-8,
) -> SeriesCoefficients:
    """One step of the delay-coefficient recursion, with its precision sentinel.

    Raises:
        CancellationDetected: the evaluated series no longer vanishes at
            z = A/alpha to within ``boundary_rtol`` relative to delta_k(0),
            meaning roundoff has eaten the trailing coefficients.
    """
    n_terms = prev.scaled.size
    n = np.arange(n_terms, dtype=float)
    alpha_pows = design.alpha**n
    a = design.threshold / design.lam
    pois_a = _poisson_weights(a, n)
    ua = alpha_pows * prev.scaled
    U = np.empty(n_terms)
    U[0] = 0.0
    np.cumsum(ua[:-1], out=U[1:])
    b0 = float(np.dot(pois_a[1:], U[1:]))
    T = b0 - U
    coeffs = SeriesCoefficients(
        order=prev.order + 1, b0=b0, scaled=T, ratio=design.alpha / design.lam
    )
    num = abs(float(np.dot(T, pois_a)))
    with np.errstate(under="ignore"):
        denom = abs(b0) * math.exp(-a)
    residual = math.inf if denom == 0.0 else num / denom
    if residual > boundary_rtol:
        raise CancellationDetected(
            f"delta_{coeffs.order} boundary residual {residual:.3e} exceeds "
            f"{boundary_rtol:.1e} (A/lambda = {a:.1f}); switch to the "
            "quadrature path or extended precision",
            residual=residual,
            tolerance=boundary_rtol,
        )
    return coeffs


def delta_value(coeffs: SeriesCoefficients, design: EwmaDesign, z: float) -> float:
    """Evaluate delta_k(z) from its coefficients."""
    u = design.alpha * z / design.lam
    if u == 0.0:
        return float(coeffs.scaled[0])
    w = _poisson_weights(u, np.arange(coeffs.scaled.size, dtype=float))
    return math.exp(u) * float(np.dot(coeffs.scaled, w))


def delta_boundary_residuals(
    design: EwmaDesign,
    model: ExpChangeModel,
    k_max: int,
    *,
    dps: int | None = None,
    trunc: SeriesTruncation = DEFAULT_TRUNCATION,
) -> np.ndarray:
    """Relative boundary residuals |delta_k(A/alpha)| / delta_k(0), k = 1..k_max.

    With ``dps`` set, the whole recursion runs in mpmath arbitrary
    precision; that isolates the identity itself from double-precision
    roundoff when A/lambda is large.
    """
    if dps is None:
        chain = _DeltaChain(design, model, trunc)
        out = np.empty(k_max)
        for k in range(k_max):
            chain.advance()
            out[k] = chain.boundary_rel_residual()
        return out
    return _delta_boundary_residuals_mp(design, model, k_max, dps, trunc)


def _delta_boundary_residuals_mp(design, model, k_max, dps, trunc):
    import mpmath as mp

    n_terms = _delta_n_terms(design, trunc)
    with mp.workdps(dps):
        lam = mp.mpf(design.lam)
        alpha = 1 - lam
        A = mp.mpf(design.threshold)
        a = A / lam
        r = 1 / (1 + mp.mpf(model.theta))
        poch = [mp.mpf(1)]
        for j in range(1, n_terms + 1):
            poch.append(poch[-1] * (1 - alpha**j))
        # Poisson weights at a
        pois = [mp.e ** (-a)]
        for nn in range(1, n_terms):
            pois.append(pois[-1] * a / nn)
        apow = [alpha**nn for nn in range(n_terms)]
        # delta_0 coefficients: T_0 from the a/(1+theta) series, T_n scaled
        am = a * r
        t0 = mp.mpf(1)
        pa = mp.mpf(1)
        for nn in range(1, n_terms):
            pa *= am / nn
            t0 += poch[nn - 1] * pa
        T = [t0] + [-(r**nn) * poch[nn - 1] for nn in range(1, n_terms)]
        out = np.empty(k_max)
        for k in range(k_max):
            U = [mp.mpf(0)]
            acc = mp.mpf(0)
            for nn in range(1, n_terms):
                acc += apow[nn - 1] * T[nn - 1]
                U.append(acc)
            b0 = mp.fsum(pois[nn] * U[nn] for nn in range(1, n_terms))
            T = [b0 - U[nn] for nn in range(n_terms)]
            num = abs(mp.fsum(T[nn] * pois[nn] for nn in range(n_terms)))
            denom = abs(b0) * mp.e ** (-a)
            out[k] = float(num / denom) if denom != 0 else math.inf
        return out


# ---------------------------------------------------------------------------
# SADD


def _stabilized_sequence(values: Iterator[float], rule: StabilizationRule) -> list:
    out: list = []
    streak = 0
    prev = None
    for k, v in enumerate(values):
        out.append(v)
        if prev is not None and abs(v - prev) <= rule.rel_tol * abs(v):
            streak += 1
            if streak >= rule.consecutive:
                return out
        elif prev is not None:
            streak = 0
        prev = v
        if k >= rule.k_max:
            raise NonConvergence(
                f"conditional delay did not stabilize within k_max={rule.k_max}",
                partial=max(out),
                terms=k,
            )
    return out


def stabilized_supremum(values: Iterable[float], rule: StabilizationRule):
    """Supremum and argmax of a delay sequence cut off by the plateau rule."""
    add = _stabilized_sequence(iter(values), rule)
    sup = max(add)
    return sup, int(np.argmax(add)), add


def sadd(
    design: EwmaDesign,
    model: ExpChangeModel,
    trunc: SeriesTruncation = DEFAULT_TRUNCATION,
    rule: StabilizationRule = DEFAULT_RULE,
    *,
    boundary_rtol: float = 1e-8,
) -> SaddResult:
    """Supremum conditional delay via the closed-form delta/rho recursions.

    Raises CancellationDetected when either recursion trips its precision
    sentinel; :func:`ewmaopt.evaluate.ewma_profile` catches that and reruns
    through the quadrature solver.
    """
    if design.is_degenerate:
        _warn_degenerate(design, "sadd")
        profile = PerformanceProfile(1.0, (1.0,), 1.0, 1.0, 1.0, 0)
        return SaddResult(1.0, 0, profile)
    arl_v = arl(design, trunc)
    psi_v = psi(design, model, trunc)

    def values() -> Iterator[float]:
        yield add0(design, model, trunc)
        dchain = _DeltaChain(design, model, trunc)
        schain = _SurvivalChain(design)
        prev_rho = 1.0
        while True:
            dchain.advance()
            residual = dchain.boundary_rel_residual()
            if residual > boundary_rtol:
                raise CancellationDetected(
                    f"delta_{dchain.order} boundary residual {residual:.3e} "
                    f"exceeds {boundary_rtol:.1e}",
                    residual=residual,
                    tolerance=boundary_rtol,
                )
            rho = schain.advance()
            slack = 1e-12 * max(1.0, prev_rho)
            if not (-1e-12 <= rho <= prev_rho + slack):
                raise CancellationDetected(
                    f"rho_{schain.k} = {rho!r} violates monotone [0, 1] bounds",
                    residual=rho,
                )
            if rho < 1e-250:
                raise NonConvergence(
                    "survival probability underflow before stabilization"
                )
            dval = dchain.value(design.z)
            if dval < 0.0:
                raise CancellationDetected(
                    f"delta_{dchain.order}(z) = {dval!r} went negative",
                    residual=dval,
                )
            prev_rho = rho
            yield dval / rho

    sup, k_at, add = stabilized_supremum(values(), rule)
    profile = PerformanceProfile(
        arl=arl_v,
        add=tuple(add),
        sadd=sup,
        psi=psi_v,
        stadd=psi_v / arl_v,
        k_at_sup=k_at,
    )
    return SaddResult(sup, k_at, profile)


def performance_profile(
    design: EwmaDesign,
    model: ExpChangeModel,
    trunc: SeriesTruncation = DEFAULT_TRUNCATION,
    rule: StabilizationRule = DEFAULT_RULE,
) -> PerformanceProfile:
    """Full closed-form profile (ARL, delay curve, SADD, psi, STADD)."""
    return sadd(design, model, trunc, rule).profile
