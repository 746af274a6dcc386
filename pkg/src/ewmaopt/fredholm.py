"""Nystrom solver for the run-length integral equations on [0, A).

Any detection statistic of the form S_n = map(S_{n-1}) + noise with a
known one-step transition density k(x, y) satisfies Fredholm equations of
the second kind for its operating characteristics:

    arl(x)   = 1      + int_0^A k_pre(x, y)  arl(y)  dy
    add0(x)  = 1      + int_0^A k_post(x, y) add0(y) dy
    psi(x)   = add0(x)+ int_0^A k_pre(x, y)  psi(y)  dy
    rho_k    = K_pre rho_{k-1},   delta_k = K_pre delta_{k-1}

The kernels here are sub-stochastic on [0, A): the mass escaping above A
is the stopping probability and is deliberately not re-normalized.

Discretization: collocation at composite Gauss-Legendre nodes.  Each row
integral runs only over [support_lower(x), A); it is mapped onto a fixed
reference rule with geometrically graded panels so that the kernel's edge
layer (exponential for the EWMA chart, power-law for the likelihood-ratio
statistics) is resolved for every row.  Integrand values off the node grid
come from piecewise-cubic Lagrange interpolation of the nodal unknowns.
Off-node solution values (headstarts) are evaluated by applying the same
one-row rule to the solved nodal values, i.e. through the equation itself
rather than by grid snapping.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .analytic import (
    DEFAULT_RULE,
    PerformanceProfile,
    StabilizationRule,
    stabilized_supremum,
)
from .errors import SingularSystem
from .model import ExpChangeModel

__all__ = [
    "KernelSpec",
    "Quadrature",
    "OcSolution",
    "ewma_kernel",
    "sr_kernel",
    "sr_lr_cdf",
    "solve_arl",
    "solve_add0",
    "solve_iadd",
    "iterate_rho_delta",
    "srr_profile",
]

DEFAULT_NODES = 200


@dataclass(frozen=True)
class KernelSpec:
    """Markov transition kernel of a detection statistic on [0, A).

    ``kernel_pre(x, y)`` and ``kernel_post(x, y)`` are the one-step
    transition densities in y given current state x under the no-change
    and the post-change measures; both vanish for y < support_lower(x).
    """

    kind: str
    support_lower: Callable
    kernel_pre: Callable
    kernel_post: Callable
    threshold: float | None = None


def ewma_kernel(
    model: ExpChangeModel, lam: float, threshold: float | None = None
) -> KernelSpec:
    """Kernel of Z_n = (1-lam) Z_{n-1} + lam X_n for exponential data.

    Given state x the next value is alpha*x plus an exponential of mean
    lam (pre-change) or lam*(1+theta) (post-change), so the transition
    density is a shifted exponential supported on y >= alpha*x.
    """
    if not 0.0 < lam <= 1.0:
        raise ValueError(f"smoothing factor must be in (0, 1], got {lam}")
    alpha = 1.0 - lam
    scale_pre = lam
    scale_post = lam * model.post_mean

    def support_lower(x):
        return alpha * np.asarray(x, dtype=float)

    def _dens(x, y, scale):
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        u = y - alpha * x
        with np.errstate(under="ignore"):
            out = np.where(u >= 0.0, np.exp(-np.maximum(u, 0.0) / scale) / scale, 0.0)
        return out

    return KernelSpec(
        kind="ewma",
        support_lower=support_lower,
        kernel_pre=lambda x, y: _dens(x, y, scale_pre),
        kernel_post=lambda x, y: _dens(x, y, scale_post),
        threshold=threshold,
    )


def sr_lr_cdf(model: ExpChangeModel, t, true_model: ExpChangeModel | None = None):
    """Distribution function of the one-observation likelihood ratio.

    The ratio statistic L = exp(X theta/(1+theta)) / (1+theta) built from
    the design model, with X drawn from ``true_model`` (post-change) or,
    when ``true_model`` is None, from the no-change exponential of mean 1.
    Solving L <= t for X gives a Pareto-type law with closed form

        P(L <= t) = 1 - ((1+theta) t)^(-(1+theta)/(theta m)),  t >= 1/(1+theta)

    where m is the mean of X.
    """
    theta = model.theta
    m = 1.0 if true_model is None else true_model.post_mean
    c = (1.0 + theta) / (theta * m)
    t = np.asarray(t, dtype=float)
    scaled = (1.0 + theta) * t
    with np.errstate(invalid="ignore"):
        out = np.where(scaled >= 1.0, 1.0 - np.maximum(scaled, 1.0) ** (-c), 0.0)
    return out if out.ndim else float(out)


def sr_kernel(
    model: ExpChangeModel,
    true_model: ExpChangeModel | None = None,
    threshold: float | None = None,
) -> KernelSpec:
    """Kernel of the ratio recursion R_n = (1 + R_{n-1}) L_n.

    ``model`` fixes the statistic (which theta the ratio is built for);
    ``true_model`` fixes the post-change observation law, defaulting to
    the design model.  Keeping the two separate supports studies of a
    statistic tuned to the wrong shift.
    """
    theta = model.theta
    lo = 1.0 / (1.0 + theta)
    c_pre = (1.0 + theta) / theta
    m_post = (true_model or model).post_mean
    c_post = c_pre / m_post

    def support_lower(x):
        return (1.0 + np.asarray(x, dtype=float)) * lo

    def _dens(x, y, c):
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        scale = 1.0 + x
        u = (1.0 + theta) * y / scale
        with np.errstate(invalid="ignore", under="ignore"):
            out = np.where(
                u >= 1.0,
                c * (1.0 + theta) / scale * np.maximum(u, 1.0) ** (-c - 1.0),
                0.0,
            )
        return out

    return KernelSpec(
        kind="sr",
        support_lower=support_lower,
        kernel_pre=lambda x, y: _dens(x, y, c_pre),
        kernel_post=lambda x, y: _dens(x, y, c_post),
        threshold=threshold,
    )


# ---------------------------------------------------------------------------
# Quadrature


def _gauss_panels(edges: np.ndarray, pts: int):
    gx, gw = np.polynomial.legendre.leggauss(pts)
    a = edges[:-1]
    b = edges[1:]
    half = 0.5 * (b - a)
    nodes = (a[:, None] + half[:, None] * (gx[None, :] + 1.0)).ravel()
    weights = (half[:, None] * gw[None, :]).ravel()
    return nodes, weights


@dataclass(frozen=True)
class Quadrature:
    """Collocation nodes on [0, A) with their composite-rule weights."""

    nodes: np.ndarray
    weights: np.ndarray
    upper: float

    def __post_init__(self):
        if np.any(np.diff(self.nodes) <= 0.0):
            raise ValueError("nodes must be strictly increasing")

    @property
    def count(self) -> int:
        return self.nodes.size

    @classmethod
    def uniform_composite(cls, upper: float, n_panels: int, pts: int) -> "Quadrature":
        edges = np.linspace(0.0, upper, n_panels + 1)
        nodes, weights = _gauss_panels(edges, pts)
        return cls(nodes, weights, upper)

    @classmethod
    def geometric_composite(
        cls, upper: float, first_width: float, pts: int, ratio: float = 2.0
    ) -> "Quadrature":
        """Panels [0, w], [w, rw], ... clustered toward zero.

        Suits statistics whose characteristics vary on a log scale in the
        state, like the ratio recursions with large thresholds.
        """
        edges = [0.0]
        e = min(first_width, upper)
        while e < upper:
            edges.append(e)
            e *= ratio
        edges.append(upper)
        nodes, weights = _gauss_panels(np.asarray(edges), pts)
        return cls(nodes, weights, upper)

    @classmethod
    def for_kernel(
        cls, kernel: KernelSpec, upper: float, n: int = DEFAULT_NODES
    ) -> "Quadrature":
        if kernel.kind == "sr":
            first = min(0.25, upper / 4.0)
            n_panels = max(4, int(math.ceil(math.log(upper / first, 2.0))) + 1)
            pts = max(6, int(round(n / n_panels)))
            return cls.geometric_composite(upper, first, pts)
        n_panels = max(4, n // 8)
        return cls.uniform_composite(upper, n_panels, 8)


def _reference_rule():
    """Graded panels on (0, 1] resolving boundary layers down to 1e-7."""
    edges = [0.0]
    e = 1e-7
    while e < 1.0:
        edges.append(e)
        e *= 2.0
    edges.append(1.0)
    return _gauss_panels(np.asarray(edges), 10)


_S_NODES, _S_WEIGHTS = _reference_rule()


def _lagrange_interp_weights(nodes: np.ndarray, t: np.ndarray, stencil: int = 6):
    """Local Lagrange weights of the nodal values at points t.

    Returns ``cols`` (m, stencil) node indices and ``w`` (m, stencil)
    weights so that f(t) ~= sum_i w[:, i] * f(nodes[cols[:, i]]).  The
    run-length functions are entire, so a 6-point stencil keeps the
    interpolation error far below the quadrature tolerance; large-ARL
    solves amplify any operator error by the run length itself, which is
    why a bare cubic is not enough inside the operator.
    """
    n = nodes.size
    if n < stencil:
        raise ValueError(f"need at least {stencil} nodes for interpolation")
    j = np.searchsorted(nodes, t)
    j0 = np.clip(j - stencil // 2, 0, n - stencil)
    cols = j0[:, None] + np.arange(stencil)[None, :]
    xs = nodes[cols]
    d = t[:, None] - xs
    w = np.empty_like(d)
    for i in range(stencil):
        others = [k for k in range(stencil) if k != i]
        num = np.prod(d[:, others], axis=1)
        den = np.prod(xs[:, i][:, None] - xs[:, others], axis=1)
        w[:, i] = num / den
    return cols, w


class OcSolution:
    """Operating characteristics of one kernel/threshold pair.

    Nodal solutions are computed lazily and cached; off-node evaluation
    applies the one-row quadrature of the defining equation, so a
    headstart anywhere in the statistic's reachable range (including
    above the last node) is handled consistently.
    """

    def __init__(self, kernel: KernelSpec, quad: Quadrature):
        if kernel.threshold is not None and not math.isclose(
            kernel.threshold, quad.upper, rel_tol=1e-12
        ):
            raise ValueError("kernel threshold and quadrature domain disagree")
        self.kernel = kernel
        self.quad = quad
        self._mat: dict = {}
        self._row_cache: dict = {}
        self._arl = None
        self._add0 = None
        self._psi = None
        self._rho: list = []
        self._delta: list = []

    # -- discretization ------------------------------------------------

    def _rows(self, x: np.ndarray, which: str):
        """Quadrature points/coefficients of the row integrals at states x.

        coeff[i] @ f(t[i]) ~= int k(x_i, y) f(y) dy over [lower_i, A).
        """
        a = self.quad.upper
        x = np.asarray(x, dtype=float)
        lower = np.clip(self.kernel.support_lower(x), 0.0, a)
        width = np.maximum(a - lower, 0.0)
        t = lower[:, None] + width[:, None] * _S_NODES[None, :]
        dens = (
            self.kernel.kernel_pre(x[:, None], t)
            if which == "pre"
            else self.kernel.kernel_post(x[:, None], t)
        )
        coeff = width[:, None] * _S_WEIGHTS[None, :] * dens
        return t, coeff

    def _matrix(self, which: str) -> np.ndarray:
        mat = self._mat.get(which)
        if mat is None:
            nodes = self.quad.nodes
            n = nodes.size
            t, coeff = self._rows(nodes, which)
            cols, w = _lagrange_interp_weights(nodes, t.ravel())
            rows = np.repeat(np.arange(n), t.shape[1])
            flat = (rows[:, None] * n + cols).ravel()
            vals = (coeff.ravel()[:, None] * w).ravel()
            mat = np.bincount(flat, weights=vals, minlength=n * n).reshape(n, n)
            self._mat[which] = mat
        return mat

    def _row_operator(self, x: float, which: str) -> np.ndarray:
        """One-row version of :meth:`_matrix` for an arbitrary state x."""
        key = (float(x), which)
        row = self._row_cache.get(key)
        if row is None:
            nodes = self.quad.nodes
            t, coeff = self._rows(np.array([float(x)]), which)
            cols, w = _lagrange_interp_weights(nodes, t.ravel())
            vals = (coeff.ravel()[:, None] * w).ravel()
            row = np.bincount(cols.ravel(), weights=vals, minlength=nodes.size)
            self._row_cache[key] = row
        return row

    def _solve(self, which: str, rhs: np.ndarray) -> np.ndarray:
        mat = np.eye(self.quad.count) - self._matrix(which)
        try:
            sol = np.linalg.solve(mat, rhs)
        except np.linalg.LinAlgError as exc:
            raise SingularSystem(
                f"(I - K) is singular for the {self.kernel.kind} kernel at "
                f"A = {self.quad.upper:g}; grid too coarse or threshold too large"
            ) from exc
        if not np.all(np.isfinite(sol)):
            raise SingularSystem(
                f"(I - K) solve produced non-finite values for the "
                f"{self.kernel.kind} kernel at A = {self.quad.upper:g}"
            )
        return sol

    # -- nodal solutions -----------------------------------------------

    @property
    def arl_nodes(self) -> np.ndarray:
        if self._arl is None:
            self._arl = self._solve("pre", np.ones(self.quad.count))
        return self._arl

    @property
    def add0_nodes(self) -> np.ndarray:
        if self._add0 is None:
            self._add0 = self._solve("post", np.ones(self.quad.count))
        return self._add0

    @property
    def psi_nodes(self) -> np.ndarray:
        if self._psi is None:
            self._psi = self._solve("pre", self.add0_nodes)
        return self._psi

    def _ensure_iterates(self, k: int) -> None:
        """Materialize rho_j, delta_j nodal vectors for j = 1..k."""
        mat = self._matrix("pre")
        while len(self._rho) < k:
            prev_r = self._rho[-1] if self._rho else np.ones(self.quad.count)
            prev_d = self._delta[-1] if self._delta else self.add0_nodes
            self._rho.append(mat @ prev_r)
            self._delta.append(mat @ prev_d)

    # -- evaluation ----------------------------------------------------

    def arl(self, x: float) -> float:
        return 1.0 + float(self._row_operator(x, "pre") @ self.arl_nodes)

    def add0(self, x: float) -> float:
        return 1.0 + float(self._row_operator(x, "post") @ self.add0_nodes)

    def psi(self, x: float) -> float:
        return self.add0(x) + float(self._row_operator(x, "pre") @ self.psi_nodes)

    def stadd(self, x: float) -> float:
        return self.psi(x) / self.arl(x)

    def rho_at(self, k: int, x: float) -> float:
        if k == 0:
            return 1.0
        self._ensure_iterates(k)
        if k == 1:
            return float(np.dot(self._row_operator(x, "pre"), np.ones(self.quad.count)))
        return float(self._row_operator(x, "pre") @ self._rho[k - 2])

    def delta_at(self, k: int, x: float) -> float:
        if k == 0:
            return self.add0(x)
        self._ensure_iterates(k)
        if k == 1:
            return float(self._row_operator(x, "pre") @ self.add0_nodes)
        return float(self._row_operator(x, "pre") @ self._delta[k - 2])

    def add_at(self, k: int, x: float) -> float:
        """Conditional delay ADD_k = delta_k / rho_k at headstart x."""
        return self.delta_at(k, x) / self.rho_at(k, x)

    def add_curve(self, x: float, k_max: int, k_start: int = 0) -> np.ndarray:
        self._ensure_iterates(max(k_max, 1))
        return np.array([self.add_at(k, x) for k in range(k_start, k_max + 1)])

    def sadd(
        self,
        x: float,
        rule: StabilizationRule = DEFAULT_RULE,
        k_start: int = 1,
    ):
        """Supremum conditional delay from headstart x.

        ``k_start`` is the earliest change point entering the supremum;
        the default 1 means the monitor sees at least one in-control
        observation before the change, matching the case-study tables.
        """
        row = self._row_operator(x, "pre")

        def values():
            k = k_start
            while True:
                if k == 0:
                    yield self.add0(x)
                else:
                    self._ensure_iterates(k)
                    num = (
                        float(row @ self.add0_nodes)
                        if k == 1
                        else float(row @ self._delta[k - 2])
                    )
                    den = (
                        float(np.sum(row))
                        if k == 1
                        else float(row @ self._rho[k - 2])
                    )
                    yield num / den
                k += 1

        sup, rel_k, add = stabilized_supremum(values(), rule)
        return sup, rel_k, add

    def profile(
        self,
        x: float,
        rule: StabilizationRule = DEFAULT_RULE,
        k_start: int = 1,
    ) -> PerformanceProfile:
        sup, k_at, add = self.sadd(x, rule, k_start)
        arl_v = self.arl(x)
        psi_v = self.psi(x)
        return PerformanceProfile(
            arl=arl_v,
            add=tuple(add),
            sadd=sup,
            psi=psi_v,
            stadd=psi_v / arl_v,
            k_at_sup=k_at,
        )


def solve_arl(kernel: KernelSpec, quad: Quadrature) -> OcSolution:
    """Solve the no-change run-length equation; result carries the solution."""
    sol = OcSolution(kernel, quad)
    sol.arl_nodes
    return sol


def solve_add0(kernel: KernelSpec, quad: Quadrature) -> OcSolution:
    """Solve the immediate-change delay equation."""
    sol = OcSolution(kernel, quad)
    sol.add0_nodes
    return sol


def solve_iadd(kernel: KernelSpec, quad: Quadrature) -> OcSolution:
    """Solve the integral-delay equation (needs the delay solve as rhs)."""
    sol = OcSolution(kernel, quad)
    sol.psi_nodes
    return sol


def iterate_rho_delta(
    kernel: KernelSpec,
    quad: Quadrature,
    k_max: int,
    rule: StabilizationRule = DEFAULT_RULE,
) -> OcSolution:
    """Apply the no-change operator to the survival/delay columns.

    Extends the iterates until the conditional delay at the lowest state
    stabilizes per ``rule`` or ``k_max`` is reached, and returns the
    solution object holding them.
    """
    sol = OcSolution(kernel, quad)
    capped = StabilizationRule(rule.rel_tol, rule.consecutive, min(rule.k_max, k_max))
    sol.sadd(0.0, capped)
    return sol


def srr_profile(
    model: ExpChangeModel,
    threshold: float,
    r: float,
    quad: Quadrature | None = None,
    rule: StabilizationRule = DEFAULT_RULE,
    n_nodes: int = DEFAULT_NODES,
    k_start: int = 1,
) -> PerformanceProfile:
    """Performance profile of the ratio recursion started at R_0 = r.

    r = 0 is the classical zero-start procedure; r > 0 is the headstarted
    variant.
    """
    if not 0.0 <= r < threshold:
        raise ValueError(f"headstart r must lie in [0, A), got {r}")
    kernel = sr_kernel(model)
    if quad is None:
        quad = Quadrature.for_kernel(kernel, threshold, n_nodes)
    sol = OcSolution(kernel, quad)
    return sol.profile(r, rule, k_start)
