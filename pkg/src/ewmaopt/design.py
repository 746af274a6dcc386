"""Threshold calibration and optimal choice of the chart design pair.

The false-alarm constraint is an equality, ARL = gamma; it is handled by
elimination: every candidate (lam, z) gets its own calibrated threshold
before the delay objective is evaluated.  A coarse logarithmic grid over
the smoothing factor (crossed with a headstart grid when the headstart is
free) locates the basin; a Nelder-Mead refinement polishes it.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy.optimize import minimize

from . import analytic
from .analytic import DEFAULT_RULE, EwmaDesign, StabilizationRule
from .errors import BracketFailure, NonConvergence
from .evaluate import ewma_profile
from .fredholm import OcSolution, Quadrature, ewma_kernel, sr_kernel
from .model import ExpChangeModel
from .qseries import DEFAULT_TRUNCATION, SeriesTruncation

__all__ = [
    "CalibrationTarget",
    "DesignOptimum",
    "MisspecReport",
    "calibrate_threshold",
    "ewma_arl_evaluator",
    "calibrate_ewma",
    "sr_solution",
    "calibrate_sr",
    "sr_profile",
    "optimize_srr",
    "optimize_design",
    "lambda_opt_curve",
    "misspecification_study",
]

LAMBDA_GRID = tuple(np.geomspace(0.005, 1.0, 25))
Z_GRID_MAX = 2.0
Z_GRID_POINTS = 15
PARTIAL_ACCEPT_FACTOR = 10.0


@dataclass(frozen=True)
class CalibrationTarget:
    """Required run length to false alarm and the calibration accuracy."""

    gamma: float
    rel_tol: float = 1e-3

    def __post_init__(self):
        if not self.gamma > 1.0:
            raise ValueError("gamma must exceed 1")
        if not self.rel_tol > 0:
            raise ValueError("rel_tol must be positive")


@dataclass(frozen=True)
class DesignOptimum:
    lambda_star: float
    z_star: float
    a_star: float
    objective: str
    value: float
    evaluations: int
    gamma: float
    achieved_arl: float


@dataclass(frozen=True)
class MisspecReport:
    """Delay inflation when a design tuned to one shift meets another.

    ``ewma_ratio[i][j]`` is the stationary delay of the chart tuned to
    ``theta_design``, observed under ``theta_true[j]`` at ``gammas[i]``,
    divided by the delay of the ratio procedure tuned to the true shift;
    ``sr_ratio`` is the same for a ratio procedure mis-tuned the same way.
    """

    theta_design: float
    theta_true: tuple
    gammas: tuple
    ewma_ratio: tuple
    sr_ratio: tuple


def calibrate_threshold(
    evaluator: Callable[[float], float],
    target: CalibrationTarget,
    bracket: tuple[float, float] | None = None,
) -> float:
    """Bisection for the threshold A with evaluator(A) = gamma.

    The evaluator must be continuous and increasing in A.  The starting
    bracket is expanded by doubling (at most 60 times each way) until it
    straddles the target; comparisons happen on the log scale.
    """
    gamma = target.gamma
    lo, hi = bracket if bracket is not None else (0.5, 2.0)
    if not 0 < lo < hi:
        raise ValueError("bracket must satisfy 0 < lo < hi")

    def above(a: float) -> bool:
        return evaluator(a) >= gamma

    expansions = 0
    while not above(hi):
        lo = hi
        hi *= 2.0
        expansions += 1
        if expansions > 60:
            raise BracketFailure(f"no threshold below {hi:g} reaches ARL {gamma:g}")
    expansions = 0
    while above(lo):
        hi = lo
        lo /= 2.0
        expansions += 1
        if expansions > 60:
            raise BracketFailure(f"ARL exceeds {gamma:g} down to threshold {lo:g}")

    best = hi
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        val = evaluator(mid)
        if abs(math.log(val) - math.log(gamma)) <= target.rel_tol:
            return mid
        if val < gamma:
            lo = mid
        else:
            hi = mid
            best = mid
        if (hi - lo) <= 1e-14 * hi:
            break
    return best


def ewma_arl_evaluator(
    lam: float,
    z: float,
    gamma_scale: float,
    trunc: SeriesTruncation = DEFAULT_TRUNCATION,
    n_nodes: int = 200,
) -> Callable[[float], float]:
    """A -> ARL map for the chart, robust across the whole threshold range.

    The closed-form series has nonnegative terms, so its partial sum is a
    lower bound on the run length; when the series hits its term cap with
    a partial sum already far above the calibration target the bound is
    returned as-is (only its position relative to gamma matters for the
    bisection).  Otherwise the quadrature solver takes over.
    """

    def evaluator(a: float) -> float:
        if (1.0 - lam) * z >= a:
            return 1.0  # stops at the first observation; no need to warn per probe
        design = EwmaDesign(lam, z, a)
        try:
            return analytic.arl(design, trunc)
        except NonConvergence as exc:
            if exc.partial is not None and exc.partial > PARTIAL_ACCEPT_FACTOR * gamma_scale:
                return exc.partial
            kernel = ewma_kernel(ExpChangeModel(1.0), lam)
            quad = Quadrature.for_kernel(kernel, a, n_nodes)
            return OcSolution(kernel, quad).arl(z)

    return evaluator


def calibrate_ewma(
    lam: float,
    z: float,
    target: CalibrationTarget,
    bracket: tuple[float, float] | None = None,
    trunc: SeriesTruncation = DEFAULT_TRUNCATION,
) -> float:
    """Threshold for which the chart's run length equals the target."""
    ev = ewma_arl_evaluator(lam, z, target.gamma, trunc)
    if bracket is None:
        hi = max(1.0, 1.25 * (1.0 - lam) * z + 1.0)
        bracket = (0.25, hi)
    return calibrate_threshold(ev, target, bracket)


# ---------------------------------------------------------------------------
# Ratio-procedure (SR) helpers


def sr_solution(
    model: ExpChangeModel,
    threshold: float,
    true_model: ExpChangeModel | None = None,
    n_nodes: int = 200,
) -> OcSolution:
    kernel = sr_kernel(model, true_model)
    return OcSolution(kernel, Quadrature.for_kernel(kernel, threshold, n_nodes))


def calibrate_sr(
    model: ExpChangeModel,
    target: CalibrationTarget,
    r: float = 0.0,
    n_nodes: int = 200,
) -> float:
    """Threshold of the ratio procedure (headstart r) hitting the target ARL."""

    def evaluator(a: float) -> float:
        if r >= a:
            return 1.0
        return sr_solution(model, a, n_nodes=n_nodes).arl(r)

    g = target.gamma
    return calibrate_threshold(evaluator, target, (g / 8.0, 2.0 * g))


def sr_profile(
    model: ExpChangeModel,
    target: CalibrationTarget,
    r: float = 0.0,
    rule: StabilizationRule = DEFAULT_RULE,
    n_nodes: int = 200,
    k_start: int = 0,
):
    """Calibrated profile of the ratio procedure; returns (profile, threshold)."""
    a = calibrate_sr(model, target, r, n_nodes)
    sol = sr_solution(model, a, n_nodes=n_nodes)
    return sol.profile(r, rule, k_start), a


def optimize_srr(
    model: ExpChangeModel,
    target: CalibrationTarget,
    rule: StabilizationRule = DEFAULT_RULE,
    n_nodes: int = 200,
    k_start: int = 0,
    r_tol_factor: float = 1e-3,
):
    """Headstart of the ratio procedure minimizing the supremum delay.

    Golden-section over r in [0, A); each candidate re-calibrates its own
    threshold because the run length from headstart r depends on r.
    Returns (sadd, r_star, a_star).
    """
    cache: dict[float, tuple[float, float]] = {}

    def value(r: float) -> float:
        r = max(0.0, r)
        if r not in cache:
            a = calibrate_sr(model, target, r, n_nodes)
            sol = sr_solution(model, a, n_nodes=n_nodes)
            s, _, _ = sol.sadd(r, rule, k_start)
            cache[r] = (s, a)
        return cache[r][0]

    a0 = calibrate_sr(model, target, 0.0, n_nodes)
    lo, hi = 0.0, 0.5 * a0
    tol = r_tol_factor * a0
    grv = 0.5 * (math.sqrt(5.0) - 1.0)
    c = hi - grv * (hi - lo)
    d = lo + grv * (hi - lo)
    fc, fd = value(c), value(d)
    while hi - lo > tol:
        if fc < fd:
            hi, d, fd = d, c, fc
            c = hi - grv * (hi - lo)
            fc = value(c)
        else:
            lo, c, fc = c, d, fd
            d = lo + grv * (hi - lo)
            fd = value(d)
    r_star = 0.5 * (lo + hi)
    s = value(r_star)
    return s, r_star, cache[r_star][1]


# ---------------------------------------------------------------------------
# EWMA design optimization


class _EwmaObjective:
    """Calibrated delay objective with warm-started threshold brackets."""

    def __init__(self, model, target, objective, rule, trunc, k_start):
        if objective not in ("sadd", "stadd"):
            raise ValueError(f"objective must be 'sadd' or 'stadd', got {objective!r}")
        self.model = model
        self.target = target
        self.objective = objective
        self.rule = rule
        self.trunc = trunc
        self.k_start = k_start
        self.evaluations = 0
        self._last_a: float | None = None

    def calibrated_design(self, lam: float, z: float) -> EwmaDesign:
        bracket = None
        if self._last_a is not None:
            bracket = (0.6 * self._last_a, 1.6 * self._last_a)
        try:
            a = calibrate_ewma(lam, z, self.target, bracket, self.trunc)
        except BracketFailure:
            a = calibrate_ewma(lam, z, self.target, None, self.trunc)
        self._last_a = a
        return EwmaDesign(lam, z, a)

    def __call__(self, lam: float, z: float) -> tuple[float, EwmaDesign]:
        self.evaluations += 1
        design = self.calibrated_design(lam, z)
        if self.objective == "stadd":
            try:
                value = analytic.stadd(design, self.model, self.trunc)
            except NonConvergence:
                value = ewma_profile(
                    self.model, design, "quadrature", self.trunc, self.rule
                ).profile.stadd
        else:
            value = ewma_profile(
                self.model,
                design,
                "auto",
                self.trunc,
                self.rule,
                k_start=self.k_start,
            ).profile.sadd
        return value, design


def optimize_design(
    model: ExpChangeModel,
    target: CalibrationTarget,
    objective: str = "sadd",
    z_mode: float | str = "free",
    rule: StabilizationRule = DEFAULT_RULE,
    trunc: SeriesTruncation = DEFAULT_TRUNCATION,
    lambda_grid: Sequence[float] = LAMBDA_GRID,
    z_grid: Sequence[float] | None = None,
    k_start: int = 0,
) -> DesignOptimum:
    """Best (lam, z) for the delay objective subject to ARL = gamma.

    ``z_mode`` is either the fixed headstart value or "free".  Grid ties
    break toward the smaller smoothing factor (the objective flattens near
    its minimum and smaller factors are more robust to larger targets).
    """
    fn = _EwmaObjective(model, target, objective, rule, trunc, k_start)
    if z_mode == "free":
        zs = (
            np.linspace(0.0, Z_GRID_MAX, Z_GRID_POINTS)
            if z_grid is None
            else np.asarray(z_grid, dtype=float)
        )
    else:
        zs = np.array([float(z_mode)])

    best_val = math.inf
    best = None
    for z in zs:
        fn._last_a = None
        for lam in lambda_grid:
            val, design = fn(float(lam), float(z))
            if val < best_val:
                best_val, best = val, design

    def penalized(x) -> float:
        lam = float(np.clip(x[0], 0.001, 1.0))
        z = float(np.clip(x[1], 0.0, 2.0 * Z_GRID_MAX)) if x.size > 1 else float(zs[0])
        return fn(lam, z)[0]

    if z_mode == "free":
        x0 = np.array([best.lam, best.z])
        steps = np.array([0.15 * best.lam, max(0.1, 0.1 * (best.z + 0.1))])
    else:
        x0 = np.array([best.lam])
        steps = np.array([0.15 * best.lam])
    simplex = [x0] + [x0 + np.eye(x0.size)[i] * steps[i] for i in range(x0.size)]
    res = minimize(
        penalized,
        x0,
        method="Nelder-Mead",
        options={
            "initial_simplex": np.array(simplex),
            "xatol": 1e-3,
            "fatol": 1e-3 * best_val,
            "maxiter": 120,
        },
    )
    if res.fun < best_val:
        lam = float(np.clip(res.x[0], 0.001, 1.0))
        z = float(np.clip(res.x[1], 0.0, 2.0 * Z_GRID_MAX)) if res.x.size > 1 else float(zs[0])
        best_val, best = fn(lam, z)

    achieved = ewma_arl_evaluator(best.lam, best.z, target.gamma, trunc)(best.threshold)
    return DesignOptimum(
        lambda_star=best.lam,
        z_star=best.z,
        a_star=best.threshold,
        objective=objective,
        value=best_val,
        evaluations=fn.evaluations,
        gamma=target.gamma,
        achieved_arl=achieved,
    )


def lambda_opt_curve(
    model: ExpChangeModel,
    objective: str,
    gamma_grid: Sequence[float],
    z: float,
    rel_tol: float = 1e-3,
    **kwargs,
) -> list[DesignOptimum]:
    """Per-target optimization of the smoothing factor at a fixed headstart."""
    out = []
    for gamma in gamma_grid:
        out.append(
            optimize_design(
                model, CalibrationTarget(gamma, rel_tol), objective, z, **kwargs
            )
        )
    return out


def misspecification_study(
    theta_design: float,
    theta_true_grid: Sequence[float],
    gamma_grid: Sequence[float],
    z: float = 1.0,
    rel_tol: float = 1e-3,
    rule: StabilizationRule = DEFAULT_RULE,
    n_nodes: int = 200,
) -> MisspecReport:
    """Stationary-delay loss of designs tuned to the smallest shift.

    For every target ARL the chart's smoothing factor is optimized for
    ``theta_design``; the chart and a ratio procedure designed for the
    same (wrong) shift are then evaluated under each true shift and
    compared against the ratio procedure tuned correctly, which is the
    stationary-delay benchmark.
    """
    if abs(min(theta_true_grid) - theta_design) > 1e-12:
        raise ValueError("the design shift should be the smallest true shift")
    model_d = ExpChangeModel(theta_design)
    ewma_rows = []
    sr_rows = []
    for gamma in gamma_grid:
        target = CalibrationTarget(gamma, rel_tol)
        opt = optimize_design(model_d, target, "stadd", z)
        design = EwmaDesign(opt.lambda_star, opt.z_star, opt.a_star)
        a_sr_d = calibrate_sr(model_d, target, n_nodes=n_nodes)
        ewma_row = []
        sr_row = []
        for theta_t in theta_true_grid:
            model_t = ExpChangeModel(theta_t)
            bench = sr_solution(model_t, calibrate_sr(model_t, target, n_nodes=n_nodes),
                                n_nodes=n_nodes).stadd(0.0)
            ewma_val = analytic.stadd(design, model_t)
            sr_val = sr_solution(model_d, a_sr_d, true_model=model_t,
                                 n_nodes=n_nodes).stadd(0.0)
            ewma_row.append(ewma_val / bench)
            sr_row.append(sr_val / bench)
        ewma_rows.append(tuple(ewma_row))
        sr_rows.append(tuple(sr_row))
    return MisspecReport(
        theta_design=theta_design,
        theta_true=tuple(theta_true_grid),
        gammas=tuple(gamma_grid),
        ewma_ratio=tuple(ewma_rows),
        sr_ratio=tuple(sr_rows),
    )
