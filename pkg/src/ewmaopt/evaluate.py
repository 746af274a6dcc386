"""Method routing: closed forms, quadrature, and simulation side by side.

The closed forms are the fast path but their delay recursion loses
precision when A/lambda is large; the quadrature solver is unconditionally
stable but slower.  ``ewma_profile`` picks per the smoothing factor
(closed forms for lam >= 0.05, quadrature below) and falls back to
quadrature whenever a precision sentinel trips, so callers always get a
trustworthy profile.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

from . import analytic
from .analytic import (
    DEFAULT_RULE,
    EwmaDesign,
    PerformanceProfile,
    StabilizationRule,
)
from .errors import CancellationDetected, NonConvergence
from .fredholm import OcSolution, Quadrature, ewma_kernel
from .mc import McConfig, ProcedureKind, ProcedureSpec, estimate_add, estimate_arl, estimate_stadd
from .model import ExpChangeModel
from .qseries import DEFAULT_TRUNCATION, SeriesTruncation

__all__ = ["ProfileResult", "ewma_profile", "ewma_solution", "three_way"]

ANALYTIC_SADD_MIN_LAM = 0.05


@dataclass(frozen=True)
class ProfileResult:
    profile: PerformanceProfile
    method: str  # "analytic", "quadrature", or "analytic+quadrature"


def ewma_solution(
    model: ExpChangeModel, design: EwmaDesign, n_nodes: int = 200
) -> OcSolution:
    """Quadrature solution object for one design."""
    kernel = ewma_kernel(model, design.lam)
    quad = Quadrature.for_kernel(kernel, design.threshold, n_nodes)
    return OcSolution(kernel, quad)


def ewma_profile(
    model: ExpChangeModel,
    design: EwmaDesign,
    method: str = "auto",
    trunc: SeriesTruncation = DEFAULT_TRUNCATION,
    rule: StabilizationRule = DEFAULT_RULE,
    n_nodes: int = 200,
    k_start: int = 0,
) -> ProfileResult:
    """Full performance profile by the requested method.

    ``auto`` uses the closed forms when the smoothing factor is at least
    0.05 and the precision sentinels stay quiet, the quadrature solver
    otherwise.  ``k_start`` sets the earliest change point entering the
    delay supremum (0 is the standard definition).
    """
    if method not in ("auto", "analytic", "quadrature"):
        raise ValueError(f"unknown method {method!r}")
    if method in ("auto", "analytic"):
        use_analytic = method == "analytic" or design.lam >= ANALYTIC_SADD_MIN_LAM
        if use_analytic:
            try:
                return ProfileResult(
                    _analytic_profile(model, design, trunc, rule, k_start), "analytic"
                )
            except (CancellationDetected, NonConvergence):
                if method == "analytic":
                    raise
    sol = ewma_solution(model, design, n_nodes)
    return ProfileResult(sol.profile(design.z, rule, k_start), "quadrature")


def _analytic_profile(model, design, trunc, rule, k_start):
    if k_start == 0:
        return analytic.sadd(design, model, trunc, rule).profile
    res = analytic.sadd(design, model, trunc, rule)
    add = res.profile.add[k_start:]
    if not add:
        add = res.profile.add[-1:]
    sup = max(add)
    return PerformanceProfile(
        arl=res.profile.arl,
        add=tuple(add),
        sadd=sup,
        psi=res.profile.psi,
        stadd=res.profile.stadd,
        k_at_sup=int(max(range(len(add)), key=add.__getitem__)),
    )


def three_way(
    model: ExpChangeModel,
    design: EwmaDesign,
    replications: int = 100_000,
    seed: int = 0,
    trunc: SeriesTruncation = DEFAULT_TRUNCATION,
    n_nodes: int = 200,
    rel_tol: float = 1e-4,
    sigma: float = 3.0,
):
    """Closed forms vs quadrature vs simulation for one design.

    Returns a list of rows, one per metric and method, plus agreement
    flags: the two deterministic paths must agree to ``rel_tol`` relative
    and the simulation must sit within ``sigma`` standard errors of both.
    """
    an = {
        "arl": analytic.arl(design, trunc),
        "add0": analytic.add0(design, model, trunc),
        "psi": analytic.psi(design, model, trunc),
    }
    an["stadd"] = an["psi"] / an["arl"]
    sol = ewma_solution(model, design, n_nodes)
    ny = {
        "arl": sol.arl(design.z),
        "add0": sol.add0(design.z),
        "psi": sol.psi(design.z),
    }
    ny["stadd"] = ny["psi"] / ny["arl"]

    proc = ProcedureSpec(
        ProcedureKind.EWMA, design.threshold, lam=design.lam, z=design.z
    )
    cfg = McConfig(replications=replications, seed=seed)
    mc = {
        "arl": estimate_arl(proc, model, cfg, arl_hint=an["arl"]),
        "add0": estimate_add(
            proc,
            model,
            McConfig(replications=replications, seed=seed, change_point=0),
            arl_hint=an["add0"],
        ),
        "stadd": estimate_stadd(proc, model, cfg, arl_hint=an["arl"]),
    }

    rows = []
    ok = True
    for metric in ("arl", "add0", "psi", "stadd"):
        rel = abs(an[metric] - ny[metric]) / abs(an[metric])
        pair_ok = rel <= rel_tol
        mc_ok = True
        est = mc.get(metric)
        if est is not None:
            half = sigma * est.std_error
            mc_ok = (
                abs(est.mean - an[metric]) <= half
                and abs(est.mean - ny[metric]) <= half
            )
        ok = ok and pair_ok and mc_ok
        rows.append(
            {
                "metric": metric,
                "analytic": an[metric],
                "quadrature": ny[metric],
                "mc": est.mean if est else math.nan,
                "mc_se": est.std_error if est else math.nan,
                "pair_rel": rel,
                "pair_ok": pair_ok,
                "mc_ok": mc_ok,
            }
        )
    return rows, ok
