"""Case-study builders: comparison tables and figure data grids.

Tables pit the optimized chart (headstart fixed at 0, at the pre-change
mean 1, or free) against the ratio-procedure benchmarks: the headstarted
variant for the supremum delay, the zero-start one for the stationary
delay.  Figures trace how the delay measures respond to the change point,
the design pair, the target run length, and shift misspecification.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import analytic
from .analytic import DEFAULT_RULE, EwmaDesign, StabilizationRule
from .design import (
    CalibrationTarget,
    calibrate_ewma,
    misspecification_study,
    optimize_design,
    optimize_srr,
    sr_profile,
)
from .errors import EwmaOptError
from .evaluate import ewma_profile
from .model import ExpChangeModel

__all__ = ["TABLES", "DEFAULT_GAMMAS", "TableCell", "build_table", "figure_data"]

TABLES = {
    "1a": (0.5, "sadd"),
    "1b": (0.5, "stadd"),
    "2a": (1.0, "sadd"),
    "2b": (1.0, "stadd"),
}
DEFAULT_GAMMAS = (100.0, 1000.0, 10000.0)
FIGURE_GAMMA_GRID = (100.0, 10.0**2.5, 1000.0, 10.0**3.5, 10000.0)


@dataclass
class TableCell:
    procedure: str
    z_mode: str
    gamma: float
    metric: str
    value: float | None = None
    a: float | None = None
    lam: float | None = None
    z: float | None = None
    error: str = ""


def build_table(
    table_id: str,
    gammas: Sequence[float] = DEFAULT_GAMMAS,
    rel_tol: float = 1e-3,
    rule: StabilizationRule = DEFAULT_RULE,
    k_start: int = 0,
) -> list[TableCell]:
    """One comparison table: optimized chart rows plus the benchmark row.

    Per-cell failures land in the cell's ``error`` field so one bad cell
    does not lose the rest of the table.
    """
    if table_id not in TABLES:
        raise ValueError(f"unknown table {table_id!r}; choose from {sorted(TABLES)}")
    theta, objective = TABLES[table_id]
    model = ExpChangeModel(theta)
    cells: list[TableCell] = []
    for z_mode in ("0", "1", "zopt"):
        for gamma in gammas:
            cell = TableCell("ewma", z_mode, gamma, objective)
            try:
                zm = "free" if z_mode == "zopt" else float(z_mode)
                opt = optimize_design(
                    model,
                    CalibrationTarget(gamma, rel_tol),
                    objective,
                    zm,
                    rule=rule,
                    k_start=k_start,
                )
                cell.value = opt.value
                cell.a = opt.a_star
                cell.lam = opt.lambda_star
                cell.z = opt.z_star
            except EwmaOptError as exc:
                cell.error = f"{type(exc).__name__}: {exc}"
            cells.append(cell)
    for gamma in gammas:
        target = CalibrationTarget(gamma, rel_tol)
        if objective == "sadd":
            cell = TableCell("sr-r", "", gamma, "sadd")
            try:
                value, r_star, a_star = optimize_srr(model, target, rule, k_start=k_start)
                cell.value, cell.a, cell.z = value, a_star, r_star
            except EwmaOptError as exc:
                cell.error = f"{type(exc).__name__}: {exc}"
        else:
            cell = TableCell("sr", "", gamma, "stadd")
            try:
                profile, a_star = sr_profile(model, target, 0.0, rule, k_start=k_start)
                cell.value, cell.a, cell.z = profile.stadd, a_star, 0.0
            except EwmaOptError as exc:
                cell.error = f"{type(exc).__name__}: {exc}"
        cells.append(cell)
    return cells


def _delay_curve_rows(model, lam, z, gamma, rel_tol, rule, panel):
    a = calibrate_ewma(lam, z, CalibrationTarget(gamma, rel_tol))
    design = EwmaDesign(lam, z, a)
    profile = ewma_profile(model, design, "auto", rule=rule).profile
    return [
        {
            "panel": panel,
            "theta": model.theta,
            "gamma": gamma,
            "lambda": lam,
            "z": z,
            "A": a,
            "nu": k,
            "add": v,
        }
        for k, v in enumerate(profile.add)
    ]


def figure_data(
    fig_id: int,
    gammas: Sequence[float] | None = None,
    rel_tol: float = 1e-3,
    rule: StabilizationRule = DEFAULT_RULE,
) -> tuple[list[str], list[dict]]:
    """(header, rows) of the data grid behind one case-study figure."""
    if fig_id == 1:
        gamma = (gammas or (1000.0,))[0]
        model = ExpChangeModel(0.5)
        rows = []
        for z in (0.0, 0.5, 1.0, 1.5):
            rows += _delay_curve_rows(model, 0.2, z, gamma, rel_tol, rule, "a")
        rows += _delay_curve_rows(model, 0.1, 1.0, gamma, rel_tol, rule, "b")
        return ["panel", "theta", "gamma", "lambda", "z", "A", "nu", "add"], rows

    if fig_id == 2:
        gamma = (gammas or (1000.0,))[0]
        model = ExpChangeModel(2.0)
        lam_grid = np.geomspace(0.02, 0.7, 12)
        z_grid = np.linspace(0.0, 1.5, 9)
        rows = []
        for metric in ("sadd", "stadd"):
            for lam in lam_grid:
                for z in z_grid:
                    a = calibrate_ewma(float(lam), float(z), CalibrationTarget(gamma, rel_tol))
                    design = EwmaDesign(float(lam), float(z), a)
                    if metric == "stadd":
                        val = analytic.stadd(design, model)
                    else:
                        val = ewma_profile(model, design, "auto", rule=rule).profile.sadd
                    rows.append(
                        {
                            "metric": metric,
                            "theta": 2.0,
                            "gamma": gamma,
                            "lambda": float(lam),
                            "z": float(z),
                            "A": a,
                            "value": val,
                        }
                    )
        return ["metric", "theta", "gamma", "lambda", "z", "A", "value"], rows

    if fig_id == 3:
        gamma = (gammas or (1000.0,))[0]
        model = ExpChangeModel(2.0)
        lam_grid = np.geomspace(0.01, 0.8, 21)
        vals = []
        for lam in lam_grid:
            a = calibrate_ewma(float(lam), 1.0, CalibrationTarget(gamma, rel_tol))
            vals.append((float(lam), a, analytic.stadd(EwmaDesign(float(lam), 1.0, a), model)))
        vmin = min(v for _, _, v in vals)
        rows = [
            {
                "theta": 2.0,
                "gamma": gamma,
                "z": 1.0,
                "lambda": lam,
                "A": a,
                "stadd": v,
                "loss": v / vmin - 1.0,
            }
            for lam, a, v in vals
        ]
        return ["theta", "gamma", "z", "lambda", "A", "stadd", "loss"], rows

    if fig_id == 4:
        gamma_grid = tuple(gammas) if gammas else FIGURE_GAMMA_GRID
        rows = []
        model1 = ExpChangeModel(1.0)
        for gamma in gamma_grid:
            for lam in np.geomspace(0.02, 0.6, 12):
                a = calibrate_ewma(float(lam), 1.0, CalibrationTarget(gamma, rel_tol))
                rows.append(
                    {
                        "panel": "a",
                        "theta": 1.0,
                        "gamma": gamma,
                        "lambda": float(lam),
                        "z": 1.0,
                        "A": a,
                        "value": analytic.stadd(EwmaDesign(float(lam), 1.0, a), model1),
                    }
                )
        for theta in (0.5, 1.0, 2.0):
            model = ExpChangeModel(theta)
            for gamma in gamma_grid:
                opt = optimize_design(
                    model, CalibrationTarget(gamma, rel_tol), "stadd", 1.0, rule=rule
                )
                rows.append(
                    {
                        "panel": "b",
                        "theta": theta,
                        "gamma": gamma,
                        "lambda": opt.lambda_star,
                        "z": 1.0,
                        "A": opt.a_star,
                        "value": opt.value,
                    }
                )
        return ["panel", "theta", "gamma", "lambda", "z", "A", "value"], rows

    if fig_id == 5:
        gamma_grid = tuple(gammas) if gammas else FIGURE_GAMMA_GRID
        report = misspecification_study(0.5, (0.5, 1.0, 2.0), gamma_grid, z=1.0, rel_tol=rel_tol, rule=rule)
        rows = []
        for i, gamma in enumerate(report.gammas):
            for j, theta_t in enumerate(report.theta_true):
                rows.append(
                    {
                        "procedure": "ewma",
                        "theta_design": report.theta_design,
                        "theta_true": theta_t,
                        "gamma": gamma,
                        "loss_ratio": report.ewma_ratio[i][j],
                    }
                )
                rows.append(
                    {
                        "procedure": "sr",
                        "theta_design": report.theta_design,
                        "theta_true": theta_t,
                        "gamma": gamma,
                        "loss_ratio": report.sr_ratio[i][j],
                    }
                )
        return ["procedure", "theta_design", "theta_true", "gamma", "loss_ratio"], rows

    raise ValueError(f"unknown figure {fig_id!r}; choose 1-5")
