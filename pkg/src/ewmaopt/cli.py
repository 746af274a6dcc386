"""Batch command-line surface emitting CSV with a provenance header.

Commands: evaluate, table, figure, calibrate, optimize, simulate,
selftest.  Every output starts with a comment block holding the resolved
configuration; feeding that file back through ``--config`` re-runs the
command with identical settings, and identical settings produce
byte-identical output (simulation included, via the recorded seed).

Exit codes: 0 success, 2 invalid arguments, 3 numerical failure,
4 partial table (some cells errored).
"""

from __future__ import annotations

import argparse
import math
import sys
from pathlib import Path

from . import __version__, analytic
from .analytic import DEFAULT_RULE, EwmaDesign
from .design import (
    CalibrationTarget,
    calibrate_ewma,
    calibrate_sr,
    optimize_design,
)
from .errors import EwmaOptError
from .evaluate import ewma_profile, ewma_solution, three_way
from .mc import McConfig, ProcedureKind, ProcedureSpec, estimate_add, estimate_arl, estimate_stadd
from .model import ExpChangeModel
from .study import DEFAULT_GAMMAS, build_table, figure_data

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_NUMERICAL = 3
EXIT_PARTIAL = 4

_CONFIG_KEYS = (
    "theta",
    "lambda",
    "z",
    "A",
    "gamma",
    "objective",
    "method",
    "proc",
    "r",
    "seed",
    "reps",
    "metric",
    "nu",
    "jobs",
)


def _fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, float):
        if math.isnan(value):
            return "nan"
        return f"{value:.6g}"
    return str(value)


def _provenance(command: str, args: argparse.Namespace) -> dict:
    prov = {"artifact": "ewmaopt", "version": __version__, "command": command}
    for key in _CONFIG_KEYS:
        val = getattr(args, _dest(key), None)
        if val is not None:
            prov[key] = repr(val) if isinstance(val, float) else str(val)
    return prov


def _render_csv(provenance: dict, header: list[str], rows: list[dict]) -> str:
    lines = [f"# {k} = {v}" for k, v in sorted(provenance.items())]
    lines.append(",".join(header))
    for row in rows:
        lines.append(",".join(_fmt(row.get(col)) for col in header))
    return "\n".join(lines) + "\n"


def _emit(text: str, args, default_name: str) -> None:
    if getattr(args, "out", None):
        out_dir = Path(args.out)
        out_dir.mkdir(parents=True, exist_ok=True)
        (out_dir / default_name).write_text(text)
        print(str(out_dir / default_name))
    else:
        sys.stdout.write(text)


def _dest(flag: str) -> str:
    return {"lambda": "lam", "A": "a"}.get(flag, flag)


def parse_config_file(path: str) -> dict:
    """key = value lines; leading '# ' (a provenance block) is accepted.

    Reading stops at the first line that is neither a comment nor a
    key/value pair, so a previous output CSV works directly.
    """
    out = {}
    for raw in Path(path).read_text().splitlines():
        line = raw.strip()
        if line.startswith("#"):
            line = line.lstrip("#").strip()
        if not line:
            continue
        if "=" not in line:
            break
        key, _, value = line.partition("=")
        out[key.strip()] = value.strip()
    return out


def _apply_config(args: argparse.Namespace) -> None:
    if not getattr(args, "config", None):
        return
    cfg = parse_config_file(args.config)
    casts = {
        "theta": float,
        "lambda": float,
        "z": float,
        "A": float,
        "gamma": float,
        "r": float,
        "nu": float,
        "seed": int,
        "reps": int,
        "jobs": int,
        "objective": str,
        "method": str,
        "proc": str,
        "metric": str,
    }
    for key, cast in casts.items():
        dest = _dest(key)
        if getattr(args, dest, None) is None and key in cfg:
            setattr(args, dest, cast(cfg[key]))


def _add_common(p: argparse.ArgumentParser, *flags: str) -> None:
    spec = {
        "theta": dict(type=float, help="post-change mean shift (post mean = 1 + theta)"),
        "lambda": dict(type=float, dest="lam", help="smoothing factor in (0, 1]"),
        "z": dict(type=float, help="chart headstart"),
        "A": dict(type=float, dest="a", help="detection threshold"),
        "gamma": dict(type=float, help="target run length to false alarm"),
        "objective": dict(choices=("sadd", "stadd"), help="delay measure to minimize"),
        "method": dict(choices=("analytic", "quadrature", "mc", "all"), help="evaluation path"),
        "proc": dict(choices=("ewma", "sr", "srr"), help="procedure to run"),
        "r": dict(type=float, help="ratio-procedure headstart"),
        "seed": dict(type=int, help="simulation seed"),
        "reps": dict(type=int, help="simulation replications"),
        "metric": dict(choices=("arl", "add", "stadd"), help="simulated quantity"),
        "nu": dict(type=float, help="change point (last pre-change index)"),
        "jobs": dict(type=int, help="worker threads for simulation blocks"),
    }
    for flag in flags:
        p.add_argument(f"--{flag}", **spec[flag])
    p.add_argument("--out", help="output directory (default: print to stdout)")
    p.add_argument("--config", help="key = value file (or previous output CSV)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ewmaopt",
        description="Run-length analysis and optimal design of one-sided "
        "EWMA charts for exponential data",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("evaluate", help="operating characteristics of one design")
    _add_common(p, "theta", "lambda", "z", "A", "method", "seed", "reps", "jobs")

    p = sub.add_parser("table", help="reproduce a comparison table")
    p.add_argument("table_id", choices=sorted(build_table.__globals__["TABLES"]))
    p.add_argument("--gamma", type=float, action="append", dest="gammas",
                   help="target ARL (repeatable; default 100, 1000, 10000)")
    p.add_argument("--out", help="output directory")
    p.add_argument("--config", help="config file")

    p = sub.add_parser("figure", help="emit the data grid behind a figure")
    p.add_argument("fig_id", type=int, choices=(1, 2, 3, 4, 5))
    p.add_argument("--gamma", type=float, action="append", dest="gammas")
    p.add_argument("--out", help="output directory")
    p.add_argument("--config", help="config file")

    p = sub.add_parser("calibrate", help="threshold matching a target run length")
    _add_common(p, "proc", "theta", "lambda", "z", "r", "gamma")

    p = sub.add_parser("optimize", help="optimal design pair under the ARL constraint")
    _add_common(p, "theta", "gamma", "objective")
    p.add_argument("--z", default=None,
                   help="fixed headstart value, or 'free' to optimize it")

    p = sub.add_parser("simulate", help="Monte Carlo estimate of one metric")
    _add_common(p, "proc", "theta", "lambda", "z", "r", "A", "gamma",
                "metric", "nu", "seed", "reps", "jobs")

    p = sub.add_parser("selftest", help="three-way agreement spot check")
    _add_common(p, "seed", "reps")
    return parser


def _require(args, *names) -> None:
    missing = [n for n in names if getattr(args, _dest(n), None) is None]
    if missing:
        raise SystemExit(
            f"ewmaopt: missing required option(s): {', '.join('--' + m for m in missing)}"
        )


def cmd_evaluate(args) -> int:
    _require(args, "theta", "lambda", "A")
    if args.z is None:
        args.z = 0.0
    if args.method is None:
        args.method = "analytic"
    if args.seed is None:
        args.seed = 12345
    if args.reps is None:
        args.reps = 100_000
    model = ExpChangeModel(args.theta)
    design = EwmaDesign(args.lam, args.z, args.a)
    rows = []
    methods = ("analytic", "quadrature", "mc") if args.method == "all" else (args.method,)
    for method in methods:
        if method == "mc":
            proc = ProcedureSpec(ProcedureKind.EWMA, design.threshold,
                                 lam=design.lam, z=design.z)
            hint = ewma_profile(model, design, "auto").profile.arl
            cfg = McConfig(replications=args.reps, seed=args.seed,
                           n_jobs=args.jobs or 1)
            est = estimate_arl(proc, model, cfg, arl_hint=hint)
            rows.append({"metric": "arl", "method": "mc", "value": est.mean,
                         "std_error": est.std_error})
            est = estimate_add(proc, model,
                               McConfig(replications=args.reps, seed=args.seed,
                                        change_point=0, n_jobs=args.jobs or 1),
                               arl_hint=hint)
            rows.append({"metric": "add_0", "method": "mc", "value": est.mean,
                         "std_error": est.std_error})
            est = estimate_stadd(proc, model, cfg, arl_hint=hint)
            rows.append({"metric": "stadd", "method": "mc", "value": est.mean,
                         "std_error": est.std_error})
        else:
            result = ewma_profile(model, design, method)
            profile = result.profile
            rows.append({"metric": "arl", "method": result.method, "value": profile.arl})
            for k, v in enumerate(profile.add):
                rows.append({"metric": f"add_{k}", "method": result.method, "value": v})
            rows.append({"metric": "sadd", "method": result.method, "value": profile.sadd})
            rows.append({"metric": "psi", "method": result.method, "value": profile.psi})
            rows.append({"metric": "stadd", "method": result.method, "value": profile.stadd})
    text = _render_csv(_provenance("evaluate", args),
                       ["metric", "method", "value", "std_error"], rows)
    _emit(text, args, "evaluate.csv")
    return EXIT_OK


def cmd_table(args) -> int:
    gammas = tuple(args.gammas) if args.gammas else DEFAULT_GAMMAS
    cells = build_table(args.table_id, gammas)
    rows = [
        {
            "procedure": c.procedure,
            "z_mode": c.z_mode,
            "gamma": c.gamma,
            "metric": c.metric,
            "value": c.value,
            "A": c.a,
            "lambda": c.lam,
            "z": c.z,
            "error": c.error,
        }
        for c in cells
    ]
    prov = {"artifact": "ewmaopt", "version": __version__, "command": "table",
            "table_id": args.table_id,
            "gamma_list": ";".join(repr(g) for g in gammas)}
    text = _render_csv(prov, ["procedure", "z_mode", "gamma", "metric", "value",
                              "A", "lambda", "z", "error"], rows)
    _emit(text, args, f"table_{args.table_id}.csv")
    return EXIT_PARTIAL if any(c.error for c in cells) else EXIT_OK


def cmd_figure(args) -> int:
    gammas = tuple(args.gammas) if args.gammas else None
    header, rows = figure_data(args.fig_id, gammas)
    prov = {"artifact": "ewmaopt", "version": __version__, "command": "figure",
            "fig_id": str(args.fig_id)}
    if gammas:
        prov["gamma_list"] = ";".join(repr(g) for g in gammas)
    text = _render_csv(prov, header, rows)
    _emit(text, args, f"figure_{args.fig_id}.csv")
    return EXIT_OK


def cmd_calibrate(args) -> int:
    _require(args, "proc", "gamma")
    target = CalibrationTarget(args.gamma)
    if args.proc == "ewma":
        _require(args, "lambda")
        z = args.z if args.z is not None else 0.0
        a = calibrate_ewma(args.lam, z, target)
        row = {"proc": "ewma", "gamma": args.gamma, "lambda": args.lam, "z": z, "A": a}
    else:
        _require(args, "theta")
        r = args.r if args.r is not None else 0.0
        a = calibrate_sr(ExpChangeModel(args.theta), target, r)
        row = {"proc": args.proc, "gamma": args.gamma, "r": r, "A": a}
    text = _render_csv(_provenance("calibrate", args),
                       ["proc", "gamma", "lambda", "z", "r", "A"], [row])
    _emit(text, args, "calibrate.csv")
    return EXIT_OK


def cmd_optimize(args) -> int:
    _require(args, "theta", "gamma", "objective")
    z_mode = "free"
    if args.z is not None and args.z != "free":
        z_mode = float(args.z)
    model = ExpChangeModel(args.theta)
    opt = optimize_design(model, CalibrationTarget(args.gamma), args.objective, z_mode)
    row = {
        "objective": opt.objective,
        "gamma": opt.gamma,
        "lambda_star": opt.lambda_star,
        "z_star": opt.z_star,
        "A_star": opt.a_star,
        "value": opt.value,
        "achieved_arl": opt.achieved_arl,
        "evaluations": opt.evaluations,
    }
    text = _render_csv(_provenance("optimize", args),
                       ["objective", "gamma", "lambda_star", "z_star", "A_star",
                        "value", "achieved_arl", "evaluations"], [row])
    _emit(text, args, "optimize.csv")
    return EXIT_OK


def cmd_simulate(args) -> int:
    _require(args, "proc", "theta", "metric")
    if args.seed is None:
        args.seed = 12345
    if args.reps is None:
        args.reps = 100_000
    model = ExpChangeModel(args.theta)
    if args.proc == "ewma":
        _require(args, "lambda", "A")
        z = args.z if args.z is not None else 0.0
        proc = ProcedureSpec(ProcedureKind.EWMA, args.a, lam=args.lam, z=z)
        hint = ewma_profile(model, EwmaDesign(args.lam, z, args.a), "auto").profile.arl
    else:
        if args.a is None:
            _require(args, "gamma")
            args.a = calibrate_sr(model, CalibrationTarget(args.gamma),
                                  args.r if args.r is not None else 0.0)
        if args.proc == "srr":
            proc = ProcedureSpec(ProcedureKind.SRR, args.a, r=args.r or 0.0)
        else:
            proc = ProcedureSpec(ProcedureKind.SR, args.a)
        from .design import sr_solution

        hint = sr_solution(model, args.a).arl(proc.initial_state)
    jobs = args.jobs or 1
    if args.metric == "arl":
        cfg = McConfig(replications=args.reps, seed=args.seed, n_jobs=jobs)
        est = estimate_arl(proc, model, cfg, arl_hint=hint)
    elif args.metric == "add":
        nu = args.nu if args.nu is not None else 0.0
        cfg = McConfig(replications=args.reps, seed=args.seed, change_point=nu,
                       n_jobs=jobs)
        est = estimate_add(proc, model, cfg, arl_hint=hint)
    else:
        cfg = McConfig(replications=args.reps, seed=args.seed, n_jobs=jobs)
        est = estimate_stadd(proc, model, cfg, arl_hint=hint)
    print(f"cap_hits={est.cap_hits} discarded={est.discarded} "
          f"used={est.replications_used}", file=sys.stderr)
    row = {
        "proc": args.proc,
        "metric": args.metric,
        "nu": args.nu,
        "mean": est.mean,
        "std_error": est.std_error,
        "replications_used": est.replications_used,
        "cap_hits": est.cap_hits,
        "discarded": est.discarded,
    }
    text = _render_csv(_provenance("simulate", args),
                       ["proc", "metric", "nu", "mean", "std_error",
                        "replications_used", "cap_hits", "discarded"], [row])
    _emit(text, args, "simulate.csv")
    return EXIT_OK


def cmd_selftest(args) -> int:
    seed = args.seed if args.seed is not None else 12345
    reps = args.reps if args.reps is not None else 20_000
    configs = [
        (0.5, 1.0, 0.0, 2.0),
        (0.5, 0.2, 0.5, 1.2),
        (1.0, 0.3, 1.0, 1.4),
        (1.0, 0.1, 0.0, 1.1),
    ]
    all_ok = True
    rows_out = []
    for theta, lam, z, a in configs:
        rows, ok = three_way(ExpChangeModel(theta), EwmaDesign(lam, z, a),
                             replications=reps, seed=seed)
        all_ok = all_ok and ok
        for r in rows:
            r.update({"theta": theta, "lambda": lam, "z": z, "A": a})
            rows_out.append(r)
        print(f"theta={theta} lambda={lam} z={z} A={a}: "
              f"{'ok' if ok else 'DISAGREEMENT'}")
    text = _render_csv(_provenance("selftest", args),
                       ["theta", "lambda", "z", "A", "metric", "analytic",
                        "quadrature", "mc", "mc_se", "pair_ok", "mc_ok"], rows_out)
    _emit(text, args, "selftest.csv")
    return EXIT_OK if all_ok else EXIT_NUMERICAL


_COMMANDS = {
    "evaluate": cmd_evaluate,
    "table": cmd_table,
    "figure": cmd_figure,
    "calibrate": cmd_calibrate,
    "optimize": cmd_optimize,
    "simulate": cmd_simulate,
    "selftest": cmd_selftest,
}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    _apply_config(args)
    try:
        return _COMMANDS[args.command](args)
    except EwmaOptError as exc:
        print(f"ewmaopt: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except ValueError as exc:
        print(f"ewmaopt: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
