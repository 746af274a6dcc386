"""Monte Carlo simulation of the detection procedures.

Independent estimates of the run length, conditional detection delays,
and the multi-cyclic stationary delay, used to validate both the closed
forms and the quadrature solver.

Replications are simulated in fixed-size blocks of 16384; each block
draws from its own generator seeded by SeedSequence((seed, block_index)).
Block results are combined in block order, so estimates are bit-for-bit
identical whether blocks run serially or across any number of workers.
"""

from __future__ import annotations

import enum
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .errors import FlaggedEstimate, HorizonCap, InsufficientConditioning
from .model import ExpChangeModel, Regime, sample

__all__ = [
    "ProcedureKind",
    "ProcedureSpec",
    "McConfig",
    "McEstimate",
    "run_once",
    "estimate_arl",
    "estimate_add",
    "estimate_stadd",
]

BLOCK_SIZE = 16384
CAP_HIT_FRACTION = 1e-3


class ProcedureKind(enum.Enum):
    EWMA = "ewma"
    SR = "sr"
    SRR = "srr"


@dataclass(frozen=True)
class ProcedureSpec:
    """A detection procedure to simulate: statistic recursion plus threshold."""

    kind: ProcedureKind
    threshold: float
    lam: float | None = None
    z: float | None = None
    r: float | None = None

    def __post_init__(self):
        if not self.threshold > 0:
            raise ValueError("threshold must be positive")
        if self.kind is ProcedureKind.EWMA:
            if self.lam is None or not 0.0 < self.lam <= 1.0:
                raise ValueError("EWMA needs a smoothing factor in (0, 1]")
            if self.z is None or self.z < 0.0:
                raise ValueError("EWMA needs a nonnegative headstart z")
        elif self.kind is ProcedureKind.SRR:
            if self.r is None or not 0.0 <= self.r < self.threshold:
                raise ValueError("the headstarted ratio procedure needs r in [0, A)")

    @property
    def initial_state(self) -> float:
        if self.kind is ProcedureKind.EWMA:
            return float(self.z)
        if self.kind is ProcedureKind.SRR:
            return float(self.r)
        return 0.0

    def stepper(self, model: ExpChangeModel):
        """Vectorized one-step state update s, x -> s'."""
        if self.kind is ProcedureKind.EWMA:
            lam = self.lam
            alpha = 1.0 - lam

            def step(state, x):
                return alpha * state + lam * x

        else:
            theta = model.theta
            scale = theta / (1.0 + theta)
            inv = 1.0 / (1.0 + theta)

            def step(state, x):
                return (1.0 + state) * np.exp(x * scale) * inv

        return step


@dataclass(frozen=True)
class McConfig:
    """Replication count, seeding, horizon, and change-point placement.

    ``change_point`` is the index of the last pre-change observation;
    ``math.inf`` means the change never happens.  ``horizon_cap`` defaults
    to 100x the expected run length (the ``arl_hint`` given to the
    estimators) so that cap hits stay negligible.
    """

    replications: int = 100_000
    seed: int = 0
    horizon_cap: int | None = None
    change_point: float = math.inf
    n_jobs: int = 1

    def __post_init__(self):
        if self.replications < 1:
            raise ValueError("replications must be at least 1")
        if self.change_point < 0:
            raise ValueError("change_point must be nonnegative (or inf)")


@dataclass(frozen=True)
class McEstimate:
    mean: float
    std_error: float
    replications_used: int
    cap_hits: int
    discarded: int = 0


def run_once(
    proc: ProcedureSpec,
    model: ExpChangeModel,
    nu: float,
    rng: np.random.Generator,
    horizon_cap: int = 10_000_000,
) -> int:
    """Simulate one run; returns the first n with statistic >= threshold."""
    step = proc.stepper(model)
    state = proc.initial_state
    n = 0
    while n < horizon_cap:
        n += 1
        regime = Regime.PRE_CHANGE if n <= nu else Regime.POST_CHANGE
        x = float(sample(model, regime, rng))
        state = float(step(state, np.asarray(x)))
        if state >= proc.threshold:
            return n
    raise HorizonCap(f"run did not stop within {horizon_cap} steps")


def _resolve_cap(cfg: McConfig, arl_hint: float | None, extra: float = 0.0) -> int:
    if cfg.horizon_cap is not None:
        return cfg.horizon_cap
    base = 100.0 * (arl_hint if arl_hint else 10_000.0)
    return int(math.ceil(base + extra))


def _block_sizes(total: int):
    sizes = [BLOCK_SIZE] * (total // BLOCK_SIZE)
    if total % BLOCK_SIZE:
        sizes.append(total % BLOCK_SIZE)
    return sizes


def _run_blocks(worker, cfg: McConfig):
    sizes = _block_sizes(cfg.replications)
    if cfg.n_jobs > 1:
        with ThreadPoolExecutor(max_workers=cfg.n_jobs) as pool:
            results = list(pool.map(worker, range(len(sizes)), sizes))
    else:
        results = [worker(i, n) for i, n in enumerate(sizes)]
    return np.concatenate(results)


def _stop_times_block(proc, model, nu, n, cap, rng):
    """Stop times of n lockstep runs; inf marks cap hits."""
    step = proc.stepper(model)
    pre_mean = 1.0
    post_mean = model.post_mean
    a = proc.threshold
    state = np.full(n, proc.initial_state)
    alive = np.arange(n)
    times = np.full(n, np.inf)
    t = 0
    while alive.size and t < cap:
        t += 1
        mean = pre_mean if t <= nu else post_mean
        x = -mean * np.log1p(-rng.random(alive.size))
        state = step(state, x)
        hit = state >= a
        if hit.any():
            times[alive[hit]] = t
            keep = ~hit
            state = state[keep]
            alive = alive[keep]
    return times


def estimate_arl(
    proc: ProcedureSpec,
    model: ExpChangeModel,
    cfg: McConfig,
    arl_hint: float | None = None,
) -> McEstimate:
    """Mean run length under the no-change measure.

    Cap-hit runs are excluded (truncating them in would bias the mean
    down); more than 0.1% of them raises FlaggedEstimate carrying the
    estimate from the runs that did stop.
    """
    if not math.isinf(cfg.change_point):
        raise ValueError("run-length estimation requires change_point = inf")
    cap = _resolve_cap(cfg, arl_hint)

    def worker(idx, n):
        rng = np.random.default_rng(np.random.SeedSequence((cfg.seed, idx)))
        return _stop_times_block(proc, model, math.inf, n, cap, rng)

    times = _run_blocks(worker, cfg)
    finite = np.isfinite(times)
    used = int(finite.sum())
    cap_hits = times.size - used
    vals = times[finite]
    est = McEstimate(
        mean=float(vals.mean()),
        std_error=float(vals.std(ddof=1) / math.sqrt(used)) if used > 1 else math.nan,
        replications_used=used,
        cap_hits=cap_hits,
    )
    if cap_hits > CAP_HIT_FRACTION * times.size:
        raise FlaggedEstimate(
            f"{cap_hits} of {times.size} runs hit the horizon cap {cap}",
            estimate=est,
            cap_hits=cap_hits,
        )
    return est


def estimate_add(
    proc: ProcedureSpec,
    model: ExpChangeModel,
    cfg: McConfig,
    arl_hint: float | None = None,
) -> McEstimate:
    """Conditional delay E[T - nu | T > nu] for the configured change point.

    Runs that stop at or before nu are discarded and counted; fewer than
    1000 surviving runs raises InsufficientConditioning.
    """
    nu = cfg.change_point
    if math.isinf(nu):
        raise ValueError("conditional delay estimation requires a finite change point")
    cap = _resolve_cap(cfg, arl_hint, extra=nu)

    def worker(idx, n):
        rng = np.random.default_rng(np.random.SeedSequence((cfg.seed, idx)))
        return _stop_times_block(proc, model, nu, n, cap, rng)

    times = _run_blocks(worker, cfg)
    finite = np.isfinite(times)
    cap_hits = int(times.size - finite.sum())
    if cap_hits > CAP_HIT_FRACTION * times.size:
        raise FlaggedEstimate(
            f"{cap_hits} of {times.size} runs hit the horizon cap {cap}",
            cap_hits=cap_hits,
        )
    surviving = times[finite & (times > nu)]
    discarded = int(times.size - cap_hits - surviving.size)
    if surviving.size < 1000:
        raise InsufficientConditioning(
            f"only {surviving.size} runs survived past nu={nu:g}; "
            "increase replications or lower nu"
        )
    delays = surviving - nu
    return McEstimate(
        mean=float(delays.mean()),
        std_error=float(delays.std(ddof=1) / math.sqrt(delays.size)),
        replications_used=int(delays.size),
        cap_hits=cap_hits,
        discarded=discarded,
    )


def _stadd_delays_block(proc, model, nu, n, cap, rng):
    """Delays of the first alarm past nu under restart-after-false-alarm."""
    step = proc.stepper(model)
    a = proc.threshold
    s0 = proc.initial_state
    post_mean = model.post_mean
    state = np.full(n, s0)
    # pre-change phase: every false alarm restarts the statistic from scratch
    for _ in range(int(nu)):
        x = -np.log1p(-rng.random(n))
        state = step(state, x)
        np.copyto(state, s0, where=state >= a)
    delays = np.full(n, np.inf)
    alive = np.arange(n)
    t = 0
    while alive.size and t < cap:
        t += 1
        x = -post_mean * np.log1p(-rng.random(alive.size))
        state = step(state, x)
        hit = state >= a
        if hit.any():
            delays[alive[hit]] = t
            keep = ~hit
            state = state[keep]
            alive = alive[keep]
    return delays


def estimate_stadd(
    proc: ProcedureSpec,
    model: ExpChangeModel,
    cfg: McConfig,
    arl_hint: float | None = None,
) -> McEstimate:
    """Stationary delay: the procedure restarts after every false alarm.

    The change is placed at nu = cfg.change_point when finite, otherwise
    at 20x ``arl_hint`` (far enough for the restart cycle to reach its
    stationary regime); each replication contributes the time from the
    change to the first alarm after it.
    """
    if math.isfinite(cfg.change_point):
        nu = float(cfg.change_point)
    else:
        if arl_hint is None:
            raise ValueError(
                "estimate_stadd needs a finite change_point or an arl_hint"
            )
        nu = 20.0 * arl_hint
    cap = _resolve_cap(cfg, arl_hint)

    def worker(idx, n):
        rng = np.random.default_rng(np.random.SeedSequence((cfg.seed, idx)))
        return _stadd_delays_block(proc, model, nu, n, cap, rng)

    delays = _run_blocks(worker, cfg)
    finite = np.isfinite(delays)
    used = int(finite.sum())
    cap_hits = delays.size - used
    vals = delays[finite]
    est = McEstimate(
        mean=float(vals.mean()),
        std_error=float(vals.std(ddof=1) / math.sqrt(used)) if used > 1 else math.nan,
        replications_used=used,
        cap_hits=cap_hits,
    )
    if cap_hits > CAP_HIT_FRACTION * delays.size:
        raise FlaggedEstimate(
            f"{cap_hits} of {delays.size} cycles hit the horizon cap {cap}",
            estimate=est,
            cap_hits=cap_hits,
        )
    return est
