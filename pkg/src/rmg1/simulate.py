"""Event-driven simulation of the queue with state-dependent arrival rates.

One replication is a strictly sequential event loop over idle phases and
busy service segments. Arrivals during a segment form a non-homogeneous
Poisson process in the remaining (or elapsed) service time and are sampled
exactly by thinning against the envelope rate lambda0 * max f. All random
draws of a replication come from a single stream in a fixed order (idle
exponentials, service inverse-CDF draws, thinning exponentials and
acceptance uniforms), which makes runs bitwise reproducible; replication
seeds are derived from the base seed with a splittable seed sequence.
"""

from __future__ import annotations

import math
import random
from collections import deque
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .errors import ModelError
from .model import QueueModel

#: reported confidence half-widths are this many standard errors wide
CI_SIGMA = 3.0

DEFAULT_BATCHES = 32


class RateMode(str, Enum):
    """Which service clock modulates the arrival rate while busy."""

    REMAINING = "remaining"
    ELAPSED = "elapsed"


@dataclass(frozen=True)
class SimState:
    """Instantaneous state: queue length, remaining service time, clock."""

    n: int
    r: float | None
    clock: float


@dataclass(frozen=True)
class MetricEstimate:
    """Point estimate with a batch-means (or between-replication) error."""

    value: float
    se: float

    @property
    def ci_half(self) -> float:
        return CI_SIGMA * self.se

    def covers(self, target: float, z: float = CI_SIGMA) -> bool:
        return abs(target - self.value) <= z * self.se

    def to_dict(self) -> dict:
        return {"value": self.value, "se": self.se, "ci_half": self.ci_half}


@dataclass
class SimulationReport:
    """Estimates and tallies from one replication (or an aggregate)."""

    horizon: float
    warmup: float
    seed: int
    mode: str
    n_batches: int
    arrivals: int
    completions: int
    final_n: int
    max_queue: int
    effective_rate: float
    metrics: dict[str, MetricEstimate]
    completion_histogram: np.ndarray
    continuous_histogram: np.ndarray
    final_state: SimState | None = None
    trace: list | None = None
    replication_count: int = 1
    per_replication: list | None = None

    def to_dict(self) -> dict:
        out = {
            "horizon": self.horizon,
            "warmup": self.warmup,
            "seed": self.seed,
            "mode": self.mode,
            "n_batches": self.n_batches,
            "arrivals": self.arrivals,
            "completions": self.completions,
            "final_n": self.final_n,
            "max_queue": self.max_queue,
            "effective_rate": self.effective_rate,
            "replication_count": self.replication_count,
            "metrics": {k: v.to_dict() for k, v in self.metrics.items()},
            "completion_histogram": [int(c) for c in self.completion_histogram],
            "continuous_histogram": [float(c) for c in self.continuous_histogram],
        }
        return out


def default_warmup(model: QueueModel, horizon: float) -> float:
    """1% of the horizon, at least 100 mean services, capped below the
    horizon so short diagnostic runs stay legal."""
    return min(max(0.01 * horizon, 100.0 * model.mean_service()), 0.5 * horizon)


def _arrival_sampler(model: QueueModel, rng: random.Random, mode: RateMode):
    """Closure sampling the next arrival offset within a busy segment.

    Given the remaining time ``r`` at segment start (and the full service
    length ``sigma`` of the customer in service), returns the offset of the
    first arrival before the segment ends, or None. Thinning: candidate
    points at the envelope rate are accepted with probability f/f_max, so
    accepted counts over a full service are Poisson in the cumulative
    multiplier.
    """
    lam0 = model.lambda0
    fmax = model.reshape.max_value(model.cutoff)
    cand_rate = lam0 * fmax
    if cand_rate <= 0.0:
        return lambda r, sigma: None
    f = model.reshape.scalar()
    u = rng.random
    log1p = math.log1p
    elapsed_mode = mode == RateMode.ELAPSED

    def next_offset(r, sigma):
        s = 0.0
        e0 = sigma - r
        while True:
            s -= log1p(-u()) / cand_rate
            if s >= r:
                return None
            fv = f(e0 + s) if elapsed_mode else f(r - s)
            if u() * fmax <= fv:
                return s

    return next_offset


def sample_busy_arrival(r0: float, model: QueueModel,
                        rng: random.Random) -> float | None:
    """First arrival offset in (0, r0) while a service with remaining time
    r0 is in progress, or None when none occurs before completion."""
    if not r0 > 0:
        raise ModelError("remaining time must be positive")
    return _arrival_sampler(model, rng, RateMode.REMAINING)(r0, r0)


def run(model: QueueModel, horizon: float, seed: int,
        mode: RateMode = RateMode.REMAINING, warmup: float | None = None,
        n_batches: int = DEFAULT_BATCHES,
        collect_trace: bool = False) -> SimulationReport:
    """Simulate one replication started from the empty state.

    Continuous metrics are time-weighted integrals over [warmup, horizon]
    with batch-means errors over ``n_batches`` equal time batches;
    per-customer metrics are tallied at completion epochs. ``arrivals``,
    ``completions`` and ``final_n`` count the whole run, so flow
    conservation holds exactly.
    """
    mode = RateMode(mode)
    if warmup is None:
        warmup = default_warmup(model, horizon)
    if not horizon > warmup >= 0.0:
        raise ModelError(f"need horizon > warmup >= 0, got {horizon}, {warmup}")
    rng = random.Random(seed)
    u = rng.random
    lam0 = model.lambda0
    sample_sigma = model.service.sampler()
    next_offset = _arrival_sampler(model, rng, mode)
    log1p = math.log1p

    nb = int(n_batches)
    batch_len = (horizon - warmup) / nb
    q_time = [0.0] * nb
    empty_time = [0.0] * nb
    arrivals_b = [0] * nb
    completions_b = [0] * nb
    sojourn_b = [0.0] * nb
    waiting_b = [0.0] * nb
    empty_comp_b = [0] * nb
    cont_hist: list[float] = [0.0]
    comp_hist: list[int] = [0]
    fifo: deque[float] = deque()
    trace: list | None = [] if collect_trace else None

    arrivals = completions = 0
    max_queue = 0
    clock = 0.0
    n = 0
    r = 0.0
    sigma = 0.0

    def advance(t0: float, t1: float, level: int):
        lo = t0 if t0 > warmup else warmup
        hi = t1 if t1 < horizon else horizon
        if hi <= lo:
            return
        if level >= len(cont_hist):
            cont_hist.extend([0.0] * (level + 1 - len(cont_hist)))
        cont_hist[level] += hi - lo
        b0 = min(int((lo - warmup) / batch_len), nb - 1)
        b1 = min(int((hi - warmup) / batch_len), nb - 1)
        if b0 == b1:
            q_time[b0] += level * (hi - lo)
            if level == 0:
                empty_time[b0] += hi - lo
            return
        edges = [lo] + [warmup + batch_len * b for b in range(b0 + 1, b1 + 1)] + [hi]
        for b, (e0, e1) in enumerate(zip(edges[:-1], edges[1:]), start=b0):
            q_time[b] += level * (e1 - e0)
            if level == 0:
                empty_time[b] += e1 - e0

    def batch_of(t: float) -> int:
        return min(int((t - warmup) / batch_len), nb - 1)

    while clock < horizon:
        if n == 0:
            if lam0 <= 0.0:
                advance(clock, horizon, 0)
                clock = horizon
                break
            t1 = clock - log1p(-u()) / lam0
            if t1 >= horizon:
                advance(clock, horizon, 0)
                clock = horizon
                break
            advance(clock, t1, 0)
            clock = t1
            n = 1
            arrivals += 1
            if clock >= warmup:
                arrivals_b[batch_of(clock)] += 1
            fifo.append(clock)
            sigma = sample_sigma(u())
            r = sigma
            if n > max_queue:
                max_queue = n
            if trace is not None:
                trace.append((clock, "arrival", n))
            continue
        off = next_offset(r, sigma)
        if off is not None:
            t1 = clock + off
            if t1 >= horizon:
                advance(clock, horizon, n)
                clock = horizon
                break
            advance(clock, t1, n)
            clock = t1
            r -= off
            n += 1
            arrivals += 1
            if clock >= warmup:
                arrivals_b[batch_of(clock)] += 1
            fifo.append(clock)
            if n > max_queue:
                max_queue = n
            if trace is not None:
                trace.append((clock, "arrival", n))
        else:
            t1 = clock + r
            if t1 >= horizon:
                advance(clock, horizon, n)
                clock = horizon
                break
            advance(clock, t1, n)
            clock = t1
            n -= 1
            completions += 1
            arr_time = fifo.popleft()
            if clock >= warmup:
                b = batch_of(clock)
                completions_b[b] += 1
                sojourn_b[b] += clock - arr_time
                waiting_b[b] += clock - arr_time - sigma
                if n == 0:
                    empty_comp_b[b] += 1
                if n >= len(comp_hist):
                    comp_hist.extend([0] * (n + 1 - len(comp_hist)))
                comp_hist[n] += 1
            if trace is not None:
                trace.append((clock, "completion", n))
            if n > 0:
                sigma = sample_sigma(u())
                r = sigma

    q_arr = np.asarray(q_time) / batch_len
    e_arr = np.asarray(empty_time) / batch_len
    rate_arr = np.asarray(arrivals_b, dtype=float) / batch_len
    comp_counts = np.asarray(completions_b, dtype=float)
    with np.errstate(invalid="ignore", divide="ignore"):
        soj_arr = np.where(comp_counts > 0, np.asarray(sojourn_b) / comp_counts,
                           np.nan)
        wait_arr = np.where(comp_counts > 0, np.asarray(waiting_b) / comp_counts,
                            np.nan)
        ecf_arr = np.where(comp_counts > 0,
                           np.asarray(empty_comp_b, dtype=float) / comp_counts,
                           np.nan)
    metrics = {
        "time_avg_queue": _batch_estimate(q_arr),
        "empty_fraction": _batch_estimate(e_arr),
        "effective_rate": _batch_estimate(rate_arr),
        "mean_sojourn": _batch_estimate(soj_arr),
        "mean_waiting": _batch_estimate(wait_arr),
        "completion_empty_frequency": _batch_estimate(ecf_arr),
    }
    return SimulationReport(
        horizon=horizon, warmup=warmup, seed=seed, mode=mode.value,
        n_batches=nb, arrivals=arrivals, completions=completions, final_n=n,
        max_queue=max_queue, effective_rate=arrivals / horizon,
        metrics=metrics,
        completion_histogram=np.asarray(comp_hist, dtype=np.int64),
        continuous_histogram=np.asarray(cont_hist),
        final_state=SimState(n=n, r=(r if n > 0 else None), clock=clock),
        trace=trace)


def _batch_estimate(values: np.ndarray) -> MetricEstimate:
    good = values[np.isfinite(values)]
    if len(good) == 0:
        return MetricEstimate(value=math.nan, se=math.nan)
    if len(good) == 1:
        return MetricEstimate(value=float(good[0]), se=math.nan)
    return MetricEstimate(value=float(good.mean()),
                          se=float(good.std(ddof=1) / math.sqrt(len(good))))


def derive_seeds(base_seed: int, n: int) -> list[int]:
    """Independent replication seeds from a splittable seed sequence."""
    children = np.random.SeedSequence(base_seed).spawn(n)
    out = []
    for child in children:
        a, b = child.generate_state(2, dtype=np.uint64)
        out.append((int(a) << 64) | int(b))
    return out


def _run_worker(args) -> SimulationReport:
    model, horizon, seed, mode, warmup, n_batches = args
    return run(model, horizon, seed, mode=mode, warmup=warmup,
               n_batches=n_batches)


def replicate(model: QueueModel, horizon: float, n_reps: int, base_seed: int,
              mode: RateMode = RateMode.REMAINING,
              warmup: float | None = None,
              n_batches: int = DEFAULT_BATCHES,
              seeds: list[int] | None = None,
              workers: int | None = None) -> SimulationReport:
    """Independent replications with decorrelated seeds, aggregated.

    Metric values are means of per-replication means with between-
    replication standard errors; histograms are summed. Passing ``seeds``
    overrides derivation (test hook). ``workers`` > 1 runs replications in
    separate processes; results are identical either way.
    """
    if n_reps < 2:
        raise ModelError("replicate needs n_reps >= 2")
    if seeds is None:
        seeds = derive_seeds(base_seed, n_reps)
    elif len(seeds) != n_reps:
        raise ModelError("seeds must have one entry per replication")
    mode = RateMode(mode)
    jobs = [(model, horizon, s, mode, warmup, n_batches) for s in seeds]
    if workers is not None and workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            reports = list(pool.map(_run_worker, jobs))
    else:
        reports = [_run_worker(j) for j in jobs]

    metrics = {}
    for name in reports[0].metrics:
        vals = np.asarray([rep.metrics[name].value for rep in reports])
        metrics[name] = _batch_estimate(vals)
    comp_len = max(len(rep.completion_histogram) for rep in reports)
    comp = np.zeros(comp_len, dtype=np.int64)
    for rep in reports:
        comp[:len(rep.completion_histogram)] += rep.completion_histogram
    cont_len = max(len(rep.continuous_histogram) for rep in reports)
    cont = np.zeros(cont_len)
    for rep in reports:
        cont[:len(rep.continuous_histogram)] += rep.continuous_histogram
    return SimulationReport(
        horizon=horizon, warmup=reports[0].warmup, seed=base_seed,
        mode=mode.value, n_batches=n_batches,
        arrivals=sum(rep.arrivals for rep in reports),
        completions=sum(rep.completions for rep in reports),
        final_n=sum(rep.final_n for rep in reports),
        max_queue=max(rep.max_queue for rep in reports),
        effective_rate=sum(rep.arrivals for rep in reports) / (horizon * n_reps),
        metrics=metrics,
        completion_histogram=comp,
        continuous_histogram=cont,
        replication_count=n_reps,
        per_replication=reports)
