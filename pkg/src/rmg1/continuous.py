"""Continuous-time stationary measure and performance metrics.

The stationary measure of the queue-length / remaining-service-time process
consists of an atom at the empty state and one density per occupied level.
The densities satisfy a chain of linear first-order ODEs whose explicit
solutions are nested exponential-weighted tail integrals; this module
evaluates that recursion on a shared grid and derives the continuous-time
metrics (empty-system probability, mean queue length, effective arrival
rate, waiting and sojourn times, marginal distribution, and the f > 0 time
change onto a plain M/G/1 system).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import numerics
from .embedded import EmbeddedSolution, increment_pmf, mean_at_completions, solve
from .errors import ModelError, NotInvertibleError, NumericsError, UnstableQueueError
from .model import QueueModel, ServiceDistribution

#: level densities are cut once their boundary value falls below this
#: fraction of lambda0; deeper levels lose relative accuracy to cancellation
#: in the boundary recursion without contributing at the solver tolerances
DEFAULT_LEVEL_EPS = 1e-6

#: grid refinement target for the level-sum identity (relative to lambda0)
DEFAULT_S_TARGET = 1e-6

#: exponent threshold beyond which density reconstruction goes through logs
_LOG_SPACE_THRESHOLD = 30.0


@dataclass(frozen=True)
class ContinuousSolution:
    """Solved stationary measure on a grid.

    ``m[k-1]`` holds the level-k density sampled on ``grid.points``;
    ``m0[k-1]`` its boundary value; ``boundary_extra`` is the first boundary
    value past the retained levels (the recursion always produces it).
    ``mu_atom`` is the stationary mass of the empty state and ``mu_total``
    the total mass of the unnormalized measure.
    """

    grid: numerics.Grid
    m: np.ndarray
    m0: np.ndarray
    boundary_extra: float
    mu_atom: float
    mu_total: float
    level_masses: np.ndarray
    lambda0: float
    rho: float
    embedded: EmbeddedSolution
    s_residual: float

    @property
    def levels(self) -> int:
        return len(self.m0)

    # -- tail extrapolation helpers ----------------------------------------

    def _tail_ratio(self) -> float:
        if self.levels < 2 or self.m0[-2] <= 0:
            return 0.0
        return float(min(self.m0[-1] / self.m0[-2], 0.999))

    def tail_boundary(self) -> float:
        """Boundary mass of the truncated levels."""
        return max(self.lambda0 - float(math.fsum(self.m0)), 0.0)

    def _tail_mass(self) -> float:
        if self.levels == 0 or self.m0[-1] <= 0:
            return 0.0
        return self.tail_boundary() * float(self.level_masses[-1]) / float(self.m0[-1])

    # -- metrics from the solved densities ----------------------------------

    def empty_probability(self) -> float:
        """Stationary probability of an empty system, atom over total."""
        return self.mu_atom / self.mu_total

    def marginal_distribution(self) -> np.ndarray:
        """P(queue length = k) for k = 0..levels under the normalized measure."""
        return np.concatenate(([self.mu_atom], self.level_masses)) / self.mu_total

    def mean_queue_length(self) -> float:
        """Mean queue length by integrating k-weighted level densities."""
        k = np.arange(1, self.levels + 1, dtype=float)
        total = float(k @ self.level_masses)
        r = self._tail_ratio()
        if r > 0.0 and self.levels >= 1:
            mk = float(self.level_masses[-1])
            total += mk * (self.levels * r / (1.0 - r) + r / (1.0 - r) ** 2)
        return total / self.mu_total

    def level_sum(self) -> np.ndarray:
        """Sum of level densities on the grid, tail-corrected."""
        s = self.m.sum(axis=0)
        if self.levels and self.m0[-1] > 0:
            s = s + self.tail_boundary() * self.m[-1] / self.m0[-1]
        return s


# ---------------------------------------------------------------------------
# solver


def _density_from_scaled(w: np.ndarray, lam_F: np.ndarray) -> np.ndarray:
    """Recover a level density from its exponentially scaled samples."""
    w = np.maximum(w, 0.0)
    if lam_F[-1] <= _LOG_SPACE_THRESHOLD:
        m = w * np.exp(lam_F)
    else:
        with np.errstate(divide="ignore"):
            logw = np.where(w > 0, np.log(np.where(w > 0, w, 1.0)), -np.inf)
        m = np.exp(np.minimum(logw + lam_F, 700.0))
    return np.where(m > 0, np.maximum(m, numerics.TINY_POSITIVE),
                    numerics.TINY_POSITIVE)


def _solve_on_grid(model: QueueModel, grid: numerics.Grid,
                   embedded: EmbeddedSolution, eps_tail: float):
    """One pass of the level recursion on a fixed grid.

    Returns (m, m0, boundary_extra, masses) or raises NumericsError when the
    boundary subtraction turns materially negative (grid too coarse).
    """
    lam = model.lambda0
    x = grid.points
    kinks = grid.kink_indices
    lam_F = lam * np.asarray(model.reshape.integral(x))
    f_vals = np.asarray(model.reshape(x))
    scaled_g = lambda r: model.service.pdf(r) * np.exp(-lam * np.asarray(
        model.reshape.integral(r)))
    cum_gE = numerics.cumulative_on_grid(scaled_g, grid)
    total_gE = cum_gE[-1]
    tg = total_gE - cum_gE
    p0 = float(total_gE)
    if p0 <= 0.0:
        raise NumericsError("zero-increment probability vanished")

    neg_budget = -1e-10 * lam
    m0_list = [lam * (1.0 - embedded.rho)]
    levels = [(m0_list[0] / p0) * tg]
    cap = embedded.truncation + 2
    next_boundary = m0_list[0] * (1.0 - p0) / p0
    while next_boundary >= eps_tail * lam and len(levels) < cap:
        y = levels[-1] * f_vals
        cum_y = numerics.cumulative_from_samples(x, y, kinks)
        total_y = cum_y[-1]
        after_boundary = (next_boundary - lam * total_y) / p0
        if after_boundary < neg_budget:
            raise NumericsError(
                "boundary recursion went negative; grid too coarse",
                estimate=after_boundary)
        after_boundary = max(after_boundary, 0.0)
        levels.append(after_boundary * tg + lam * (total_y - cum_y))
        m0_list.append(next_boundary)
        next_boundary = after_boundary
    boundary_extra = max(next_boundary, 0.0)

    m = np.vstack([_density_from_scaled(wk, lam_F) for wk in levels])
    m0 = np.asarray(m0_list)
    masses = np.asarray([
        numerics.cumulative_from_samples(x, row, kinks)[-1] for row in m])
    return m, m0, max(boundary_extra, 0.0), masses


def solve_densities(model: QueueModel, grid: numerics.Grid | None = None,
                    eps_tail: float = DEFAULT_LEVEL_EPS,
                    embedded_solution: EmbeddedSolution | None = None,
                    n_grid: int = 2048,
                    s_target: float = DEFAULT_S_TARGET,
                    max_refinements: int = 4) -> ContinuousSolution:
    """Solve the stationary density recursion of a stable queue.

    The empty-state atom is 1 - rho; level densities follow from the
    explicit tail-integral solutions of the balance ODEs, each level feeding
    the next boundary value. The grid is refined (doubled) until the sum of
    level densities matches lambda0 times the service tail to ``s_target``
    relative to lambda0. Raises :class:`UnstableQueueError` when rho >= 1
    and :class:`NumericsError` when refinement cannot reach the target.
    """
    rho = model.utilization()
    if rho >= 1.0:
        raise UnstableQueueError(rho)
    emb = embedded_solution if embedded_solution is not None else solve(model)
    lam = model.lambda0
    if lam == 0.0:
        g = grid or numerics.Grid.build(model.cutoff, model.kinks(), n=16)
        return ContinuousSolution(
            grid=g, m=np.zeros((0, len(g))), m0=np.zeros(0), boundary_extra=0.0,
            mu_atom=1.0, mu_total=1.0, level_masses=np.zeros(0),
            lambda0=0.0, rho=0.0, embedded=emb, s_residual=0.0)

    g = grid or numerics.Grid.build(model.cutoff, model.kinks(), n=n_grid)
    last_exc: NumericsError | None = None
    for _ in range(max_refinements + 1):
        try:
            m, m0, extra, masses = _solve_on_grid(model, g, emb, eps_tail)
        except NumericsError as e:
            last_exc = e
            g = g.refined()
            continue
        tail_b = max(lam - float(math.fsum(m0)), 0.0)
        s = m.sum(axis=0)
        if len(m0) and m0[-1] > 0:
            s = s + tail_b * m[-1] / m0[-1]
        target = lam * np.asarray(model.service.tail(g.points))
        resid = float(np.max(np.abs(s - target))) / lam
        if resid <= s_target:
            tail_mass = (tail_b * float(masses[-1]) / float(m0[-1])
                         if len(m0) and m0[-1] > 0 else 0.0)
            mu_total = (1.0 - rho) + float(math.fsum(masses)) + tail_mass
            return ContinuousSolution(
                grid=g, m=m, m0=m0, boundary_extra=extra,
                mu_atom=1.0 - rho, mu_total=mu_total, level_masses=masses,
                lambda0=lam, rho=rho, embedded=emb, s_residual=resid)
        last_exc = NumericsError(
            "level-sum identity residual above target", estimate=resid,
            error_estimate=s_target)
        g = g.refined()
    raise last_exc


# ---------------------------------------------------------------------------
# residual checks (independent routes used by the test suite and compare)


def boundary_vs_embedded(sol: ContinuousSolution) -> float:
    """Max |m0(k) - lambda0 q(k-1)|: boundary law against the embedded chain."""
    n = min(sol.levels, len(sol.embedded.q))
    return float(np.max(np.abs(sol.m0[:n] - sol.lambda0 * sol.embedded.q[:n])))


def consistency_residual(sol: ContinuousSolution, model: QueueModel) -> float:
    """Worst relative error of the boundary-value integral identity.

    Every retained level must satisfy: next boundary value equals lambda0
    times the integral of the level density against the rate multiplier.
    """
    x = sol.grid.points
    f_vals = np.asarray(model.reshape(x))
    kinks = sol.grid.kink_indices
    boundaries = np.concatenate((sol.m0[1:], [sol.boundary_extra]))
    worst = 0.0
    for row, expected in zip(sol.m, boundaries):
        got = sol.lambda0 * numerics.cumulative_from_samples(
            x, row * f_vals, kinks)[-1]
        if expected > 0:
            worst = max(worst, abs(got - expected) / expected)
    return worst


def balance_residual(sol: ContinuousSolution, model: QueueModel) -> float:
    """Max absolute residual of the discretized stationarity equations.

    Central differences on interior nodes, skipping nodes adjacent to kinks
    of the model functions where the density derivative jumps.
    """
    x = sol.grid.points
    lam = sol.lambda0
    f_vals = np.asarray(model.reshape(x))
    g_vals = np.asarray(model.service.pdf(x))
    hl = x[1:-1] - x[:-2]
    hr = x[2:] - x[1:-1]
    keep = np.ones(len(x) - 2, dtype=bool)
    for k in sol.grid.kink_indices:
        lo = max(k - 2, 0)
        keep[lo:k + 1] = False
    keep[:2] = False
    keep[-2:] = False

    def ddr(row):
        return (hl / (hr * (hl + hr)) * row[2:]
                + (hr - hl) / (hr * hl) * row[1:-1]
                - hr / (hl * (hl + hr)) * row[:-2])

    boundaries = np.concatenate((sol.m0[1:], [sol.boundary_extra]))
    worst = 0.0
    prev = None
    for idx, row in enumerate(sol.m):
        dm = ddr(row)
        inter = slice(1, -1)
        if idx == 0:
            inflow = (lam * sol.mu_atom + boundaries[0]) * g_vals[inter]
            resid = dm + inflow - lam * f_vals[inter] * row[inter]
        else:
            resid = (dm + lam * f_vals[inter] * (prev[inter] - row[inter])
                     + boundaries[idx] * g_vals[inter])
        worst = max(worst, float(np.max(np.abs(resid[keep]))))
        prev = row
    return worst


# ---------------------------------------------------------------------------
# closed-form metrics (embedded quantities only; no density solve needed)


def _require_stable(model: QueueModel) -> float:
    rho = model.utilization()
    if rho >= 1.0:
        raise UnstableQueueError(rho)
    return rho


def total_mass(model: QueueModel) -> float:
    """Mass of the unnormalized stationary measure: 1 - rho + lambda0 nu."""
    rho = _require_stable(model)
    return 1.0 - rho + model.lambda0 * model.mean_service()


def empty_probability(model: QueueModel) -> float:
    """Stationary probability of an empty system in continuous time."""
    rho = _require_stable(model)
    return (1.0 - rho) / total_mass(model)


def arrival_rate(model: QueueModel) -> float:
    """Long-run arrival rate lambda0 / (1 - rho + lambda0 nu)."""
    _require_stable(model)
    return model.lambda0 / total_mass(model)


def mean_queue_length(model: QueueModel) -> float:
    """Stationary mean queue length in continuous time."""
    rho = _require_stable(model)
    lam = model.lambda0
    eq_n = mean_at_completions(model)
    return (lam * model.waiting_first_term()
            + ((1.0 - rho) + eq_n) * lam * model.mean_service()) / total_mass(model)


def waiting_time(model: QueueModel) -> float:
    """Stationary mean waiting time of an arriving customer."""
    rho = _require_stable(model)
    eq_n = mean_at_completions(model)
    return model.waiting_first_term() + (eq_n - rho) * model.mean_service()


def sojourn_time(model: QueueModel) -> float:
    """Stationary mean time in system: waiting plus one service."""
    return waiting_time(model) + model.mean_service()


# ---------------------------------------------------------------------------
# time change onto a constant-rate system (requires f > 0)


def _require_invertible(model: QueueModel):
    if not model.reshape.positive_on(model.cutoff):
        raise NotInvertibleError(
            "rate multiplier vanishes on an interval of the service support; "
            "the cumulative multiplier is not invertible there")


def time_change_density(model: QueueModel, s) -> float | np.ndarray:
    """Service density of the time-changed constant-rate system.

    Under s = F(r) the model maps onto a plain M/G/1 queue whose service
    density is g(H(s)) / f(H(s)) with H the inverse cumulative multiplier.
    """
    _require_invertible(model)
    rf, sv = model.reshape, model.service

    def one(si: float) -> float:
        r = rf.integral_inverse(float(si))
        fr = float(rf(r))
        gr = float(sv.pdf(r))
        if fr <= 0.0:
            return math.inf if gr > 0.0 else 0.0
        return gr / fr

    arr = np.asarray(s, dtype=float)
    if arr.ndim == 0:
        return one(float(arr))
    return np.asarray([one(v) for v in arr])


def time_changed_service(model: QueueModel, n: int = 8193) -> ServiceDistribution:
    """Tabulated service distribution of the time-changed system.

    Samples the transformed density on a uniform grid (plus images of the
    model kinks) over [0, F(cutoff)] and renormalizes the piecewise-linear
    table exactly. Raises :class:`NotInvertibleError` when the transformed
    density is unbounded on the sampled range.
    """
    _require_invertible(model)
    rf = model.reshape
    s_end = float(rf.integral(model.cutoff))
    pts = np.linspace(0.0, s_end, n)
    images = [float(rf.integral(b)) for b in model.kinks()]
    pts = np.unique(np.concatenate((pts, [v for v in images if 0 < v < s_end])))
    vals = np.asarray(time_change_density(model, pts))
    if not np.all(np.isfinite(vals)):
        raise NotInvertibleError(
            "time-changed density is unbounded; cannot tabulate")
    total = float(np.sum(0.5 * (vals[1:] + vals[:-1]) * np.diff(pts)))
    if not 0.5 < total < 2.0:
        raise NumericsError("time-changed density normalization is off",
                            estimate=total)
    return ServiceDistribution.table(pts, vals / total)


def time_changed_model(model: QueueModel, n: int = 8193) -> QueueModel:
    """Constant-rate model equivalent at completion epochs and, level by
    level, in continuous time."""
    from .model import ReshapeFunction
    return QueueModel(lambda0=model.lambda0,
                      reshape=ReshapeFunction.constant(1.0),
                      service=time_changed_service(model, n=n))


# ---------------------------------------------------------------------------
# window + exponential closed forms


def window_exp_waiting_variants(model: QueueModel) -> dict:
    """Two closed-form candidates for the mean waiting time of the
    exponential-service, window-reshape family.

    The two variants differ in the power of the base rate inside the
    bracketed term; they coincide only as lambda0 -> 1. ``omega_general``
    agrees with :func:`waiting_time`; ``omega_alternative`` is the
    squared-rate variant. The compare harness reports both and lets the
    simulation arbitrate. Only the unit-mean service case is supported.
    """
    if model.service.family != "exponential" or model.reshape.family != "window":
        raise ModelError("variants require exponential service and window reshape")
    nu = model.service.mean_param
    rho = _require_stable(model)
    lam = model.lambda0
    h = model.reshape.value
    t = model.reshape.cutoff / nu
    base = 1.0 - math.exp(-t) * (1.0 + t)
    pref = lam * h * nu * nu * base
    return {
        "omega_general": pref * (1.0 + lam * h * nu / (1.0 - rho)),
        "omega_alternative": pref * (1.0 + lam * lam * h * nu / (1.0 - rho)),
    }
