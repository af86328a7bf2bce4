"""Queue length at service completion epochs.

Observed just after completions, the queue length is a Markov chain whose
increment distribution is a Poisson mixture over the cumulative rate
multiplier of a service time. This module computes that increment pmf, the
stationary law of the chain, and the completion-epoch metrics derived from
it (mean queue length, transform of the stationary law).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy import stats
from scipy.special import gammaln

from . import numerics
from .errors import ModelError, NumericsError, UnstableQueueError
from .model import QueueModel


@dataclass(frozen=True)
class IncrementPmf:
    """Distribution of arrivals during one service, truncated at level J.

    ``p[j]`` is the probability of j arrivals while one customer is served;
    ``tail_mass`` bounds the probability left above J.
    """

    p: np.ndarray
    tail_mass: float

    @property
    def truncation(self) -> int:
        return len(self.p) - 1

    def tail_geq(self) -> np.ndarray:
        """Complementary sums: entry j is P(increment > j)."""
        rev = np.cumsum(self.p[::-1])[::-1]
        return np.concatenate((rev[1:], [0.0])) + self.tail_mass

    def mean(self) -> float:
        return float(np.arange(len(self.p)) @ self.p)


@dataclass(frozen=True)
class EmbeddedSolution:
    """Stationary queue length at completion epochs."""

    q: np.ndarray
    rho: float
    mean_completions: float

    @property
    def truncation(self) -> int:
        return len(self.q) - 1

    def total_mass(self) -> float:
        return float(math.fsum(self.q))


def _poisson_mixture(model: QueueModel, j_max: int, n_segments: int = 256):
    """p[j] = E[Poisson(j; lambda0 * F(sigma))] for j = 0..j_max.

    Evaluated by composite Gauss-Legendre on segments aligned with the model
    kinks, which makes the integrand smooth per segment.
    """
    grid = numerics.Grid.build(model.cutoff, breakpoints=model.kinks(),
                               n=n_segments)
    nodes, weights = numerics._segment_gauss(grid.points)
    x = nodes.ravel()
    w = weights.ravel() * model.service.pdf(x)
    lam = model.lambda0 * np.asarray(model.reshape.integral(x))
    j = np.arange(j_max + 1)[:, None]
    with np.errstate(divide="ignore"):
        loglam = np.where(lam > 0, np.log(np.where(lam > 0, lam, 1.0)), -np.inf)
    logpmf = j * loglam[None, :] - lam[None, :] - gammaln(j + 1.0)
    pmf = np.where((j == 0) & (lam[None, :] == 0.0), 1.0,
                   np.exp(np.maximum(logpmf, -745.0)))
    pmf[(j > 0) & (lam[None, :] == 0.0)] = 0.0
    return pmf @ w


def increment_pmf(model: QueueModel, eps_tail: float = 1e-10) -> IncrementPmf:
    """Arrival-count distribution over one service time.

    The truncation level is the smallest J whose Poisson tail at the largest
    reachable mixture rate stays below ``eps_tail`` (a uniform bound over the
    whole mixing distribution).
    """
    if not 0.0 < eps_tail <= 1e-3:
        raise ModelError("eps_tail must lie in (0, 1e-3]")
    lam_max = model.lambda0 * float(model.reshape.integral(model.cutoff))
    if lam_max <= 0.0:
        return IncrementPmf(p=np.array([1.0]), tail_mass=0.0)
    j_max = int(stats.poisson.isf(eps_tail, lam_max)) + 1
    while stats.poisson.sf(j_max, lam_max) >= eps_tail:
        j_max += 1
    p = _poisson_mixture(model, j_max)
    p = np.clip(p, 0.0, None)
    tail = max(1.0 - float(math.fsum(p)), 0.0)
    return IncrementPmf(p=p, tail_mass=tail)


def stationary_q(pmf: IncrementPmf, model: QueueModel,
                 eps_tail: float = 1e-10, max_levels: int = 200_000
                 ) -> EmbeddedSolution:
    """Stationary completion-epoch distribution of a stable queue.

    Built by the forward recursion on complementary increment sums with
    q(0) = 1 - rho; extended until the remaining mass, extrapolated
    geometrically from the running tail ratio, drops below ``eps_tail``.
    Raises :class:`UnstableQueueError` when utilization >= 1.
    """
    rho = model.utilization()
    if rho >= 1.0:
        raise UnstableQueueError(rho)
    pbar = pmf.tail_geq()
    denom = 1.0 - pbar[0]
    if denom <= 0.0:
        raise NumericsError("increment distribution has no mass at 0")
    q = [1.0 - rho]
    target = float(np.clip(eps_tail, 0.0, 1.0))
    for j in range(1, max_levels):
        terms = [q[0] * pbar[j - 1]] if j - 1 <= pmf.truncation else []
        terms += [q[i] * pbar[j - i]
                  for i in range(max(1, j - pmf.truncation), j)]
        qj = math.fsum(terms) / denom
        q.append(qj)
        if j >= 2 and qj > 0.0:
            ratio = qj / q[-2] if q[-2] > 0 else 0.0
            if ratio < 1.0 and qj < target * (1.0 - ratio):
                break
        elif qj == 0.0:
            break
    else:
        raise NumericsError("stationary distribution did not truncate",
                            estimate=float(math.fsum(q)))
    qa = np.asarray(q)
    mean = _series_mean(qa)
    return EmbeddedSolution(q=qa, rho=rho, mean_completions=mean)


def _series_mean(q: np.ndarray) -> float:
    """Mean of the truncated series plus a geometric tail correction."""
    k = np.arange(len(q))
    base = float(k @ q)
    if len(q) >= 3 and q[-2] > 0:
        r = min(q[-1] / q[-2], 0.999999)
        tail0 = q[-1] * r / (1.0 - r)
        base += tail0 * (len(q) - 1) + q[-1] * r / (1.0 - r) ** 2
    return base


def solve(model: QueueModel, eps_tail: float = 1e-10) -> EmbeddedSolution:
    """Convenience wrapper: increment pmf + stationary distribution."""
    return stationary_q(increment_pmf(model, eps_tail), model, eps_tail)


@lru_cache(maxsize=None)
def _cached_solution(model: QueueModel) -> EmbeddedSolution:
    return solve(model)


def mean_at_completions(model: QueueModel) -> float:
    """Stationary mean queue length at completion epochs (closed form).

    rho + lambda0^2 E[F(sigma)^2] / (2 (1 - rho)); the independent series
    route is the ``mean_completions`` field of the solved distribution.
    """
    rho = model.utilization()
    if rho >= 1.0:
        raise UnstableQueueError(rho)
    if model.lambda0 == 0.0:
        return 0.0
    extra = model.lambda0 ** 2 * model.reshaped_second_moment() / (2.0 * (1.0 - rho))
    return rho + extra


def stationary_mgf(model: QueueModel, s: float) -> float:
    """Transform E[e^{s N}] of the stationary completion-epoch law.

    Computed through the probability generating function evaluated at
    z = e^s; the full distribution including the empty state is summed, so
    the transform equals 1 at s = 0. Raises ``ModelError`` when the defining
    integral diverges or the denominator vanishes.
    """
    rho = model.utilization()
    if rho >= 1.0:
        raise UnstableQueueError(rho)
    if s == 0.0:
        return 1.0
    z = math.exp(s)
    lam = model.lambda0
    if lam == 0.0:
        return 1.0
    rf, sv = model.reshape, model.service

    def integrand(r):
        expo = np.minimum(-lam * (1.0 - z) * np.asarray(rf.integral(r)), 700.0)
        return np.exp(expo) * sv.pdf(r)

    psi = numerics.fixed_quadrature(integrand, model.cutoff,
                                    breakpoints=model.kinks(), n=1024)
    # the domain is truncated where the service tail is ~1e-13; a transform
    # whose integrand still carries mass there diverges on the full line
    edge = float(integrand(np.asarray(model.cutoff))) * model.cutoff
    if not math.isfinite(psi) or edge > 1e-8 * max(abs(psi), 1.0):
        raise ModelError(f"transform integral diverges at s={s}")
    denom = psi - z
    if abs(denom) < 1e-12 * max(1.0, abs(z)):
        raise ModelError(f"transform denominator vanishes at s={s}")
    return (1.0 - rho) * (1.0 - z) * psi / denom


def mgf_series(sol: EmbeddedSolution, s: float) -> float:
    """Direct series sum of e^{s k} against the solved distribution."""
    k = np.arange(len(sol.q))
    return float(np.exp(s * k) @ sol.q)


def transition_residual(sol: EmbeddedSolution, pmf: IncrementPmf) -> float:
    """Max-norm residual of the stationary fixed point q = qM.

    The transition matrix is banded (row 0 equals row 1, later rows shift
    the increment pmf), so the product is evaluated without materializing M.
    """
    q = sol.q
    p = pmf.p
    J = pmf.truncation
    n = len(q)
    worst = 0.0
    for j in range(n - 1):
        terms = []
        if j <= J:
            terms.append(q[0] * p[j])
        for i in range(max(1, j + 1 - J), min(j + 1, n - 1) + 1):
            terms.append(q[i] * p[j + 1 - i])
        worst = max(worst, abs(math.fsum(terms) - q[j]))
    return worst
