"""Quadrature, root finding and grid utilities shared by the solver modules.

Adaptive one-off integrals are delegated to QUADPACK (scipy.integrate.quad);
the grid-based cumulative integrators used inside the density recursion are
implemented here because they must return the whole running integral at once
and must stay accurate across thousands of evaluations.
"""

from __future__ import annotations

import warnings
from bisect import bisect_left
from dataclasses import dataclass

import numpy as np
from numpy.polynomial.legendre import leggauss
from scipy import integrate as _sci_integrate
from scipy.interpolate import CubicSpline

from .errors import NumericsError

DEFAULT_ABS_TOL = 1e-10
DEFAULT_REL_TOL = 1e-8
DEFAULT_MAX_SUBDIVISIONS = 2000

#: per-segment Gauss-Legendre order for grid cumulatives (exact to degree 15)
_GAUSS_ORDER = 8
_GL_NODES, _GL_WEIGHTS = leggauss(_GAUSS_ORDER)

#: smallest positive normal double, used to keep flushed values positive
TINY_POSITIVE = np.finfo(float).tiny


@dataclass(frozen=True)
class Quadrature:
    """Tolerance budget for adaptive integration."""

    abs_tol: float = DEFAULT_ABS_TOL
    rel_tol: float = DEFAULT_REL_TOL
    max_subdivisions: int = DEFAULT_MAX_SUBDIVISIONS


DEFAULT_QUADRATURE = Quadrature()


def integrate(fn, a: float, b: float, quad: Quadrature = DEFAULT_QUADRATURE,
              breakpoints=()) -> tuple[float, float]:
    """Adaptive integral of ``fn`` over [a, b] with an error estimate.

    Returns ``(value, error_estimate)``. Known kink locations can be passed
    via ``breakpoints`` so the subdivision starts on them. Raises
    :class:`NumericsError` (with the best estimate attached) when the
    subdivision budget is exhausted before the tolerance is met.
    """
    if not a <= b:
        raise ValueError(f"integration bounds out of order: [{a}, {b}]")
    if a == b:
        return 0.0, 0.0
    pts = sorted(p for p in breakpoints if a < p < b) or None
    with warnings.catch_warnings():
        warnings.simplefilter("error", _sci_integrate.IntegrationWarning)
        try:
            value, err = _sci_integrate.quad(
                fn, a, b, epsabs=quad.abs_tol, epsrel=quad.rel_tol,
                limit=quad.max_subdivisions, points=pts)
        except _sci_integrate.IntegrationWarning as w:
            with warnings.catch_warnings():
                warnings.simplefilter("ignore")
                value, err = _sci_integrate.quad(
                    fn, a, b, epsabs=quad.abs_tol, epsrel=quad.rel_tol,
                    limit=quad.max_subdivisions, points=pts)
            raise NumericsError(f"quadrature did not converge: {w}",
                                estimate=value, error_estimate=err) from None
    return value, err


@dataclass(frozen=True)
class Grid:
    """Sorted evaluation grid on [0, cutoff].

    ``points`` starts at 0 and ends at the truncation radius of the model's
    service tail; ``kink_indices`` mark nodes where the model functions have
    kinks, so sample-based integrators can split there.
    """

    points: np.ndarray
    kink_indices: tuple[int, ...] = ()

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=float)
        if pts.ndim != 1 or len(pts) < 2:
            raise ValueError("grid needs at least two points")
        if pts[0] != 0.0:
            raise ValueError("grid must start at 0")
        if not np.all(np.diff(pts) > 0):
            raise ValueError("grid points must be strictly increasing")
        object.__setattr__(self, "points", pts)

    def __len__(self) -> int:
        return len(self.points)

    @property
    def cutoff(self) -> float:
        return float(self.points[-1])

    @classmethod
    def build(cls, cutoff: float, breakpoints=(), n: int = 2048) -> "Grid":
        """Grid with a geometric head near 0 and a uniform body.

        ``breakpoints`` inside (0, cutoff) are inserted as nodes so that all
        model functions are smooth between consecutive nodes.
        """
        if cutoff <= 0:
            raise ValueError("cutoff must be positive")
        n = max(int(n), 16)
        n_head = n // 8
        head = cutoff * np.logspace(-8, -1, n_head, endpoint=False)
        body = np.linspace(0.0, cutoff, n - n_head)
        pts = np.concatenate(([0.0], head, body,
                              [b for b in breakpoints if 0.0 < b < cutoff]))
        pts = np.unique(pts)
        # drop near-duplicates that would break spline conditioning
        keep = np.concatenate(([True], np.diff(pts) > 1e-13 * cutoff))
        pts = pts[keep]
        kinks = tuple(
            i for i, p in enumerate(pts)
            if any(abs(p - b) <= 1e-13 * cutoff for b in breakpoints))
        return cls(points=pts, kink_indices=kinks)

    def refined(self) -> "Grid":
        """New grid with a midpoint inserted in every interval."""
        pts = self.points
        mids = 0.5 * (pts[:-1] + pts[1:])
        merged = np.unique(np.concatenate((pts, mids)))
        kinkvals = pts[list(self.kink_indices)]
        kinks = tuple(int(np.searchsorted(merged, v)) for v in kinkvals)
        return Grid(points=merged, kink_indices=kinks)


def _segment_gauss(points: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Gauss-Legendre nodes/weights for every interval of ``points``.

    Returns arrays of shape (n_intervals, order).
    """
    lo = points[:-1, None]
    hi = points[1:, None]
    half = 0.5 * (hi - lo)
    nodes = lo + half * (_GL_NODES[None, :] + 1.0)
    weights = half * _GL_WEIGHTS[None, :]
    return nodes, weights


def cumulative_on_grid(fn, grid: Grid) -> np.ndarray:
    """Running integral of ``fn`` from 0 to every grid point.

    ``fn`` may be vectorized over numpy arrays; scalar-only callables are
    handled transparently. Accuracy is that of composite Gauss-Legendre on
    the grid segments, effectively exact for integrands that are smooth
    between consecutive nodes.
    """
    nodes, weights = _segment_gauss(grid.points)
    flat = nodes.ravel()
    try:
        vals = np.asarray(fn(flat), dtype=float)
        if vals.shape != flat.shape:
            raise TypeError
    except (TypeError, ValueError):
        vals = np.array([fn(x) for x in flat], dtype=float)
    seg = (vals.reshape(nodes.shape) * weights).sum(axis=1)
    out = np.empty(len(grid.points))
    out[0] = 0.0
    np.cumsum(seg, out=out[1:])
    return out


def fixed_quadrature(fn, cutoff: float, breakpoints=(), n: int = 512) -> float:
    """Total integral of ``fn`` over [0, cutoff] by composite Gauss-Legendre.

    Segments are aligned with ``breakpoints``, so piecewise-smooth integrands
    are integrated at near machine accuracy. Unlike :func:`integrate` this
    has no adaptive budget; callers verify convergence by comparing two
    resolutions.
    """
    grid = Grid.build(cutoff, breakpoints=breakpoints, n=n)
    return float(cumulative_on_grid(fn, grid)[-1])


def cumulative_from_samples(x: np.ndarray, y: np.ndarray,
                            kink_indices=()) -> np.ndarray:
    """Running integral of sampled data, piecewise-cubic between kinks.

    Each stretch between consecutive kink indices is fitted with a cubic
    spline and integrated exactly; stretches too short for a cubic fall back
    to the trapezoid rule. Used for integrands that are only known at grid
    nodes (the level densities of the continuous-time solver).
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.shape != y.shape:
        raise ValueError("x and y must have the same shape")
    cuts = sorted({0, len(x) - 1, *(i for i in kink_indices if 0 < i < len(x) - 1)})
    out = np.empty_like(x)
    out[0] = 0.0
    for lo, hi in zip(cuts[:-1], cuts[1:]):
        xs, ys = x[lo:hi + 1], y[lo:hi + 1]
        if len(xs) >= 4:
            piece = CubicSpline(xs, ys).antiderivative()(xs)
        else:
            piece = np.concatenate(
                ([0.0], np.cumsum(0.5 * (ys[1:] + ys[:-1]) * np.diff(xs))))
        out[lo:hi + 1] = out[lo] + piece
    return out


def invert_monotone(fn, target: float, lo: float, hi: float,
                    f_tol: float | None = None, max_iter: int = 200) -> float:
    """Solve ``fn(x) = target`` for nondecreasing ``fn`` on [lo, hi].

    Bisection with secant acceleration; stops once
    ``|fn(x) - target| <= f_tol`` (default ``1e-10 * max(1, |target|)``).
    Raises ``ValueError`` when the bracket does not contain the target.
    """
    if f_tol is None:
        f_tol = 1e-10 * max(1.0, abs(target))
    flo = fn(lo) - target
    fhi = fn(hi) - target
    if flo > f_tol or fhi < -f_tol:
        raise ValueError(
            f"target {target!r} not bracketed by fn on [{lo!r}, {hi!r}]")
    if abs(flo) <= f_tol:
        return lo
    if abs(fhi) <= f_tol:
        return hi
    a, fa, b, fb = lo, flo, hi, fhi
    x, fx = a, fa
    for _ in range(max_iter):
        if fb != fa:
            x = b - fb * (b - a) / (fb - fa)
        if not a < x < b:
            x = 0.5 * (a + b)
        fx = fn(x) - target
        if abs(fx) <= f_tol:
            return x
        if fx < 0:
            a, fa = x, fx
        else:
            b, fb = x, fx
        if b - a <= 1e-15 * max(1.0, abs(b)):
            return 0.5 * (a + b)
    raise NumericsError("monotone inversion did not converge",
                        estimate=x, error_estimate=abs(fx))


def searchsorted_segment(breaks, value: float) -> int:
    """Index of the segment of sorted ``breaks`` containing ``value``."""
    i = bisect_left(breaks, value)
    if i > 0 and (i == len(breaks) or breaks[i] > value):
        i -= 1
    return min(i, len(breaks) - 2)
