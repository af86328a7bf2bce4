"""Model types: reshape functions, service distributions, queue models.

A queue model is a base Poisson rate ``lambda0``, a nonnegative rate
multiplier ("reshape function") applied to it while the server is busy, and
a service time density. All types are immutable and hashable; moment
computations are cached per model value.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from . import numerics
from .errors import ModelError, NotInvertibleError

#: service tails are truncated where the survival function drops below 1e-13,
#: comfortably under the 1e-12 budget assumed by the solvers
_TAIL_TARGET = 1e-13
_TAIL_LOG = -math.log(_TAIL_TARGET)


def _as_float_tuple(xs) -> tuple[float, ...]:
    return tuple(float(v) for v in xs)


def _check_r_nonneg(r):
    if np.any(np.asarray(r) < 0):
        raise ModelError("time argument must be nonnegative")


# ---------------------------------------------------------------------------
# reshape functions


@dataclass(frozen=True)
class ReshapeFunction:
    """Nonnegative multiplier applied to the base arrival rate while busy.

    Families:

    * ``constant``: f(r) = value everywhere.
    * ``linear``:   f(r) = slope*r + intercept on [0, cutoff), 0 beyond.
    * ``window``:   f(r) = value on [0, cutoff), 0 beyond.
    * ``table``:    piecewise linear through (breakpoints, values),
                    constant at the last value beyond the last breakpoint.
    """

    family: str
    value: float = 1.0
    slope: float = 0.0
    intercept: float = 0.0
    cutoff: float = math.inf
    breakpoints: tuple[float, ...] = ()
    values: tuple[float, ...] = ()

    def __post_init__(self):
        if self.family not in ("constant", "linear", "window", "table"):
            raise ModelError(f"unknown reshape family {self.family!r}")
        if self.family == "constant":
            if not self.value >= 0:
                raise ModelError("constant reshape level must be >= 0")
        elif self.family == "window":
            if not self.value >= 0:
                raise ModelError("window height must be >= 0")
            if not self.cutoff > 0:
                raise ModelError("window width must be positive")
        elif self.family == "linear":
            if not self.cutoff > 0:
                raise ModelError("linear reshape cutoff must be positive")
            if math.isinf(self.cutoff) and self.slope < 0:
                raise ModelError("decreasing linear reshape needs a finite cutoff")
            end = self.intercept if math.isinf(self.cutoff) \
                else self.slope * self.cutoff + self.intercept
            if self.intercept < 0 or end < -1e-12:
                raise ModelError("linear reshape must stay nonnegative on its support")
        else:
            bp = _as_float_tuple(self.breakpoints)
            vals = _as_float_tuple(self.values)
            if len(bp) != len(vals) or len(bp) < 2:
                raise ModelError("table reshape needs matching breakpoints/values, >= 2")
            if bp[0] != 0.0:
                raise ModelError("table reshape breakpoints must start at 0")
            if any(b >= c for b, c in zip(bp, bp[1:])):
                raise ModelError("table reshape breakpoints must be increasing")
            if any(v < 0 for v in vals):
                raise ModelError("table reshape values must be >= 0")
            object.__setattr__(self, "breakpoints", bp)
            object.__setattr__(self, "values", vals)

    # -- constructors -------------------------------------------------------

    @classmethod
    def constant(cls, value: float = 1.0) -> "ReshapeFunction":
        return cls(family="constant", value=value)

    @classmethod
    def linear(cls, slope: float, intercept: float = 0.0,
               cutoff: float = math.inf) -> "ReshapeFunction":
        return cls(family="linear", slope=slope, intercept=intercept, cutoff=cutoff)

    @classmethod
    def window(cls, width: float, height: float) -> "ReshapeFunction":
        return cls(family="window", value=height, cutoff=width)

    @classmethod
    def table(cls, breakpoints, values) -> "ReshapeFunction":
        return cls(family="table", breakpoints=_as_float_tuple(breakpoints),
                   values=_as_float_tuple(values))

    # -- evaluation ---------------------------------------------------------

    def __call__(self, r):
        """Multiplier value f(r); vectorized."""
        r = np.asarray(r, dtype=float)
        if self.family == "constant":
            out = np.full_like(r, self.value)
        elif self.family == "window":
            out = np.where(r < self.cutoff, self.value, 0.0)
        elif self.family == "linear":
            out = np.where(r < self.cutoff,
                           np.maximum(self.slope * r + self.intercept, 0.0), 0.0)
        else:
            out = np.interp(r, self.breakpoints, self.values)
        return out if out.ndim else float(out)

    def integral(self, r):
        """Cumulative multiplier: integral of f from 0 to r; vectorized."""
        _check_r_nonneg(r)
        r = np.asarray(r, dtype=float)
        if self.family == "constant":
            out = self.value * r
        elif self.family == "window":
            out = self.value * np.minimum(r, self.cutoff)
        elif self.family == "linear":
            rc = np.minimum(r, self.cutoff)
            out = 0.5 * self.slope * rc * rc + self.intercept * rc
        else:
            bp, vals, cum, slopes = _table_integral_arrays(self)
            idx = np.clip(np.searchsorted(bp, r, side="right") - 1, 0, len(bp) - 2)
            dx = r - bp[idx]
            out = cum[idx] + vals[idx] * dx + 0.5 * slopes[idx] * dx * dx
            beyond = r >= bp[-1]
            out = np.where(beyond, cum[-1] + vals[-1] * (r - bp[-1]), out)
        return out if out.ndim else float(out)

    def integral_inverse(self, s: float) -> float:
        """Inverse of :meth:`integral` where it is strictly increasing.

        Raises :class:`NotInvertibleError` when the preimage of ``s`` falls
        where the multiplier vanishes on an interval (the cumulative is flat
        there, so no unique inverse exists).
        """
        if s < 0:
            raise ModelError("inverse argument must be nonnegative")
        if s == 0.0:
            return 0.0
        tol = 1e-12 * max(1.0, s)
        if self.family == "constant":
            if self.value <= 0:
                raise NotInvertibleError("constant multiplier is 0")
            return s / self.value
        if self.family == "window":
            if self.value <= 0:
                raise NotInvertibleError("window height is 0")
            top = self.value * self.cutoff
            if s > top + tol:
                raise NotInvertibleError(
                    f"target {s} beyond the window's cumulative maximum {top}")
            return min(s / self.value, self.cutoff)
        if self.family == "linear":
            top = self.integral(self.cutoff) if math.isfinite(self.cutoff) else math.inf
            if s > top + tol:
                raise NotInvertibleError(
                    f"target {s} beyond the cumulative maximum {top}")
            if self.slope == 0.0:
                if self.intercept <= 0:
                    raise NotInvertibleError("linear multiplier is identically 0")
                return min(s / self.intercept, self.cutoff)
            disc = self.intercept * self.intercept + 2.0 * self.slope * s
            root = (math.sqrt(max(disc, 0.0)) - self.intercept) / self.slope
            return min(root, self.cutoff)
        return _table_integral_inverse(self, s, tol)

    def weighted_integral(self, r):
        """Integral of u*f(u) for u from 0 to r; vectorized."""
        _check_r_nonneg(r)
        r = np.asarray(r, dtype=float)
        if self.family == "constant":
            out = 0.5 * self.value * r * r
        elif self.family == "window":
            rc = np.minimum(r, self.cutoff)
            out = 0.5 * self.value * rc * rc
        elif self.family == "linear":
            rc = np.minimum(r, self.cutoff)
            out = self.slope * rc ** 3 / 3.0 + 0.5 * self.intercept * rc * rc
        else:
            bp, vals, _, slopes = _table_integral_arrays(self)
            wcum = _table_weighted_cum(self)
            idx = np.clip(np.searchsorted(bp, r, side="right") - 1, 0, len(bp) - 2)
            out = wcum[idx] + _poly_moment1(bp[idx], r, slopes[idx],
                                            vals[idx] - slopes[idx] * bp[idx])
            beyond = r >= bp[-1]
            out = np.where(beyond,
                           wcum[-1] + 0.5 * vals[-1] * (r * r - bp[-1] ** 2), out)
        return out if out.ndim else float(out)

    def max_value(self, r_hi: float) -> float:
        """Upper bound of f over [0, r_hi] (exact for all families)."""
        if self.family == "constant":
            return self.value
        if self.family == "window":
            return self.value
        if self.family == "linear":
            end = min(self.cutoff, r_hi)
            return max(self.intercept, self.slope * end + self.intercept, 0.0)
        bp = np.asarray(self.breakpoints)
        vals = np.asarray(self.values)
        inside = vals[bp <= r_hi]
        best = float(inside.max()) if inside.size else 0.0
        return max(best, float(self(min(r_hi, bp[-1]))))

    def kinks(self) -> tuple[float, ...]:
        """Locations where f is not smooth."""
        if self.family in ("linear", "window"):
            return (self.cutoff,) if math.isfinite(self.cutoff) else ()
        if self.family == "table":
            return self.breakpoints[1:]
        return ()

    def constant_beyond(self) -> float:
        """Radius after which f is constant."""
        if self.family == "constant":
            return 0.0
        if self.family == "table":
            return self.breakpoints[-1]
        return self.cutoff if math.isfinite(self.cutoff) else 0.0

    def positive_on(self, hi: float) -> bool:
        """True when f stays positive on (0, hi) up to isolated endpoint zeros.

        This is the condition under which the cumulative multiplier is
        strictly increasing on [0, hi] and therefore invertible.
        """
        if self.family == "constant":
            return self.value > 0
        if self.family == "window":
            return self.value > 0 and self.cutoff >= hi
        if self.family == "linear":
            if self.cutoff < hi:
                return False
            mid = 0.5 * min(self.cutoff, hi)
            return self.intercept >= 0 and float(self(mid)) > 0
        bp = self.breakpoints
        vals = self.values
        if hi > bp[-1] and vals[-1] <= 0:
            return False
        for (b0, v0), (b1, v1) in zip(zip(bp, vals), zip(bp[1:], vals[1:])):
            if b0 >= hi:
                break
            if v0 <= 0 and v1 <= 0:
                return False
        return True

    def scalar(self):
        """Fast scalar evaluator for the event loop (pure-Python floats)."""
        if self.family == "constant":
            v = self.value
            return lambda r: v
        if self.family == "window":
            v, c = self.value, self.cutoff
            return lambda r: v if r < c else 0.0
        if self.family == "linear":
            a, b, c = self.slope, self.intercept, self.cutoff
            return lambda r: max(a * r + b, 0.0) if r < c else 0.0
        bp, vals, _, slopes = _table_integral_arrays(self)
        bp_l, vals_l, slopes_l = bp.tolist(), vals.tolist(), slopes.tolist()
        last_b, last_v = bp_l[-1], vals_l[-1]

        def f(r, _seg=numerics.searchsorted_segment):
            if r >= last_b:
                return last_v
            i = _seg(bp_l, r)
            return vals_l[i] + slopes_l[i] * (r - bp_l[i])

        return f

    def to_spec(self) -> dict:
        if self.family == "constant":
            return {"family": "constant", "value": self.value}
        if self.family == "window":
            return {"family": "window", "t": self.cutoff, "height": self.value}
        if self.family == "linear":
            out = {"family": "linear", "slope": self.slope,
                   "intercept": self.intercept}
            if math.isfinite(self.cutoff):
                out["cutoff"] = self.cutoff
            return out
        return {"family": "table", "breakpoints": list(self.breakpoints),
                "values": list(self.values)}

    @classmethod
    def from_spec(cls, d: dict) -> "ReshapeFunction":
        try:
            family = d["family"]
        except (TypeError, KeyError):
            raise ModelError("reshape spec needs a 'family' key") from None
        try:
            if family == "constant":
                return cls.constant(float(d.get("value", 1.0)))
            if family == "window":
                return cls.window(float(d["t"]), float(d["height"]))
            if family == "linear":
                return cls.linear(float(d["slope"]), float(d.get("intercept", 0.0)),
                                  float(d.get("cutoff", math.inf)))
            if family == "table":
                return cls.table(d["breakpoints"], d["values"])
        except KeyError as e:
            raise ModelError(f"reshape spec missing parameter {e}") from None
        raise ModelError(f"unknown reshape family {family!r}")


def _poly_moment1(p, q, m, c):
    """Integral of u*(m*u + c) for u in [p, q]."""
    return m * (q ** 3 - p ** 3) / 3.0 + 0.5 * c * (q * q - p * p)


@lru_cache(maxsize=None)
def _table_integral_arrays(rf: ReshapeFunction):
    bp = np.asarray(rf.breakpoints)
    vals = np.asarray(rf.values)
    dx = np.diff(bp)
    slopes = np.diff(vals) / dx
    cum = np.concatenate(([0.0], np.cumsum(0.5 * (vals[1:] + vals[:-1]) * dx)))
    slopes = np.concatenate((slopes, [0.0]))
    return bp, vals, cum, slopes


@lru_cache(maxsize=None)
def _table_weighted_cum(rf: ReshapeFunction):
    bp, vals, _, slopes = _table_integral_arrays(rf)
    c = vals[:-1] - slopes[:-1] * bp[:-1]
    seg = _poly_moment1(bp[:-1], bp[1:], slopes[:-1], c)
    return np.concatenate(([0.0], np.cumsum(seg)))


def _table_integral_inverse(rf: ReshapeFunction, s: float, tol: float) -> float:
    bp, vals, cum, slopes = _table_integral_arrays(rf)
    if s > cum[-1] + tol:
        if vals[-1] <= 0:
            raise NotInvertibleError(
                f"target {s} beyond the cumulative maximum {cum[-1]}")
        return float(bp[-1] + (s - cum[-1]) / vals[-1])
    i = int(np.searchsorted(cum, min(s, cum[-1]), side="right") - 1)
    i = min(max(i, 0), len(bp) - 2)
    if vals[i] <= 0 and vals[i + 1] <= 0:
        raise NotInvertibleError(
            "rate multiplier vanishes on an interval containing the preimage")
    rem = s - cum[i]
    v, m = vals[i], slopes[i]
    if abs(m) < 1e-300:
        return float(bp[i] + rem / v)
    disc = v * v + 2.0 * m * rem
    return float(bp[i] + (math.sqrt(max(disc, 0.0)) - v) / m)


# ---------------------------------------------------------------------------
# service distributions


@dataclass(frozen=True)
class ServiceDistribution:
    """Service time distribution with a density.

    Families: ``exponential`` (mean), ``uniform`` (lo, hi) and ``table``
    (piecewise-linear density; renormalized exactly if its integral is
    within 1e-8 of 1, rejected otherwise).
    """

    family: str
    mean_param: float = 1.0
    lo: float = 0.0
    hi: float = 1.0
    breakpoints: tuple[float, ...] = ()
    values: tuple[float, ...] = ()

    def __post_init__(self):
        if self.family == "exponential":
            if not self.mean_param > 0:
                raise ModelError("exponential mean must be positive")
        elif self.family == "uniform":
            if not (0.0 <= self.lo < self.hi):
                raise ModelError("uniform support needs 0 <= lo < hi")
        elif self.family == "table":
            bp = _as_float_tuple(self.breakpoints)
            vals = _as_float_tuple(self.values)
            if len(bp) != len(vals) or len(bp) < 2:
                raise ModelError("table service needs matching breakpoints/values, >= 2")
            if bp[0] < 0 or any(b >= c for b, c in zip(bp, bp[1:])):
                raise ModelError("table service breakpoints must be increasing and >= 0")
            if any(v < 0 for v in vals):
                raise ModelError("table service density must be >= 0")
            total = float(np.sum(0.5 * (np.asarray(vals[1:]) + np.asarray(vals[:-1]))
                                 * np.diff(np.asarray(bp))))
            if abs(total - 1.0) > 1e-8:
                raise ModelError(
                    f"table service density integrates to {total!r}, not 1")
            object.__setattr__(self, "breakpoints", bp)
            object.__setattr__(self, "values", tuple(v / total for v in vals))
        else:
            raise ModelError(f"unknown service family {self.family!r}")

    # -- constructors -------------------------------------------------------

    @classmethod
    def exponential(cls, mean: float) -> "ServiceDistribution":
        return cls(family="exponential", mean_param=mean)

    @classmethod
    def uniform(cls, lo: float, hi: float) -> "ServiceDistribution":
        return cls(family="uniform", lo=lo, hi=hi)

    @classmethod
    def table(cls, breakpoints, values) -> "ServiceDistribution":
        return cls(family="table", breakpoints=_as_float_tuple(breakpoints),
                   values=_as_float_tuple(values))

    # -- evaluation ---------------------------------------------------------

    def pdf(self, r):
        r = np.asarray(r, dtype=float)
        if self.family == "exponential":
            out = np.where(r >= 0, np.exp(-np.minimum(r, 700.0) / self.mean_param)
                           / self.mean_param, 0.0)
        elif self.family == "uniform":
            out = np.where((r >= self.lo) & (r <= self.hi),
                           1.0 / (self.hi - self.lo), 0.0)
        else:
            bp, vals = np.asarray(self.breakpoints), np.asarray(self.values)
            out = np.where((r >= bp[0]) & (r <= bp[-1]),
                           np.interp(r, bp, vals), 0.0)
        return out if out.ndim else float(out)

    def cdf(self, r):
        r = np.asarray(r, dtype=float)
        if self.family == "exponential":
            out = -np.expm1(-np.maximum(r, 0.0) / self.mean_param)
        elif self.family == "uniform":
            out = np.clip((r - self.lo) / (self.hi - self.lo), 0.0, 1.0)
        else:
            bp, vals, cum, slopes = _table_service_arrays(self)
            idx = np.clip(np.searchsorted(bp, r, side="right") - 1, 0, len(bp) - 2)
            dx = np.clip(r - bp[idx], 0.0, None)
            out = np.clip(cum[idx] + vals[idx] * dx + 0.5 * slopes[idx] * dx * dx,
                          0.0, 1.0)
            out = np.where(r >= bp[-1], 1.0, np.where(r < bp[0], 0.0, out))
        return out if out.ndim else float(out)

    def tail(self, r):
        """Survival function P(service > r)."""
        if self.family == "exponential":
            r = np.asarray(r, dtype=float)
            out = np.exp(-np.minimum(np.maximum(r, 0.0), 700.0) / self.mean_param)
            return out if out.ndim else float(out)
        out = 1.0 - np.asarray(self.cdf(r))
        return out if out.ndim else float(out)

    @property
    def mean(self) -> float:
        if self.family == "exponential":
            return self.mean_param
        if self.family == "uniform":
            return 0.5 * (self.lo + self.hi)
        return _table_service_moments(self)[0]

    @property
    def second_moment(self) -> float:
        if self.family == "exponential":
            return 2.0 * self.mean_param ** 2
        if self.family == "uniform":
            return (self.lo ** 2 + self.lo * self.hi + self.hi ** 2) / 3.0
        return _table_service_moments(self)[1]

    @property
    def cutoff(self) -> float:
        """Radius beyond which the tail is below 1e-12 (exactly 0 for
        bounded supports)."""
        if self.family == "exponential":
            return self.mean_param * _TAIL_LOG
        if self.family == "uniform":
            return self.hi
        return self.breakpoints[-1]

    def support_breakpoints(self) -> tuple[float, ...]:
        if self.family == "uniform":
            return (self.lo, self.hi)
        if self.family == "table":
            return self.breakpoints
        return ()

    def sampler(self):
        """Inverse-CDF sampler as a scalar closure mapping u in [0,1)."""
        if self.family == "exponential":
            mean = self.mean_param
            return lambda u: -mean * math.log1p(-u)
        if self.family == "uniform":
            lo, width = self.lo, self.hi - self.lo
            return lambda u: lo + width * u
        bp, vals, cum, slopes = _table_service_arrays(self)
        bp_l, vals_l, cum_l, slopes_l = (bp.tolist(), vals.tolist(),
                                         cum.tolist(), slopes.tolist())

        def sample(u, _seg=numerics.searchsorted_segment):
            i = _seg(cum_l, u)
            while vals_l[i] <= 0.0 and slopes_l[i] == 0.0 and i + 2 < len(bp_l):
                i += 1
            rem = u - cum_l[i]
            v, m = vals_l[i], slopes_l[i]
            if m == 0.0:
                return bp_l[i] + (rem / v if v > 0 else 0.0)
            disc = v * v + 2.0 * m * rem
            return bp_l[i] + (math.sqrt(disc if disc > 0 else 0.0) - v) / m

        return sample

    def to_spec(self) -> dict:
        if self.family == "exponential":
            return {"family": "exponential", "mean": self.mean_param}
        if self.family == "uniform":
            return {"family": "uniform", "a": self.lo, "b": self.hi}
        return {"family": "table", "breakpoints": list(self.breakpoints),
                "values": list(self.values)}

    @classmethod
    def from_spec(cls, d: dict) -> "ServiceDistribution":
        try:
            family = d["family"]
        except (TypeError, KeyError):
            raise ModelError("service spec needs a 'family' key") from None
        try:
            if family == "exponential":
                return cls.exponential(float(d["mean"]))
            if family == "uniform":
                return cls.uniform(float(d["a"]), float(d["b"]))
            if family == "table":
                return cls.table(d["breakpoints"], d["values"])
        except KeyError as e:
            raise ModelError(f"service spec missing parameter {e}") from None
        raise ModelError(f"unknown service family {family!r}")


@lru_cache(maxsize=None)
def _table_service_arrays(sd: ServiceDistribution):
    bp = np.asarray(sd.breakpoints)
    vals = np.asarray(sd.values)
    dx = np.diff(bp)
    slopes = np.concatenate((np.diff(vals) / dx, [0.0]))
    cum = np.concatenate(([0.0], np.cumsum(0.5 * (vals[1:] + vals[:-1]) * dx)))
    return bp, vals, cum, slopes


@lru_cache(maxsize=None)
def _table_service_moments(sd: ServiceDistribution):
    bp, vals, _, slopes = _table_service_arrays(sd)
    p, q = bp[:-1], bp[1:]
    m = slopes[:-1]
    c = vals[:-1] - m * p
    first = float(np.sum(_poly_moment1(p, q, m, c)))
    second = float(np.sum(m * (q ** 4 - p ** 4) / 4.0 + c * (q ** 3 - p ** 3) / 3.0))
    return first, second


# ---------------------------------------------------------------------------
# queue model


@dataclass(frozen=True)
class QueueModel:
    """Base arrival rate plus reshape function plus service distribution."""

    lambda0: float
    reshape: ReshapeFunction = field(default_factory=ReshapeFunction.constant)
    service: ServiceDistribution = field(
        default_factory=lambda: ServiceDistribution.exponential(1.0))

    def __post_init__(self):
        if not (math.isfinite(self.lambda0) and self.lambda0 >= 0):
            raise ModelError("lambda0 must be finite and >= 0")

    # -- scalar moments -----------------------------------------------------

    def mean_service(self) -> float:
        return self.service.mean

    def reshaped_mean(self) -> float:
        """Expected cumulative multiplier over a service: E[F(sigma)]."""
        return _reshaped_mean(self)

    def reshaped_mean_by_parts(self) -> float:
        """Same moment computed as the integral of f times the service tail."""
        return _reshaped_mean_by_parts(self)

    def reshaped_second_moment(self) -> float:
        """E[F(sigma)^2]."""
        return _reshaped_second_moment(self)

    def waiting_first_term(self) -> float:
        """lambda0 * E[integral of u*f(u) du up to sigma].

        This is the first summand of the stationary mean waiting time.
        """
        return self.lambda0 * _weighted_reshape_mean(self)

    def utilization(self) -> float:
        return self.lambda0 * self.reshaped_mean()

    def is_rate_preserving(self, tol: float = 1e-8) -> bool:
        """True when reshaping leaves the long-run arrival rate at lambda0."""
        nu = self.mean_service()
        return abs(nu - self.reshaped_mean()) <= tol * max(nu, 1.0)

    # -- geometry helpers ---------------------------------------------------

    @property
    def cutoff(self) -> float:
        return self.service.cutoff

    def rate_bound(self) -> float:
        """Envelope rate lambda0 * max f over the service support."""
        return self.lambda0 * self.reshape.max_value(self.cutoff)

    def kinks(self) -> tuple[float, ...]:
        pts = {*self.reshape.kinks(), *self.service.support_breakpoints()}
        return tuple(sorted(p for p in pts if 0.0 < p < self.cutoff))

    # -- JSON spec ----------------------------------------------------------

    def to_spec(self) -> dict:
        return {"lambda0": self.lambda0, "service": self.service.to_spec(),
                "reshape": self.reshape.to_spec()}

    @classmethod
    def from_spec(cls, d: dict) -> "QueueModel":
        if not isinstance(d, dict):
            raise ModelError("model spec must be a JSON object")
        try:
            lam = float(d["lambda0"])
            service = d["service"]
            reshape = d["reshape"]
        except (KeyError, TypeError, ValueError) as e:
            raise ModelError(f"malformed model spec: {e}") from None
        return cls(lambda0=lam,
                   reshape=ReshapeFunction.from_spec(reshape),
                   service=ServiceDistribution.from_spec(service))

    @classmethod
    def from_json(cls, path) -> "QueueModel":
        try:
            with open(path) as fh:
                spec = json.load(fh)
        except OSError as e:
            raise ModelError(f"cannot read model spec: {e}") from None
        except json.JSONDecodeError as e:
            raise ModelError(f"model spec is not valid JSON: {e}") from None
        return cls.from_spec(spec)


def _moment_quad(model: QueueModel, integrand) -> float:
    """Moment integral over the truncated service support.

    Composite Gauss on kink-aligned segments, verified by doubling the
    segment count; table families can carry thousands of kinks, which rules
    out adaptive subdivision with explicit break lists.
    """
    pts = model.kinks()
    v1 = numerics.fixed_quadrature(integrand, model.cutoff, pts, n=512)
    v2 = numerics.fixed_quadrature(integrand, model.cutoff, pts, n=1024)
    if abs(v2 - v1) > 1e-9 * max(1.0, abs(v2)):
        raise NumericsError("moment quadrature did not converge",
                            estimate=v2, error_estimate=abs(v2 - v1))
    return v2


@lru_cache(maxsize=None)
def _reshaped_mean(model: QueueModel) -> float:
    rf, sv = model.reshape, model.service
    return _moment_quad(model, lambda r: rf.integral(r) * sv.pdf(r))


@lru_cache(maxsize=None)
def _reshaped_mean_by_parts(model: QueueModel) -> float:
    rf, sv = model.reshape, model.service
    return _moment_quad(model, lambda r: rf(r) * sv.tail(r))


@lru_cache(maxsize=None)
def _reshaped_second_moment(model: QueueModel) -> float:
    rf, sv = model.reshape, model.service
    return _moment_quad(model, lambda r: rf.integral(r) ** 2 * sv.pdf(r))


@lru_cache(maxsize=None)
def _weighted_reshape_mean(model: QueueModel) -> float:
    rf, sv = model.reshape, model.service
    return _moment_quad(model, lambda r: rf.weighted_integral(r) * sv.pdf(r))
