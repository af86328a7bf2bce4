"""Simulator-versus-analytics comparison harness.

Builds per-metric rows (analytic target, simulated estimate, z-score,
pass/fail at a configurable sigma level), a chi-square test of the
completion-epoch histogram against the embedded stationary law, and, for
exponential-service window-reshape models, the two closed-form waiting-time
candidates with the simulation's verdict.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import stats

from . import continuous, embedded
from .model import QueueModel
from .simulate import CI_SIGMA, SimulationReport


@dataclass(frozen=True)
class MetricRow:
    name: str
    analytic: float
    simulated: float
    se: float
    z: float
    passed: bool

    def to_dict(self) -> dict:
        return {"name": self.name, "analytic": self.analytic,
                "simulated": self.simulated, "se": self.se,
                "ci_half": CI_SIGMA * self.se, "z": self.z,
                "passed": self.passed}


@dataclass
class ComparisonReport:
    rows: list[MetricRow]
    chi2_statistic: float
    chi2_p_value: float
    chi2_passed: bool
    z_level: float
    extras: dict = field(default_factory=dict)

    @property
    def all_passed(self) -> bool:
        return self.chi2_passed and all(row.passed for row in self.rows)

    def to_dict(self) -> dict:
        return {"rows": [r.to_dict() for r in self.rows],
                "completion_histogram_chi2": {
                    "statistic": self.chi2_statistic,
                    "p_value": self.chi2_p_value,
                    "passed": self.chi2_passed},
                "z_level": self.z_level,
                "all_passed": self.all_passed,
                **({"window_waiting_closed_forms": self.extras}
                   if self.extras else {})}


def _merge_small_bins(observed: np.ndarray, expected: np.ndarray,
                      min_expected: float = 5.0):
    """Fold bins with small expectations into their left neighbor."""
    obs, exp = [], []
    acc_o = acc_e = 0.0
    for o, e in zip(observed, expected):
        acc_o += o
        acc_e += e
        if acc_e >= min_expected:
            obs.append(acc_o)
            exp.append(acc_e)
            acc_o = acc_e = 0.0
    if acc_e > 0 and obs:
        obs[-1] += acc_o
        exp[-1] += acc_e
    elif acc_e > 0:
        obs.append(acc_o)
        exp.append(acc_e)
    return np.asarray(obs), np.asarray(exp)


def completion_chi_square(histogram: np.ndarray, q: np.ndarray
                          ) -> tuple[float, float]:
    """Goodness of fit of completion-epoch counts against a target pmf."""
    histogram = np.asarray(histogram, dtype=float)
    total = histogram.sum()
    if total <= 0:
        return math.nan, math.nan
    k = max(len(histogram), len(q))
    obs = np.zeros(k)
    obs[:len(histogram)] = histogram
    probs = np.zeros(k)
    probs[:len(q)] = q
    # remaining pmf mass (truncation tails) is folded into the top bin
    probs[-1] += max(1.0 - probs.sum(), 0.0)
    exp = probs * total
    obs_m, exp_m = _merge_small_bins(obs, exp)
    exp_m *= obs_m.sum() / exp_m.sum()
    if len(obs_m) < 2:
        return 0.0, 1.0
    stat, p = stats.chisquare(obs_m, exp_m)
    return float(stat), float(p)


def histograms_chi_square(h1: np.ndarray, h2: np.ndarray
                          ) -> tuple[float, float]:
    """Two-sample chi-square that two count histograms share one law."""
    k = max(len(h1), len(h2))
    a = np.zeros(k)
    b = np.zeros(k)
    a[:len(h1)] = h1
    b[:len(h2)] = h2
    pooled = a + b
    keep_from = np.nonzero(pooled)[0]
    a, b, pooled = a[keep_from], b[keep_from], pooled[keep_from]
    # merge sparse right tail so expected cell counts stay reasonable
    exp_a = pooled * a.sum() / pooled.sum()
    a_m, _ = _merge_small_bins(a, exp_a)
    b_m, _ = _merge_small_bins(b, exp_a)
    table = np.vstack((a_m, b_m))
    table = table[:, table.sum(axis=0) > 0]
    if table.shape[1] < 2:
        return 0.0, 1.0
    stat, p, _, _ = stats.chi2_contingency(table)
    return float(stat), float(p)


def build_comparison(model: QueueModel, report: SimulationReport,
                     z: float = CI_SIGMA,
                     corrupt_metric: str | None = None) -> ComparisonReport:
    """Compare one simulation report against the analytic metrics.

    ``corrupt_metric`` deliberately shifts that analytic target far outside
    the simulated interval; it exists so pipelines can verify that the
    comparison actually fails when analytics and simulation disagree.
    """
    emb = embedded.solve(model)
    targets = {
        "empty_fraction": continuous.empty_probability(model),
        "time_avg_queue": continuous.mean_queue_length(model),
        "effective_rate": continuous.arrival_rate(model),
        "mean_sojourn": continuous.sojourn_time(model),
        "mean_waiting": continuous.waiting_time(model),
        "completion_empty_frequency": float(emb.q[0]),
    }
    rows = []
    for name, analytic in targets.items():
        est = report.metrics[name]
        if corrupt_metric == name:
            analytic = analytic + 10.0 * max(abs(analytic), 20.0 * est.se, 1e-6)
        se = est.se
        diff = abs(analytic - est.value)
        zscore = diff / se if se > 0 else (0.0 if diff == 0.0 else math.inf)
        rows.append(MetricRow(name=name, analytic=float(analytic),
                              simulated=est.value, se=se, z=zscore,
                              passed=bool(diff <= z * se)))
    stat, p = completion_chi_square(report.completion_histogram, emb.q)
    chi_ok = bool(p > 0.01) if math.isfinite(p) else False

    extras = {}
    if (model.service.family == "exponential"
            and model.reshape.family == "window"):
        variants = continuous.window_exp_waiting_variants(model)
        est = report.metrics["mean_waiting"]
        supported = [key for key, val in variants.items()
                     if est.se > 0 and abs(val - est.value) <= z * est.se]
        extras = {**variants,
                  "simulated_mean_waiting": est.value,
                  "simulated_se": est.se,
                  "supported_by_simulation": supported}

    return ComparisonReport(rows=rows, chi2_statistic=stat, chi2_p_value=p,
                            chi2_passed=chi_ok, z_level=z, extras=extras)
