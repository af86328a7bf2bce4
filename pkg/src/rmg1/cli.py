"""Command line front end.

Subcommands: ``analyze`` (closed-form metrics as JSON), ``simulate``
(seeded simulation report as JSON), ``compare`` (simulator vs analytics
with pass/fail rows) and ``sweep`` (CSV of metrics along a parameter grid).

Exit codes: 0 success (and, for compare, all checks passed); 1 comparison
failed; 2 bad input; 3 numerics failure; 4 unstable model where stability
is required. ``RMG1_TOL`` overrides the default relative tolerance of the
adaptive quadrature backing the analytic metrics.
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import os
import sys

from . import compare as compare_mod
from . import continuous, embedded, numerics, simulate
from .errors import ModelError, NumericsError, UnstableQueueError
from .model import QueueModel

_SWEEPABLE_RESHAPE_FIELDS = {
    "constant": {"value"},
    "linear": {"slope", "intercept", "cutoff"},
    "window": {"t", "height"},
    "table": set(),
}


def _apply_tolerance_env():
    raw = os.environ.get("RMG1_TOL")
    if not raw:
        return
    try:
        tol = float(raw)
    except ValueError:
        raise ModelError(f"RMG1_TOL must be a number, got {raw!r}") from None
    if not 0 < tol < 1:
        raise ModelError("RMG1_TOL must lie in (0, 1)")
    numerics.DEFAULT_QUADRATURE = numerics.Quadrature(
        abs_tol=tol * 1e-2, rel_tol=tol,
        max_subdivisions=numerics.DEFAULT_MAX_SUBDIVISIONS)


def _write_json(path: str, payload: dict):
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _analytic_report(model: QueueModel) -> dict:
    rho = model.utilization()
    if rho >= 1.0:
        return {"rho": rho, "stable": False}
    emb = embedded.solve(model)
    return {
        "rho": rho,
        "stable": True,
        "nu": model.mean_service(),
        "nu_bar": model.reshaped_mean(),
        "rate_preserving": model.is_rate_preserving(),
        "q": [float(v) for v in emb.q],
        "E_q_N": embedded.mean_at_completions(model),
        "empty_probability": continuous.empty_probability(model),
        "mean_queue_length": continuous.mean_queue_length(model),
        "alpha": continuous.arrival_rate(model),
        "omega": continuous.waiting_time(model),
        "sojourn": continuous.sojourn_time(model),
    }


def cmd_analyze(args) -> int:
    model = QueueModel.from_json(args.spec)
    report = _analytic_report(model)
    if not report["stable"]:
        print(f"warning: unstable model, rho = {report['rho']:.6g} >= 1",
              file=sys.stderr)
    _write_json(args.out, report)
    return 0


def cmd_simulate(args) -> int:
    model = QueueModel.from_json(args.spec)
    mode = simulate.RateMode(args.mode)
    if args.reps >= 2:
        rep = simulate.replicate(model, args.horizon, args.reps, args.seed,
                                 mode=mode, warmup=args.warmup,
                                 workers=args.workers)
    else:
        rep = simulate.run(model, args.horizon, args.seed, mode=mode,
                           warmup=args.warmup)
    _write_json(args.out, rep.to_dict())
    return 0


def cmd_compare(args) -> int:
    model = QueueModel.from_json(args.spec)
    if model.utilization() >= 1.0:
        raise UnstableQueueError(model.utilization())
    mode = simulate.RateMode(args.mode)
    if args.reps >= 2:
        rep = simulate.replicate(model, args.horizon, args.reps, args.seed,
                                 mode=mode, warmup=args.warmup,
                                 workers=args.workers)
    else:
        rep = simulate.run(model, args.horizon, args.seed, mode=mode,
                           warmup=args.warmup)
    result = compare_mod.build_comparison(model, rep, z=args.z,
                                          corrupt_metric=args.corrupt_metric)
    _write_json(args.out, result.to_dict())
    for row in result.rows:
        flag = "pass" if row.passed else "FAIL"
        print(f"{row.name}: analytic={row.analytic:.6g} "
              f"simulated={row.simulated:.6g} z={row.z:.2f} [{flag}]")
    flag = "pass" if result.chi2_passed else "FAIL"
    print(f"completion_histogram_chi2: p={result.chi2_p_value:.4g} [{flag}]")
    return 0 if result.all_passed else 1


def _set_sweep_param(spec: dict, param: str, value: float):
    if param == "lambda0":
        spec["lambda0"] = value
        return
    if param.startswith("reshape."):
        key = param.split(".", 1)[1]
        family = spec.get("reshape", {}).get("family")
        allowed = _SWEEPABLE_RESHAPE_FIELDS.get(family, set())
        if key not in allowed:
            raise ModelError(
                f"cannot sweep {param!r} for reshape family {family!r}")
        spec["reshape"][key] = value
        return
    raise ModelError(f"unknown sweep parameter {param!r}")


def cmd_sweep(args) -> int:
    base = QueueModel.from_json(args.spec).to_spec()
    if args.steps < 1:
        raise ModelError("sweep needs at least one step")
    if args.steps == 1:
        values = [args.start]
    else:
        step = (args.stop - args.start) / (args.steps - 1)
        values = [args.start + i * step for i in range(args.steps)]
    with open(args.out, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow([args.param, "rho", "omega", "mean_queue_length",
                         "empty_probability", "alpha"])
        for value in values:
            spec = json.loads(json.dumps(base))
            _set_sweep_param(spec, args.param, value)
            model = QueueModel.from_spec(spec)
            rho = model.utilization()
            if rho >= 1.0:
                writer.writerow([f"{value:.12g}", f"{rho:.12g}", "", "", "", ""])
                continue
            writer.writerow([
                f"{value:.12g}", f"{rho:.12g}",
                f"{continuous.waiting_time(model):.12g}",
                f"{continuous.mean_queue_length(model):.12g}",
                f"{continuous.empty_probability(model):.12g}",
                f"{continuous.arrival_rate(model):.12g}",
            ])
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="rmg1",
        description="Analyze, simulate and cross-validate single-server "
                    "queues whose arrival rate depends on the remaining "
                    "service time.")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--spec", required=True, help="model spec JSON path")
        p.add_argument("--out", required=True, help="output file path")

    p = sub.add_parser("analyze", help="closed-form stationary metrics")
    common(p)
    p.set_defaults(fn=cmd_analyze)

    def sim_opts(p):
        p.add_argument("--horizon", type=float, required=True)
        p.add_argument("--seed", type=int, required=True)
        p.add_argument("--reps", type=int, default=1)
        p.add_argument("--mode", choices=[m.value for m in simulate.RateMode],
                       default="remaining")
        p.add_argument("--warmup", type=float, default=None)
        p.add_argument("--workers", type=int, default=None)

    p = sub.add_parser("simulate", help="seeded simulation report")
    common(p)
    sim_opts(p)
    p.set_defaults(fn=cmd_simulate)

    p = sub.add_parser("compare", help="simulator vs analytics pass/fail")
    common(p)
    sim_opts(p)
    p.add_argument("--z", type=float, default=3.0,
                   help="sigma multiplier for pass/fail (default 3)")
    p.add_argument("--corrupt-metric", default=None, help=argparse.SUPPRESS)
    p.set_defaults(fn=cmd_compare)

    p = sub.add_parser("sweep", help="CSV of metrics along a parameter grid")
    common(p)
    p.add_argument("--param", required=True,
                   help="lambda0 or reshape.<field> (e.g. reshape.t)")
    p.add_argument("--from", dest="start", type=float, required=True)
    p.add_argument("--to", dest="stop", type=float, required=True)
    p.add_argument("--steps", type=int, required=True)
    p.set_defaults(fn=cmd_sweep)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        _apply_tolerance_env()
        return args.fn(args)
    except UnstableQueueError as e:
        print(f"error: {e}", file=sys.stderr)
        return 4
    except ModelError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except NumericsError as e:
        print(f"error: {e}", file=sys.stderr)
        return 3
    except OSError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2


def entrypoint():
    sys.exit(main())


if __name__ == "__main__":
    entrypoint()
