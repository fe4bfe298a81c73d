"""muon-lab command line: run ensembles with enabled checks, audit schedule
summability, audit noise moments, orthogonalize a matrix from CSV, and merge
check reports.

Exit codes: 0 success, 1 configuration error, 2 runtime/numerical error,
3 at least one acceptance check failed.
"""
from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from . import harness as hz
from . import linalg as la
from . import noise as noise_mod
from . import reports
from . import schedules as sched_mod
from .config import ConfigError, build_muon_cfg, build_oracle, build_setup, parse_config
from .streams import make_stream

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_RUNTIME = 2
EXIT_CHECK_FAILED = 3


def _outdir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _spot_steps(T: int, count: int):
    if count >= T:
        return list(range(T))
    stride = T / count
    return sorted({min(T - 1, int(i * stride)) for i in range(count)})


def cmd_run(args) -> int:
    cfg = parse_config(args.config)
    setup = build_setup(cfg, seed_override=args.seed)
    out = _outdir(args)
    stats, traces = hz.run_ensemble(setup, list(range(cfg.run.seeds)))
    for tr in traces:
        reports.write_trace_jsonl(out / f"trace_seed{tr.seed}.jsonl", tr)
    reports.write_ensemble_csv(out / "ensemble.csv", stats)
    failed = False
    enabled = cfg.checks.enabled
    if "descent" in enabled:
        steps = _spot_steps(cfg.run.T, cfg.checks.descent_spot_steps)
        rows = hz.run_descent_suite(setup, steps, cfg.checks.descent_replicates)
        check_id = f"descent-{setup.optimizer}"
        reports.write_report_csv(out / "report_descent.csv",
                                 reports.descent_report_rows(check_id, rows))
        failed |= any(r.status == "fail" for r in rows)
    env_rows = []
    if "envelope-upper" in enabled:
        env_rows += hz.upper_envelope_rows(setup, stats, cfg.run.horizons)
    if "envelope-lower" in enabled:
        env_rows += hz.lower_envelope_rows(setup, stats, cfg.run.horizons)
    if env_rows:
        reports.write_report_csv(out / "report_envelope.csv",
                                 reports.envelope_report_rows(env_rows))
        failed |= any(r.status == "fail" for r in env_rows)
    if "schedule-conditions" in enabled:
        failed |= _schedule_report(cfg, setup, out) > 0
    print(f"wrote {cfg.run.seeds} traces, ensemble.csv and "
          f"{len(enabled)} check report(s) to {out}")
    return EXIT_CHECK_FAILED if failed else EXIT_OK


def _which_conditions(setup) -> str:
    if setup.optimizer == "sgd":
        return "sgd"
    return "muon" if setup.beta > 0 else "muon0"


def _schedule_report(cfg, setup, out: Path) -> int:
    which = _which_conditions(setup)
    horizons = cfg.checks.schedule_horizons
    cond = sched_mod.check_conditions(setup.step_sched, setup.batch_sched,
                                      setup.nu, setup.p, setup.beta, which,
                                      horizons=horizons)
    rows = reports.schedule_report_rows(cond.report)
    required = {f"series-{name}" for name in cond.failures if name != "eta-divergence"}
    flagged = []
    for check_id, T, lhs, rhs, margin, status in rows:
        if check_id in required and status == "divergent-regime":
            status = "divergent-required"
        flagged.append((check_id, T, lhs, rhs, margin, status))
    witness_status = ("witness-failed" if "eta-divergence" in cond.failures
                      else "divergence-witnessed")
    flagged.append(("series-eta-witness", cond.report.horizon,
                    cond.report.partial["eta"], cond.report.eta_lower_bound,
                    cond.report.partial["eta"] - cond.report.eta_lower_bound,
                    witness_status))
    reports.write_report_csv(out / "report_schedules.csv", flagged)
    if not cond.passed:
        print(f"schedule conditions [{which}] FAILED: "
              + ", ".join(cond.failures))
    return 0 if cond.passed else 1


def cmd_check_schedules(args) -> int:
    cfg = parse_config(args.config)
    setup = build_setup(cfg, seed_override=args.seed)
    out = _outdir(args)
    bad = _schedule_report(cfg, setup, out)
    print(f"wrote report_schedules.csv to {out}")
    return EXIT_CHECK_FAILED if bad else EXIT_OK


def cmd_check_noise(args) -> int:
    cfg = parse_config(args.config)
    oracle = build_oracle(cfg)
    out = _outdir(args)
    w = np.mean([c.anchor for c in oracle.objective.components], axis=0) + 1.0
    p = cfg.noise.p
    sigma_p = noise_mod.oracle_sigma_certificate(oracle, p)
    rows = []
    failed = False
    ests = []
    for b in cfg.checks.noise_batches:
        rng = make_stream(cfg.run.seed, "check-noise", int(b))
        est = noise_mod.estimate_p_variance(oracle, w, int(b), p,
                                            cfg.checks.noise_trials, rng)
        ests.append((int(b), est))
        bound = 2.0 ** (2.0 - p) * sigma_p / float(b) ** (p - 1.0)
        ok = est.estimate <= bound * (1.0 + 1e-9) + 4.0 * est.stderr
        failed |= not ok
        rows.append(("noise-p-variance", int(b), est.estimate, bound,
                     bound - est.estimate, "pass" if ok else "fail"))
    if len(ests) >= 3:
        xs = np.log([b for b, _ in ests])
        ys = np.log([e.estimate for _, e in ests])
        slope = float(np.polyfit(xs, ys, 1)[0])
        lo, hi = -(p - 1.0) - 0.15, -(p - 1.0) + 0.15
        ok = lo <= slope <= hi
        failed |= not ok
        rows.append(("noise-scaling-slope", 0, slope, -(p - 1.0),
                     slope - (-(p - 1.0)), "pass" if ok else "fail"))
    if oracle.noise.heavy_tailed:
        trend = noise_mod.moment_trend(oracle.noise, p,
                                       [2 ** k for k in range(10, 18)])
        grow = trend[-1][1] / trend[len(trend) // 2][1]
        settle = abs(trend[-1][2] / trend[-2][2] - 1.0)
        ok = grow > 1.2 and settle < 0.05
        failed |= not ok
        rows.append(("noise-heavy-tail-witness", trend[-1][0], grow, settle,
                     grow - 1.2, "pass" if ok else "fail"))
    reports.write_report_csv(out / "report_noise.csv", rows)
    print(f"wrote report_noise.csv to {out}")
    return EXIT_CHECK_FAILED if failed else EXIT_OK


def _read_matrix_csv(path) -> np.ndarray:
    rows = []
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        line = line.strip()
        if line:
            rows.append([float(x) for x in line.split(",")])
    return la.as_matrix(np.array(rows))


def cmd_polar(args) -> int:
    w = _read_matrix_csv(args.input)
    if args.config:
        cfg = parse_config(args.config)
        ns = build_muon_cfg(cfg).ns if cfg.optimizer.kind == "muon" else \
            la.NewtonSchulzConfig.cubic()
    else:
        ns = la.NewtonSchulzConfig.cubic()
    o = (la.newton_schulz_orthogonalize(w, ns) if args.newton_schulz
         else la.polar_factor_svd(w))
    text = "\n".join(",".join(repr(float(v)) for v in row) for row in o)
    print(text)
    if args.out:
        out = _outdir(args)
        (out / "polar.csv").write_text(text + "\n", encoding="utf-8")
    return EXIT_OK


def cmd_report(args) -> int:
    out = _outdir(args)
    rows, per_check, any_fail = reports.merge_reports(out)
    reports.write_report_csv(out / "summary.csv", [
        (r[0], r[1], float(r[2]), float(r[3]), float(r[4]), r[5]) for r in rows])
    for check, agg in sorted(per_check.items()):
        verdict = "FAIL" if agg["fail"] else "pass"
        extra = f", {agg['vacuous']} vacuous" if agg["vacuous"] else ""
        print(f"{check}: {verdict} ({agg['rows']} rows{extra})")
    if not per_check:
        print("no report_*.csv files found")
    return EXIT_CHECK_FAILED if any_fail else EXIT_OK


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(prog="muon-lab")
    sub = ap.add_subparsers(dest="command", required=True)
    for name, fn in (("run", cmd_run), ("check-schedules", cmd_check_schedules),
                     ("check-noise", cmd_check_noise), ("report", cmd_report)):
        p = sub.add_parser(name)
        if name != "report":
            p.add_argument("--config", required=True)
            p.add_argument("--seed", type=int, default=None)
        p.add_argument("--out", default="results")
        p.set_defaults(fn=fn)
    p = sub.add_parser("polar")
    p.add_argument("--input", required=True, help="matrix as CSV rows")
    p.add_argument("--config", default=None)
    p.add_argument("--newton-schulz", action="store_true")
    p.add_argument("--out", default=None)
    p.set_defaults(fn=cmd_polar)
    args = ap.parse_args(argv)
    try:
        return args.fn(args)
    except ConfigError as exc:
        print(str(exc), file=sys.stderr)
        return EXIT_CONFIG
    except (la.SvdConvergenceError, la.NewtonSchulzDivergenceError,
            la.ZeroDirectionError, la.DegenerateRankError,
            noise_mod.InfiniteMomentError, ValueError) as exc:
        print(f"runtime error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
