#!/usr/bin/env python3
"""Run the per-step descent-bound checks for every shipped descent preset
and write one report CSV per preset.

Usage: python scripts/run_descent_checks.py [--out results/descent]
       [--replicates R] [--presets name1,name2,...]
"""
import argparse
import time
from pathlib import Path

from muon_lab import harness as hz
from muon_lab import reports
from muon_lab.config import build_setup, parse_config, preset_path

DEFAULT = ("descent-sgd-det", "descent-muon0-det", "descent-muon-det",
           "descent-sgd-stoch", "descent-muon0-stoch", "descent-muon-stoch",
           "descent-sgd-index")


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--out", default="results/descent")
    ap.add_argument("--replicates", type=int, default=None)
    ap.add_argument("--presets", default=",".join(DEFAULT))
    args = ap.parse_args()
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    any_fail = False
    for name in args.presets.split(","):
        cfg = parse_config(preset_path(name.strip()))
        setup = build_setup(cfg)
        count = cfg.checks.descent_spot_steps
        steps = (range(cfg.run.T) if count >= cfg.run.T
                 else sorted({int(i * cfg.run.T / count) for i in range(count)}))
        t0 = time.perf_counter()
        rows = hz.run_descent_suite(setup, steps,
                                    args.replicates or cfg.checks.descent_replicates)
        fails = sum(r.status == "fail" for r in rows)
        skips = sum(r.status == "skipped" for r in rows)
        any_fail |= fails > 0
        reports.write_report_csv(
            out / f"report_{name.strip()}.csv",
            reports.descent_report_rows(f"descent-{setup.optimizer}", rows))
        print(f"{name}: {len(rows)} steps, {fails} violations, {skips} skipped "
              f"({time.perf_counter() - t0:.0f}s)")
    print("overall:", "FAIL" if any_fail else "pass")
    raise SystemExit(3 if any_fail else 0)


if __name__ == "__main__":
    main()
