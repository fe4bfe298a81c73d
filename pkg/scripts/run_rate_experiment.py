#!/usr/bin/env python3
"""Run the shared rate experiment (SGD vs Muon legs), fit the min-grad
log-log slopes, and write ensemble CSVs plus a slope summary.

Usage: python scripts/run_rate_experiment.py [--out results/rate] [--seeds N]
"""
import argparse
import csv
import time
from pathlib import Path

from muon_lab import harness as hz
from muon_lab import reports
from muon_lab.config import build_setup, parse_config, preset_path


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--out", default="results/rate")
    ap.add_argument("--seeds", type=int, default=None)
    args = ap.parse_args()
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    rows = []
    for name, target in (("rate-sgd", -0.15), ("rate-muon", -0.30)):
        cfg = parse_config(preset_path(name))
        setup = build_setup(cfg)
        seeds = list(range(args.seeds or cfg.run.seeds))
        t0 = time.perf_counter()
        stats, _ = hz.run_ensemble(setup, seeds, keep_traces=False)
        fit = hz.fit_rate(stats, "min-grad", cfg.run.horizons,
                          target_slope=target)
        dt = time.perf_counter() - t0
        reports.write_ensemble_csv(out / f"ensemble_{name}.csv", stats)
        rows.append((name, fit.slope, target, fit.residual, len(seeds), dt))
        print(f"{name}: slope {fit.slope:+.4f} (target {target:+.2f}), "
              f"residual {fit.residual:.4f}, {len(seeds)} seeds, {dt:.0f}s")

    with open(out / "slopes.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["leg", "slope", "target", "residual", "seeds", "seconds"])
        w.writerows(rows)
    sep = rows[0][1] - rows[1][1]
    print(f"separation (sgd - muon): {sep:+.4f}  -> wrote {out}/slopes.csv")


if __name__ == "__main__":
    main()
