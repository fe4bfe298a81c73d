#!/usr/bin/env python3
"""Randomized audit of the closed-form series caps: sample parameter sets in
the summable regime, sum every series directly to a long horizon, and verify
each finite cap dominates its partial sums.

Usage: python scripts/check_schedule_caps.py [--sets 20] [--horizon 100000]
       [--out results/schedule_caps.csv]
"""
import argparse
import csv
from pathlib import Path

import numpy as np

from muon_lab import schedules as sc


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--sets", type=int, default=20)
    ap.add_argument("--horizon", type=int, default=100_000)
    ap.add_argument("--out", default="results/schedule_caps.csv")
    ap.add_argument("--seed", type=int, default=777)
    args = ap.parse_args()
    rng = np.random.default_rng(args.seed)

    rows = []
    bad = 0
    for k in range(args.sets):
        nu = float(rng.uniform(0.25, 1.0))
        a = float(rng.uniform(1.0 / (1.0 + nu) + 0.02, 1.0))
        step = sc.StepSchedule(float(10 ** rng.uniform(-1, 0.7)), a)
        batch = sc.BatchSchedule("geometric", int(rng.integers(1, 64)),
                                 float(rng.uniform(1.1, 4.0)))
        p = float(rng.uniform(1.05, 2.0))
        beta = float(rng.uniform(0.0, 0.97))
        rep = sc.partial_sums(step, batch, nu, p, beta, args.horizon)
        for name in sc.SERIES:
            cap = rep.caps[name]
            if not cap.finite:
                status = "divergent-regime"
            elif rep.partial[name] <= cap.value * (1 + 1e-12):
                status = "ok"
            else:
                status = "cap-exceeded"
                bad += 1
            rows.append([k, name, a, nu, p, beta, batch.b, batch.delta,
                         step.eta, rep.partial[name],
                         cap.value if cap.finite else "inf", status])
        print(f"set {k}: a={a:.3f} nu={nu:.3f} p={p:.3f} beta={beta:.3f} "
              f"-> {'ok' if bad == 0 else 'VIOLATION'}")

    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    with open(out, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["set", "series", "a", "nu", "p", "beta", "b", "delta",
                    "eta", "partial_sum", "cap", "status"])
        w.writerows(rows)
    print(f"wrote {out}; {bad} violations")
    raise SystemExit(3 if bad else 0)


if __name__ == "__main__":
    main()
