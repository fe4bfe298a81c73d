"""Deterministic result emission: trace JSONL, ensemble CSV, and the shared
(check_id, t_or_T, lhs, rhs, margin, status) report CSV format.

Floats are written in shortest round-trip notation, rows in a fixed order,
so identical runs produce byte-identical files.
"""
from __future__ import annotations

import csv
import json
import math
from pathlib import Path

ENSEMBLE_HEADER = ("t", "eta", "b", "mean_f", "se_f", "mean_g", "se_g",
                   "mean_g2", "se_g2")
REPORT_HEADER = ("check_id", "t_or_T", "lhs", "rhs", "margin", "status")

FAIL_STATUSES = ("fail", "cap-exceeded", "witness-failed", "divergent-required")


def _num(x) -> str:
    x = float(x)
    if math.isnan(x):
        return "nan"
    if math.isinf(x):
        return "inf" if x > 0 else "-inf"
    return repr(x)


def write_trace_jsonl(path, trace) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for t in range(len(trace)):
            rec = {
                "t": t,
                "eta": trace.eta[t],
                "b": trace.batch_float[t],
                "f": trace.f[t],
                "g": trace.g[t],
                "d_norm": trace.d_norm[t],
                "direction_kind": trace.direction_kind[t],
            }
            nuc = trace.nuclear[t]
            rec["nuclear"] = None if math.isnan(nuc) else nuc
            fh.write(json.dumps(rec, sort_keys=True) + "\n")


def write_ensemble_csv(path, stats) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(ENSEMBLE_HEADER)
        for i in range(len(stats.t)):
            w.writerow([
                int(stats.t[i]), _num(stats.eta[i]), _num(stats.batch_float[i]),
                _num(stats.mean_f[i]), _num(stats.se_f[i]),
                _num(stats.mean_g[i]), _num(stats.se_g[i]),
                _num(stats.mean_g2[i]), _num(stats.se_g2[i]),
            ])


def write_report_csv(path, rows) -> None:
    """rows: iterable of (check_id, t_or_T, lhs, rhs, margin, status)."""
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(REPORT_HEADER)
        for check_id, t_or_T, lhs, rhs, margin, status in rows:
            w.writerow([check_id, t_or_T, _num(lhs), _num(rhs), _num(margin),
                        status])


def descent_report_rows(check_id: str, rows):
    return [(check_id, r.t, r.lhs, r.rhs, r.margin, r.status) for r in rows]


def envelope_report_rows(rows):
    return [(r.check_id, r.horizon, r.lhs, r.rhs, r.margin, r.status)
            for r in rows]


def schedule_report_rows(report):
    """SummabilityReport -> (series, T, partial_sum, cap, status) rows in the
    shared report shape (margin = cap - partial_sum)."""
    out = []
    for name, T, partial, cap, status in report.rows():
        margin = cap - partial if math.isfinite(cap) else math.inf
        out.append((f"series-{name}", T, partial, cap, margin, status))
    return out


def read_report_csv(path):
    with open(path, encoding="utf-8", newline="") as fh:
        rd = csv.reader(fh)
        header = next(rd)
        if tuple(header) != REPORT_HEADER:
            raise ValueError(f"{path}: unexpected header {header}")
        return [tuple(row) for row in rd]


def merge_reports(outdir):
    """Concatenate all report_*.csv files into summary rows plus a verdict
    per check_id; returns (summary_rows, per_check, any_hard_failure)."""
    outdir = Path(outdir)
    rows = []
    for path in sorted(outdir.glob("report_*.csv")):
        rows.extend(read_report_csv(path))
    per_check: dict = {}
    for r in rows:
        check, status = r[0], r[5]
        agg = per_check.setdefault(check, {"rows": 0, "fail": 0, "vacuous": 0})
        agg["rows"] += 1
        agg["fail"] += status in FAIL_STATUSES
        agg["vacuous"] += status == "vacuous"
    any_fail = any(v["fail"] for v in per_check.values())
    return rows, per_check, any_fail
