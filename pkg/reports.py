# reports.py
"""Report tables for evaluations, sweeps and the illustrative example; CSV, JSON and XLSX output."""
from __future__ import annotations

import csv
import json
import logging
import math
import os

import numpy as np

from errors import InvalidConfigError

logger = logging.getLogger("ctxopt.reports")


def _num(value, digits=4):
    if value is None:
        return ""
    if isinstance(value, float) and not math.isfinite(value):
        return ""
    return round(float(value), digits)


# ----- Datasets: {"headers": [...], "rows": [{header: value}]} -----

def method_table(report) -> dict:
    headers = ["Method", "Income", "RI %", "Infeasible %", "Fit s", "Gap", "Splits", "Failures"]
    rows = []
    for method, s in report.methods.items():
        rows.append({
            "Method": method.upper(),
            "Income": _num(s.total_income, 2),
            "RI %": _num(s.relative_income, 1),
            "Infeasible %": _num(s.infeasibility_rate, 1),
            "Fit s": _num(s.fit_seconds, 3),
            "Gap": _num(s.mean_gap, 6),
            "Splits": s.splits,
            "Failures": s.failures,
        })
    return {"headers": headers, "rows": rows}


def distribution_table(report) -> dict:
    """Share of positive, negative and zero-income periods and the summed gains and losses."""
    headers = ["Method", "Positive %", "Negative %", "Zero %", "Income+", "Income-"]
    rows = []
    for method, s in report.methods.items():
        d = s.distribution
        if d is None:
            continue
        rows.append({
            "Method": method.upper(),
            "Positive %": _num(d.pct_positive, 1),
            "Negative %": _num(d.pct_negative, 1),
            "Zero %": _num(d.pct_zero, 1),
            "Income+": _num(d.total_positive, 2),
            "Income-": _num(d.total_negative, 2),
        })
    return {"headers": headers, "rows": rows}


def split_table(report) -> dict:
    headers = ["Bin", "Repeat", "Method", "Income", "BN income", "Periods", "Infeasible",
               "Fit s", "Status", "Gap", "Flags", "Error"]
    rows = [{
        "Bin": r.bin_index,
        "Repeat": r.repeat,
        "Method": r.method.upper(),
        "Income": _num(r.income, 4),
        "BN income": _num(r.benchmark_income, 4),
        "Periods": r.periods,
        "Infeasible": r.infeasible,
        "Fit s": _num(r.fit_seconds, 3),
        "Status": r.status,
        "Gap": _num(r.gap, 8),
        "Flags": "; ".join(r.flags),
        "Error": r.error or "",
    } for r in report.splits]
    return {"headers": headers, "rows": rows}


def sweep_table(sweep) -> dict:
    methods = [m for m in sweep.settings.get("methods", []) if m != "bn"]
    headers = (["Technology", "BN income"] + [f"RI {m.upper()}" for m in methods]
               + ["DR infeasible %", "At min %", "Inside %", "At max %"])
    rows = []
    for name, t in sweep.technologies.items():
        row = {"Technology": name, "BN income": _num(t.benchmark_income, 2)}
        for m in methods:
            row[f"RI {m.upper()}"] = _num(t.relative_income.get(m), 1)
        row["DR infeasible %"] = _num(t.infeasibility_rate.get("dr"), 1)
        row["At min %"], row["Inside %"], row["At max %"] = (_num(v, 1) for v in t.operating_regime)
        rows.append(row)
    return {"headers": headers, "rows": rows}


def illustrative_table(result) -> dict:
    headers = ["Case", "Method", "q1", "q2", "q3", "q4", "Income", "RI %"]
    rows = []
    for name, case in result.cases.items():
        for method, q in case.decisions.items():
            row = {"Case": name, "Method": method.upper(), "Income": _num(case.income[method], 2),
                   "RI %": _num(case.relative_income[method], 1)}
            for j, v in enumerate(q, start=1):
                row[f"q{j}"] = _num(v, 2)
            rows.append(row)
    return {"headers": headers, "rows": rows}


def curve_table(case) -> dict:
    return curve_rows(case.grid, case.curves)


def curve_rows(grid, curves: dict) -> dict:
    """One row per grid point with each method's offer."""
    methods = list(curves)
    headers = ["x"] + [m.upper() for m in methods]
    rows = []
    for j, x in enumerate(grid):
        row = {"x": _num(x, 4)}
        for m in methods:
            row[m.upper()] = _num(curves[m][j], 6)
        rows.append(row)
    return {"headers": headers, "rows": rows}


# ----- Writers -----

def _json_default(value):
    if isinstance(value, np.generic):
        return value.item()
    if isinstance(value, np.ndarray):
        return value.tolist()
    if isinstance(value, float) and not math.isfinite(value):
        return None
    return str(value)


def _clean(value):
    # JSON has no NaN or infinity
    if isinstance(value, float) and not math.isfinite(value):
        return None
    if isinstance(value, dict):
        return {str(k): _clean(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_clean(v) for v in value]
    return value


def write_json(payload: dict, path) -> str:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(_clean(payload), fh, indent=2, default=_json_default)
    return path


def write_csv(dataset: dict, path) -> str:
    headers = dataset.get("headers", [])
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(headers)
        for row in dataset.get("rows", []):
            writer.writerow([row.get(h, "") for h in headers])
    return path


def write_xlsx(sheets: dict, path) -> str | None:
    """One worksheet per dataset; returns None when openpyxl is unavailable."""
    try:
        from openpyxl import Workbook
        from openpyxl.utils import get_column_letter
    except ImportError:
        logger.warning("Excel export dependency is missing (openpyxl)", extra={"path": str(path)})
        return None

    wb = Workbook()
    wb.remove(wb.active)
    for title, dataset in sheets.items():
        ws = wb.create_sheet(title=title[:31])
        headers = dataset.get("headers", [])
        ws.append(headers)
        for row in dataset.get("rows", []):
            ws.append([row.get(h, "") for h in headers])

        ws.freeze_panes = "A2"
        for idx, h in enumerate(headers, start=1):
            width = 12
            if h in ("Method", "Technology", "Case"):
                width = 14
            elif h in ("Flags", "Error"):
                width = 40
            ws.column_dimensions[get_column_letter(idx)].width = width
    wb.save(path)
    return path


def _prepare(out_dir) -> str:
    if not out_dir:
        raise InvalidConfigError("an output directory is required")
    os.makedirs(out_dir, exist_ok=True)
    return out_dir


def write_report(report, out_dir, xlsx: bool = False) -> dict:
    """Write ``report.json`` and the methods, splits and distribution CSV tables (plus ``report.xlsx``)."""
    out_dir = _prepare(out_dir)
    methods, splits, spread = method_table(report), split_table(report), distribution_table(report)
    paths = {
        "json": write_json(report.as_dict(), os.path.join(out_dir, "report.json")),
        "methods": write_csv(methods, os.path.join(out_dir, "methods.csv")),
        "splits": write_csv(splits, os.path.join(out_dir, "splits.csv")),
        "distribution": write_csv(spread, os.path.join(out_dir, "distribution.csv")),
    }
    if xlsx:
        path = write_xlsx({"Methods": methods, "Splits": splits, "Distribution": spread}, os.path.join(out_dir, "report.xlsx"))
        if path:
            paths["xlsx"] = path
    logger.info("Report written", extra={"out_dir": out_dir, "files": sorted(paths)})
    return paths


def write_sweep(sweep, out_dir, xlsx: bool = False) -> dict:
    out_dir = _prepare(out_dir)
    table = sweep_table(sweep)
    paths = {
        "json": write_json(sweep.as_dict(), os.path.join(out_dir, "sweep.json")),
        "technologies": write_csv(table, os.path.join(out_dir, "technologies.csv")),
    }
    if xlsx:
        path = write_xlsx({"Technologies": table}, os.path.join(out_dir, "sweep.xlsx"))
        if path:
            paths["xlsx"] = path
    return paths


def write_illustrative(result, out_dir) -> dict:
    """Summary table, full JSON and one decision-curve CSV per case."""
    out_dir = _prepare(out_dir)
    paths = {
        "json": write_json(result.as_dict(), os.path.join(out_dir, "illustrative.json")),
        "table": write_csv(illustrative_table(result), os.path.join(out_dir, "illustrative.csv")),
    }
    for name, case in result.cases.items():
        paths[f"curve_{name}"] = write_csv(curve_table(case), os.path.join(out_dir, f"curve_{name}.csv"))
    return paths


def format_table(dataset: dict) -> str:
    """Plain-text rendering for the terminal."""
    headers = dataset.get("headers", [])
    body = [[str(row.get(h, "")) for h in headers] for row in dataset.get("rows", [])]
    widths = [max([len(h)] + [len(r[j]) for r in body]) for j, h in enumerate(headers)]
    lines = ["  ".join(h.ljust(w) for h, w in zip(headers, widths))]
    lines.append("  ".join("-" * w for w in widths))
    lines += ["  ".join(v.ljust(w) for v, w in zip(r, widths)) for r in body]
    return "\n".join(lines)
