"""Report emission: one JSON document plus flat CSV tables and plot data."""
from __future__ import annotations

import csv
import json
from pathlib import Path

SCHEMA_VERSION = 1

REPORT_JSON = "report.json"
METRICS_CSV = "metrics.csv"
CANDIDATES_CSV = "candidates.csv"
BOXPLOT_CSV = "regret_boxplot.csv"
TOPK_CSV = "topk.csv"
SWEEP_CSV = "sweep.csv"
TIMING_CSV = "timing.csv"

_COLUMNS = {
    METRICS_CSV: ["replication", "seed", "selector", "chosen", "chosen_id", "regret", "error"],
    CANDIDATES_CSV: [
        "replication", "candidate", "candidate_id", "true_value", "estimate",
        "sigma", "se", "lower", "covered",
    ],
    BOXPLOT_CSV: ["group", "replication", "regret"],
    TOPK_CSV: ["replication", "selector", "k", "topk_regret", "topk_precision"],
    SWEEP_CSV: ["param", "value", "selector", "mean", "se", "median", "n"],
    TIMING_CSV: ["replication", "seconds"],
}


class ReportError(OSError):
    """Raised when a report file cannot be written or read; carries the path."""


def _metric_rows(records):
    for r in records:
        if "error" in r:
            yield [r["replication"], r["seed"], "", "", "", "", r["error"]]
            continue
        for sel, idx in r["chosen"].items():
            yield [r["replication"], r["seed"], sel, idx, r["candidate_ids"][idx], repr(r["regret"][sel]), ""]


def _candidate_rows(records):
    for r in records:
        if "error" in r:
            continue
        for i, cid in enumerate(r["candidate_ids"]):
            yield [
                r["replication"], i, cid,
                *(repr(r[k][i]) for k in ("true_values", "estimates", "sigmas", "se", "lower")),
                int(r["coverage"][i]),
            ]


def _boxplot_rows(records):
    for r in records:
        if "error" in r:
            continue
        for v in r["candidate_regrets"]:
            yield ["all", r["replication"], repr(v)]
        for v in r["top_fraction_regrets"]:
            yield ["top_fraction", r["replication"], repr(v)]


def _topk_rows(records):
    for r in records:
        if "error" in r:
            continue
        for sel, by_k in r["topk"].items():
            for k, m in by_k.items():
                yield [r["replication"], sel, k, repr(m["topk_regret"]), repr(m["topk_precision"])]


def _sweep_rows(sweeps):
    for s in sweeps:
        for sel, q in s["summary"].get("regret", {}).items():
            yield [s["param"], s["value"], sel, repr(q["mean"]), repr(q["se"]), repr(q["median"]), q["n"]]


def _write_csv(path: Path, columns, rows) -> None:
    try:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(columns)
            w.writerows(rows)
    except OSError as exc:
        raise ReportError(f"cannot write {path}: {exc.strerror or exc}") from exc


def emit_report(
    records: list,
    out_dir,
    *,
    config=None,
    summary: dict | None = None,
    timings: list | None = None,
    sweeps: list | None = None,
) -> dict:
    """Write every report file under ``out_dir`` and return ``{name: path}``.

    ``report.json`` holds the full records and is deterministic; wall-clock
    timings go to ``timing.csv`` only.
    """
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise ReportError(f"cannot create output directory {out}: {exc.strerror or exc}") from exc
    sweeps = sweeps or []
    doc = {
        "schema_version": SCHEMA_VERSION,
        "config": None if config is None else config.raw,
        "config_hash": None if config is None else config.config_hash(),
        "seed": None if config is None else config.seed,
        "records": records,
        "summary": summary or {},
        "sweeps": [{k: s[k] for k in ("param", "value", "summary", "records")} for s in sweeps],
    }
    paths = {name: out / name for name in (REPORT_JSON, *_COLUMNS)}
    try:
        paths[REPORT_JSON].write_text(json.dumps(doc, indent=1, sort_keys=True) + "\n")
    except OSError as exc:
        raise ReportError(f"cannot write {paths[REPORT_JSON]}: {exc.strerror or exc}") from exc
    recs = list(records)
    _write_csv(paths[METRICS_CSV], _COLUMNS[METRICS_CSV], _metric_rows(recs))
    _write_csv(paths[CANDIDATES_CSV], _COLUMNS[CANDIDATES_CSV], _candidate_rows(recs))
    _write_csv(paths[BOXPLOT_CSV], _COLUMNS[BOXPLOT_CSV], _boxplot_rows(recs))
    _write_csv(paths[TOPK_CSV], _COLUMNS[TOPK_CSV], _topk_rows(recs))
    _write_csv(paths[SWEEP_CSV], _COLUMNS[SWEEP_CSV], _sweep_rows(sweeps))
    timing_rows = [[r["replication"], f"{t:.6f}"] for r, t in zip(recs, timings or [])]
    _write_csv(paths[TIMING_CSV], _COLUMNS[TIMING_CSV], timing_rows)
    return {k: str(v) for k, v in paths.items()}


def load_report(path) -> dict:
    """Parse ``report.json`` (or the directory holding it)."""
    p = Path(path)
    if p.is_dir():
        p = p / REPORT_JSON
    try:
        doc = json.loads(p.read_text())
    except OSError as exc:
        raise ReportError(f"cannot read {p}: {exc.strerror or exc}") from exc
    version = doc.get("schema_version")
    if version != SCHEMA_VERSION:
        raise ValueError(f"{p}: unsupported schema_version {version!r}")
    return doc
