"""Report emission: delimited tables (CSV / JSONL) plus rendered figures.

Delimited outputs are deterministic byte-for-byte for a given report;
figures are rendered next to them (PNG, Agg backend) for quick reading
but carry no determinism guarantee.
"""

from __future__ import annotations

import csv
import io
import json
from pathlib import Path
from typing import Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402  (backend must be set first)

from .corpus import schema_labels  # noqa: E402
from .errors import ValidationError  # noqa: E402
from .harness import AblationReport, EpochRecord  # noqa: E402
from .metrics import Metrics  # noqa: E402

FORMATS = ("csv", "jsonl")


def metric_columns(schema_id: str) -> list[str]:
    cols = ["token_overall_f1", "entity_overall_f1"]
    for level in ("token", "entity"):
        for label in schema_labels(schema_id):
            cols.extend(f"{level}_{label}_{part}"
                        for part in ("precision", "recall", "f1", "support"))
    return cols


def report_to_csv(report: AblationReport) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    cols = metric_columns(report.schema_id)
    writer.writerow(["config", "seeds"] + cols)
    for row in report.rows:
        values = row.metrics.columns()
        seeds = "|".join(str(r.seed) for r in row.runs)
        writer.writerow([row.descriptor, seeds] + [repr(values[c]) for c in cols])
    return buf.getvalue()


def report_to_jsonl(report: AblationReport) -> str:
    lines = []
    for row in report.rows:
        lines.append(json.dumps({
            "config": row.descriptor,
            "metrics": row.metrics.columns(),
            "runs": [{"seed": r.seed, "metrics": r.metrics.columns()}
                     for r in row.runs],
        }, sort_keys=True))
    return "".join(line + "\n" for line in lines)


def emit_report(report: AblationReport, path, fmt: str = "csv") -> Path:
    """Write one report file; deterministic bytes for a given report."""
    if fmt not in FORMATS:
        raise ValidationError(f"unknown report format '{fmt}'; use one of {FORMATS}")
    path = Path(path)
    text = report_to_csv(report) if fmt == "csv" else report_to_jsonl(report)
    path.write_text(text, encoding="utf-8")
    return path


def parse_report_csv(path) -> list[dict]:
    """Read an emitted CSV back into {config, seeds, <metric>: float} dicts."""
    with Path(path).open("r", encoding="utf-8", newline="") as fh:
        reader = csv.DictReader(fh)
        rows = []
        for rec in reader:
            parsed = {"config": rec["config"], "seeds": rec["seeds"]}
            for key, val in rec.items():
                if key not in ("config", "seeds"):
                    parsed[key] = float(val)
            rows.append(parsed)
    return rows


def render_report_figure(report: AblationReport, path) -> Path:
    """Grouped bars of overall token/entity F1 per configuration row."""
    path = Path(path)
    names = [row.descriptor for row in report.rows]
    token = [row.metrics.token_overall_f1 for row in report.rows]
    entity = [row.metrics.entity_overall_f1 for row in report.rows]
    x = range(len(names))
    fig, ax = plt.subplots(figsize=(max(6.0, 0.9 * len(names) + 2), 4.0))
    ax.bar([i - 0.2 for i in x], token, width=0.4, label="token F1")
    ax.bar([i + 0.2 for i in x], entity, width=0.4, label="entity F1")
    ax.set_xticks(list(x))
    ax.set_xticklabels(names, rotation=45, ha="right", fontsize=8)
    ax.set_ylim(0.0, 1.05)
    ax.set_ylabel("overall F1 (excl. other)")
    ax.legend(loc="lower right")
    ax.grid(axis="y", alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def emit_history(history: Sequence[EpochRecord], path) -> Path:
    """One JSON record per epoch: mean losses plus validation F1."""
    path = Path(path)
    with path.open("w", encoding="utf-8") as fh:
        for rec in history:
            fh.write(json.dumps(rec.to_record(), sort_keys=True))
            fh.write("\n")
    return path


def render_history_figure(history: Sequence[EpochRecord], path) -> Path:
    path = Path(path)
    epochs = [r.epoch for r in history]
    totals = [r.mean_losses.get("total", 0.0) for r in history]
    val_f1 = [r.val_token_f1 for r in history]
    fig, ax = plt.subplots(figsize=(7, 4))
    ax.plot(epochs, totals, color="tab:red", label="mean total loss")
    ax.set_xlabel("epoch")
    ax.set_ylabel("mean total loss", color="tab:red")
    ax2 = ax.twinx()
    ax2.plot(epochs, val_f1, color="tab:blue", label="val token F1")
    ax2.set_ylabel("val token F1", color="tab:blue")
    ax2.set_ylim(0.0, 1.05)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def single_metrics_report(metrics: Metrics, descriptor: str,
                          seed: int = 0) -> AblationReport:
    """Wrap one evaluation into a one-row report for uniform emission."""
    from .harness import ReportRow, RunResult
    run = RunResult(descriptor=descriptor, seed=seed, metrics=metrics)
    return AblationReport(schema_id=metrics.schema_id,
                          rows=[ReportRow(descriptor=descriptor,
                                          metrics=metrics, runs=[run])])
