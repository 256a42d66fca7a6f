"""Render a BiasReport to JSON, CSV, and Markdown artifacts.

All three are deterministic functions of the report: fixed row order, fixed
float formatting, atomic writes, no timestamps. Cells with no scorable data
render as a dash placeholder in Markdown (CSV cells stay empty) so a partially
scorable run still produces a complete document.
"""

from __future__ import annotations

import csv
import io
from pathlib import Path

from ..jsonutil import write_json_atomic, write_text_atomic
from ..metrics import ALL_LEVELS, BiasReport

MISSING = "—"  # em dash marking cells with no scorable data


def _fmt(value, digits: int = 4) -> str:
    if value is None:
        return MISSING
    return f"{value:.{digits}f}"


def _report_csv(report: BiasReport) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(
        [
            "mode",
            "level",
            "category",
            "raw",
            "normalized",
            "n_classes",
            "n_prompts",
            "unknown_rate",
        ]
    )
    for mode in report.modes:
        for level in list(report.levels) + [ALL_LEVELS]:
            for category in report.categories:
                score = report.bias[mode][level][category]
                if score is None:
                    writer.writerow([mode, level, category, "", "", "", "", ""])
                else:
                    writer.writerow(
                        [
                            mode,
                            level,
                            category,
                            f"{score.raw:.10f}",
                            f"{score.normalized:.10f}",
                            score.n_classes,
                            score.n_prompts,
                            f"{score.unknown_rate:.10f}",
                        ]
                    )
    return buf.getvalue()


def _table(header: list[str], rows: list[list[str]]) -> list[str]:
    lines = ["| " + " | ".join(header) + " |"]
    lines.append("|" + "|".join(" --- " for _ in header) + "|")
    for row in rows:
        lines.append("| " + " | ".join(row) + " |")
    return lines


def _report_markdown(report: BiasReport) -> str:
    lines: list[str] = ["# Fairness audit report", ""]

    lines.append("## Fair discrepancy by mode (normalized, all levels pooled)")
    lines.append("")
    header = ["Mode", *report.categories, "Mean"]
    rows = []
    for mode in report.modes:
        cells = [mode]
        for category in report.categories:
            score = report.bias[mode][ALL_LEVELS][category]
            cells.append(_fmt(None if score is None else score.normalized))
        cells.append(_fmt(report.bias_mean[mode][ALL_LEVELS]))
        rows.append(cells)
    lines.extend(_table(header, rows))
    lines.append("")

    for mode in report.modes:
        lines.append(f"## Mode: {mode}")
        lines.append("")
        rows = []
        for level in report.levels:
            cells = [level]
            for category in report.categories:
                score = report.bias[mode][level][category]
                cells.append(_fmt(None if score is None else score.normalized))
            cells.append(_fmt(report.bias_mean[mode][level]))
            rows.append(cells)
        lines.extend(_table(["Level", *report.categories, "Mean"], rows))
        lines.append("")

    lines.append("## Alignment and diversity")
    lines.append("")
    rows = []
    for mode in report.modes:
        for level in report.levels:
            rows.append(
                [
                    mode,
                    level,
                    _fmt(report.alignment[mode][level]),
                    _fmt(report.diversity[mode][level]),
                ]
            )
        rows.append(
            [
                mode,
                "mean",
                _fmt(report.alignment_mean[mode]),
                _fmt(report.diversity_mean[mode]),
            ]
        )
    lines.extend(_table(["Mode", "Level", "Alignment", "Diversity"], rows))
    lines.append("")

    lines.append("## Bias/alignment correlation")
    lines.append("")
    for mode in report.modes:
        lines.append(f"- {mode}: {_fmt(report.pearson_by_mode.get(mode))}")
    lines.append(f"- pooled: {_fmt(report.pearson_pooled)}")
    lines.append("")

    lines.append("## Unknown label rate")
    lines.append("")
    for mode in report.modes:
        lines.append(f"- {mode}: {_fmt(report.unknown_rate.get(mode))}")
    lines.append("")

    if report.notes:
        lines.append("## Notes")
        lines.append("")
        for note in report.notes:
            lines.append(f"- {note}")
        lines.append("")

    lines.append(f"`{MISSING}` marks cells with no scorable data.")
    lines.append("")
    return "\n".join(lines)


def emit_report(
    report: BiasReport,
    out_dir: Path | str,
    formats: tuple[str, ...] = ("json", "csv", "md"),
) -> dict[str, Path]:
    out_dir = Path(out_dir)
    written: dict[str, Path] = {}
    for fmt in formats:
        if fmt == "json":
            path = out_dir / "report.json"
            write_json_atomic(path, report.to_dict())
        elif fmt == "csv":
            path = out_dir / "report.csv"
            write_text_atomic(path, _report_csv(report))
        elif fmt == "md":
            path = out_dir / "report.md"
            write_text_atomic(path, _report_markdown(report))
        else:
            raise ValueError(f"unknown report format: {fmt!r}")
        written[fmt] = path
    return written
