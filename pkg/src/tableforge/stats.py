"""Descriptive statistics over an exported dataset: table shape metrics
computed over distinct tables, word-count metrics per sample, and the
samples-per-table ratio."""

from __future__ import annotations

import logging
import statistics
from dataclasses import dataclass

from .formats import TableFormat, parse
from .table_model import validate

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class MetricSummary:
    median: float
    mean: float
    minimum: float
    maximum: float

    @classmethod
    def of(cls, values: list[int]) -> MetricSummary:
        return cls(
            median=float(statistics.median(values)),
            mean=float(statistics.mean(values)),
            minimum=float(min(values)),
            maximum=float(max(values)),
        )

    def to_dict(self) -> dict:
        return {
            "median": self.median,
            "mean": round(self.mean, 2),
            "min": self.minimum,
            "max": self.maximum,
        }


@dataclass(frozen=True)
class DatasetStats:
    rows: MetricSummary
    cols: MetricSummary
    cells: MetricSummary
    instruction_words: MetricSummary
    response_words: MetricSummary
    avg_instructions_per_table: float
    n_samples: int
    n_tables: int

    def to_dict(self) -> dict:
        return {
            "n_samples": self.n_samples,
            "n_tables": self.n_tables,
            "rows": self.rows.to_dict(),
            "cols": self.cols.to_dict(),
            "cells": self.cells.to_dict(),
            "instruction_words": self.instruction_words.to_dict(),
            "response_words": self.response_words.to_dict(),
            "avg_instructions_per_table": round(self.avg_instructions_per_table, 4),
        }


def _word_count(text: str) -> int:
    return len(text.split())


def compute_stats(records: list[dict]) -> DatasetStats:
    """Stats over export records; shape metrics count each table once."""
    if not records:
        raise ValueError("cannot compute statistics over an empty dataset")
    shapes: dict[str, tuple[int, int]] = {}
    for rec in records:
        table_id = rec["table_id"]
        if table_id in shapes:
            continue
        try:
            fmt = TableFormat.from_name(rec["table_format"])
            table = parse(rec["table_text"], fmt)
        except Exception as exc:
            logger.warning("skipping unparseable table %s in stats: %s", table_id, exc)
            continue
        report = validate(table)
        if not report.ok:
            logger.warning("skipping invalid table %s in stats: %s", table_id, report.codes)
            continue
        shapes[table_id] = (table.n_rows, table.n_cols)
    if not shapes:
        raise ValueError("no record carried a parseable table")
    rows = [r for r, _ in shapes.values()]
    cols = [c for _, c in shapes.values()]
    cells = [r * c for r, c in shapes.values()]
    return DatasetStats(
        rows=MetricSummary.of(rows),
        cols=MetricSummary.of(cols),
        cells=MetricSummary.of(cells),
        instruction_words=MetricSummary.of([_word_count(r["instruction"]) for r in records]),
        response_words=MetricSummary.of([_word_count(r["response"]) for r in records]),
        avg_instructions_per_table=len(records) / len(shapes),
        n_samples=len(records),
        n_tables=len(shapes),
    )


def format_stats(stats: DatasetStats) -> str:
    """Fixed-width text report, one line per statistic family."""
    lines = [
        f"samples: {stats.n_samples}   distinct tables: {stats.n_tables}",
        "",
        f"{'metric':<20} {'median':>10} {'mean':>10} {'min':>10} {'max':>10}",
    ]
    named = [
        ("rows per table", stats.rows),
        ("cols per table", stats.cols),
        ("cells per table", stats.cells),
        ("instruction words", stats.instruction_words),
        ("response words", stats.response_words),
    ]
    for name, summary in named:
        lines.append(
            f"{name:<20} {summary.median:>10.1f} {summary.mean:>10.2f}"
            f" {summary.minimum:>10.0f} {summary.maximum:>10.0f}"
        )
    lines.append(f"\ninstructions per table (avg): {stats.avg_instructions_per_table:.2f}")
    return "\n".join(lines)
