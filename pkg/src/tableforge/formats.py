"""Serialization and parsing between Table values and the four wire formats.

HTML is lossless (merges become rowspan/colspan, header depth becomes
thead rows and th cells, the title becomes a caption). Markdown, CSV and
TSV are flat: covered slots carry a duplicate of their anchor text, and
metadata/header depth must be re-supplied through ParseHints when parsing
back. Markdown cells are trimmed on parse, so cell text with leading or
trailing whitespace does not survive a Markdown round trip.
"""

from __future__ import annotations

import csv
import html
import io
import logging
import re
from dataclasses import dataclass
from enum import Enum
from html.parser import HTMLParser

from .table_model import (
    ALLOWED_LEVELS,
    Cell,
    HeaderSpec,
    MergedRegion,
    Table,
    TableType,
)

logger = logging.getLogger(__name__)


class TableFormat(str, Enum):
    HTML = "html"
    MARKDOWN = "markdown"
    CSV = "csv"
    TSV = "tsv"

    @classmethod
    def from_name(cls, name: str) -> TableFormat:
        """Accept the short aliases used on the command line."""
        aliases = {"md": cls.MARKDOWN, "htm": cls.HTML}
        key = name.strip().lower()
        if key in aliases:
            return aliases[key]
        try:
            return cls(key)
        except ValueError:
            raise ValueError(f"unknown table format {name!r}") from None


class NoTableFound(Exception):
    """Input text contains nothing that looks like a table."""


class RaggedRows(Exception):
    """Parsed rows do not form a rectangle."""


class MalformedMarkup(Exception):
    """Table-like text that violates the format's grammar."""


@dataclass(frozen=True)
class ParseHints:
    """Metadata the lossy formats cannot carry themselves.

    HTML parsing infers structure from markup and uses hints only for
    identity fields; Markdown/CSV/TSV fall back to a flat single-header
    layout when no structure hints are given.
    """

    table_id: str | None = None
    title: str | None = None
    topic: str | None = None
    subtopic: str | None = None
    table_type: TableType | None = None
    column_header_levels: int | None = None
    row_header_levels: int | None = None

    @classmethod
    def from_table(cls, table: Table) -> ParseHints:
        return cls(
            table_id=table.id,
            title=table.title,
            topic=table.topic,
            subtopic=table.subtopic,
            table_type=table.table_type,
            column_header_levels=table.header_spec.column_header_levels,
            row_header_levels=table.header_spec.row_header_levels,
        )


# ---------------------------------------------------------------------------
# serialization


def serialize(table: Table, fmt: TableFormat) -> str:
    """Render a valid table as deterministic text in the given format."""
    if fmt is TableFormat.HTML:
        return _to_html(table)
    if fmt is TableFormat.MARKDOWN:
        return _to_markdown(table)
    if fmt is TableFormat.CSV:
        return _to_delimited(table, ",")
    if fmt is TableFormat.TSV:
        return _to_delimited(table, "\t")
    raise ValueError(f"unknown format {fmt!r}")


def convert(table: Table, to: TableFormat) -> str:
    """Re-serialize in another format; identical to serialize by design."""
    return serialize(table, to)


def _to_html(table: Table) -> str:
    anchors: dict[tuple[int, int], MergedRegion] = {
        (m.top_row, m.left_col): m for m in table.merged_regions
    }
    covered = {
        slot for m in table.merged_regions for slot in m.slots() if slot != (m.top_row, m.left_col)
    }

    def cell_html(r: int, c: int) -> str:
        tag = "th" if table.is_header_slot(r, c) else "td"
        attrs = ""
        region = anchors.get((r, c))
        if region is not None:
            if region.row_span > 1:
                attrs += f' rowspan="{region.row_span}"'
            if region.col_span > 1:
                attrs += f' colspan="{region.col_span}"'
        text = html.escape(table.cells[r][c].display_text)
        return f"<{tag}{attrs}>{text}</{tag}>"

    def row_html(r: int) -> str:
        parts = [cell_html(r, c) for c in range(table.n_cols) if (r, c) not in covered]
        return "<tr>" + "".join(parts) + "</tr>"

    head_rows = table.header_spec.column_header_levels
    lines = ["<table>"]
    if table.title:
        lines.append(f"<caption>{html.escape(table.title)}</caption>")
    if head_rows:
        lines.append("<thead>")
        lines.extend(row_html(r) for r in range(head_rows))
        lines.append("</thead>")
    lines.append("<tbody>")
    lines.extend(row_html(r) for r in range(head_rows, table.n_rows))
    lines.append("</tbody>")
    lines.append("</table>")
    return "\n".join(lines)


_MD_ESCAPES = [("\\", "\\\\"), ("|", "\\|"), ("\n", "\\n"), ("\r", "\\r")]


def _md_escape(text: str) -> str:
    for raw, escaped in _MD_ESCAPES:
        text = text.replace(raw, escaped)
    return text


def _md_unescape(text: str) -> str:
    out: list[str] = []
    i = 0
    while i < len(text):
        ch = text[i]
        if ch == "\\" and i + 1 < len(text):
            nxt = text[i + 1]
            mapped = {"\\": "\\", "|": "|", "n": "\n", "r": "\r"}.get(nxt)
            if mapped is not None:
                out.append(mapped)
                i += 2
                continue
        out.append(ch)
        i += 1
    return "".join(out)


def _to_markdown(table: Table) -> str:
    grid = table.display_grid()

    def fmt_row(row: list[str]) -> str:
        return "| " + " | ".join(_md_escape(cell) for cell in row) + " |"

    lines = [fmt_row(grid[0])]
    lines.append("| " + " | ".join("---" for _ in range(table.n_cols)) + " |")
    lines.extend(fmt_row(row) for row in grid[1:])
    return "\n".join(lines)


def _to_delimited(table: Table, delimiter: str) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, delimiter=delimiter, lineterminator="\n", quoting=csv.QUOTE_MINIMAL)
    for row in table.display_grid():
        writer.writerow(row)
    return buf.getvalue()


# ---------------------------------------------------------------------------
# parsing


def parse(text: str, fmt: TableFormat, hints: ParseHints | None = None) -> Table:
    """Parse wire text back into a Table.

    Tolerates surrounding prose: HTML input is reduced to its first
    <table> element, the flat formats to the first fenced code block (or
    for Markdown the first contiguous run of pipe rows).
    """
    hints = hints or ParseHints()
    if fmt is TableFormat.HTML:
        return _from_html(text, hints)
    if fmt is TableFormat.MARKDOWN:
        return _from_markdown(text, hints)
    if fmt is TableFormat.CSV:
        return _from_delimited(text, ",", hints)
    if fmt is TableFormat.TSV:
        return _from_delimited(text, "\t", hints)
    raise ValueError(f"unknown format {fmt!r}")


def sniff_format(text: str) -> TableFormat:
    """Best-effort format detection for table text of unknown provenance."""
    stripped = text.strip()
    if re.search(r"<table\b", stripped, flags=re.IGNORECASE):
        return TableFormat.HTML
    first_line = stripped.splitlines()[0] if stripped else ""
    if first_line.lstrip().startswith("|"):
        return TableFormat.MARKDOWN
    if "\t" in first_line:
        return TableFormat.TSV
    return TableFormat.CSV


_FENCE_RE = re.compile(r"```[A-Za-z0-9_-]*\n(.*?)\n?```", re.DOTALL)


def _fenced_or_whole(text: str) -> str:
    match = _FENCE_RE.search(text)
    return match.group(1) if match else text


def _resolve_structure(
    hints: ParseHints, fallback: tuple[TableType, HeaderSpec] | None = None
) -> tuple[TableType, HeaderSpec]:
    col = hints.column_header_levels
    row = hints.row_header_levels
    if hints.table_type is not None:
        if col is None or row is None:
            canonical = {
                TableType.FLAT: (1, 0),
                TableType.HORIZONTAL: (0, 1),
                TableType.HIERARCHICAL: (1, 1),
            }[hints.table_type]
            col = canonical[0] if col is None else col
            row = canonical[1] if row is None else row
        return hints.table_type, HeaderSpec(col, row)
    if col is not None and row is not None:
        for table_type, combos in ALLOWED_LEVELS.items():
            if (col, row) in combos:
                return table_type, HeaderSpec(col, row)
        raise MalformedMarkup(f"header levels ({col}, {row}) match no table type")
    if fallback is not None:
        return fallback
    return TableType.FLAT, HeaderSpec(1, 0)


def _build_table(
    grid_texts: list[list[str]],
    merges: list[MergedRegion],
    table_type: TableType,
    spec: HeaderSpec,
    hints: ParseHints,
    title: str | None = None,
) -> Table:
    n_rows = len(grid_texts)
    n_cols = len(grid_texts[0]) if grid_texts else 0
    cells = tuple(tuple(Cell(raw_text=t) for t in row) for row in grid_texts)
    return Table(
        id=hints.table_id or "",
        title=title if title is not None else (hints.title or ""),
        topic=hints.topic or "",
        subtopic=hints.subtopic or "",
        table_type=table_type,
        header_spec=spec,
        n_rows=n_rows,
        n_cols=n_cols,
        cells=cells,
        merged_regions=tuple(merges),
    )


class _TableHtmlParser(HTMLParser):
    """Collects rows of (text, is_th, rowspan, colspan) from one <table>."""

    def __init__(self) -> None:
        super().__init__()
        self.rows: list[dict] = []
        self.caption: str | None = None
        self._table_depth = 0
        self._in_caption = False
        self._in_thead = False
        self._row: dict | None = None
        self._cell: dict | None = None
        self.done = False

    def handle_starttag(self, tag: str, attrs: list[tuple[str, str | None]]) -> None:
        if self.done:
            return
        if tag == "table":
            self._table_depth += 1
            if self._table_depth > 1:
                raise MalformedMarkup("nested <table> elements are not supported")
            return
        if self._table_depth != 1:
            return
        if tag == "caption":
            self._in_caption = True
            self.caption = ""
        elif tag == "thead":
            self._in_thead = True
        elif tag == "tr":
            self._row = {"header_row": self._in_thead, "cells": []}
        elif tag in ("th", "td"):
            if self._row is None:
                raise MalformedMarkup(f"<{tag}> outside a table row")
            attr_map = dict(attrs)
            self._cell = {
                "is_th": tag == "th",
                "rowspan": _span_attr(attr_map.get("rowspan")),
                "colspan": _span_attr(attr_map.get("colspan")),
                "texts": [],
            }

    def handle_endtag(self, tag: str) -> None:
        if self.done:
            return
        if tag == "table":
            self._table_depth -= 1
            if self._table_depth == 0:
                self.done = True
            return
        if self._table_depth != 1:
            return
        if tag == "caption":
            self._in_caption = False
        elif tag == "thead":
            self._in_thead = False
        elif tag in ("th", "td"):
            if self._cell is not None and self._row is not None:
                self._cell["text"] = "".join(self._cell.pop("texts"))
                self._row["cells"].append(self._cell)
                self._cell = None
        elif tag == "tr":
            if self._row is not None:
                self.rows.append(self._row)
                self._row = None

    def handle_data(self, data: str) -> None:
        if self.done or self._table_depth != 1:
            return
        if self._in_caption:
            self.caption = (self.caption or "") + data
        elif self._cell is not None:
            self._cell["texts"].append(data)


def _span_attr(value: str | None) -> int:
    if value is None:
        return 1
    try:
        span = int(value)
    except ValueError:
        raise MalformedMarkup(f"non-integer span attribute {value!r}") from None
    if span < 1:
        raise MalformedMarkup(f"span attribute must be positive, got {span}")
    return span


def _from_html(text: str, hints: ParseHints) -> Table:
    match = re.search(r"<table\b.*?</table>", text, flags=re.IGNORECASE | re.DOTALL)
    if not match:
        raise NoTableFound("no <table> element in input")
    parser = _TableHtmlParser()
    parser.feed(match.group(0))
    parser.close()
    if not parser.rows:
        raise MalformedMarkup("<table> contains no rows")

    # Expand rowspan/colspan into a dense occupancy grid.
    taken: dict[tuple[int, int], tuple[int, int]] = {}
    anchors: dict[tuple[int, int], dict] = {}
    merges: list[MergedRegion] = []
    n_rows = len(parser.rows)
    for r, row in enumerate(parser.rows):
        c = 0
        for cell in row["cells"]:
            while (r, c) in taken:
                c += 1
            rspan, cspan = cell["rowspan"], cell["colspan"]
            for dr in range(rspan):
                for dc in range(cspan):
                    pos = (r + dr, c + dc)
                    if pos in taken:
                        raise MalformedMarkup(f"overlapping spans at {pos}")
                    if pos[0] >= n_rows:
                        raise MalformedMarkup(f"rowspan extends past the last row at {pos}")
                    taken[pos] = (r, c)
            anchors[(r, c)] = cell
            if rspan * cspan >= 2:
                merges.append(MergedRegion(r, c, rspan, cspan))
            c += cspan

    n_cols = max((pos[1] for pos in taken), default=-1) + 1
    if n_cols <= 0:
        raise MalformedMarkup("table rows contain no cells")
    for r in range(n_rows):
        for c in range(n_cols):
            if (r, c) not in taken:
                raise RaggedRows(f"missing slot ({r}, {c})")

    grid_texts = [
        [anchors[taken[(r, c)]]["text"] for c in range(n_cols)] for r in range(n_rows)
    ]

    header_flags = [row["header_row"] for row in parser.rows]
    col_levels = 0
    while col_levels < n_rows and header_flags[col_levels]:
        col_levels += 1
    if any(header_flags[col_levels:]):
        raise MalformedMarkup("thead rows must be a prefix of the table")

    row_levels = 0
    body_rows = range(col_levels, n_rows)
    while row_levels < n_cols and body_rows and all(
        anchors[taken[(r, row_levels)]]["is_th"] for r in body_rows
    ):
        row_levels += 1

    combo = (col_levels, row_levels)
    inferred: tuple[TableType, HeaderSpec] | None = None
    for table_type, combos in ALLOWED_LEVELS.items():
        if combo in combos:
            inferred = (table_type, HeaderSpec(*combo))
            break
    if inferred is None:
        if hints.table_type is None and hints.column_header_levels is None:
            raise MalformedMarkup(f"header layout {combo} matches no table type")
        inferred = _resolve_structure(hints)

    table_type, spec = inferred
    title = parser.caption if parser.caption is not None else hints.title
    return _build_table(grid_texts, merges, table_type, spec, hints, title=title or "")


def _split_markdown_row(line: str) -> list[str]:
    if not line.startswith("|"):
        raise MalformedMarkup(f"table row must start with '|': {line!r}")
    cells: list[str] = []
    current: list[str] = []
    i = 1
    while i < len(line):
        ch = line[i]
        if ch == "\\" and i + 1 < len(line):
            current.append(ch)
            current.append(line[i + 1])
            i += 2
            continue
        if ch == "|":
            cells.append("".join(current))
            current = []
            i += 1
            continue
        current.append(ch)
        i += 1
    if current:
        raise MalformedMarkup(f"table row must end with an unescaped '|': {line!r}")
    return [_md_unescape(cell.strip(" \t")) for cell in cells]


_SEPARATOR_CELL_RE = re.compile(r"^:?-+:?$")


def _from_markdown(text: str, hints: ParseHints) -> Table:
    candidate = _fenced_or_whole(text)
    lines = [line.strip() for line in candidate.splitlines()]
    block: list[str] = []
    for line in lines:
        if line.startswith("|"):
            block.append(line)
        elif block:
            break
    if not block:
        raise NoTableFound("no pipe-table rows in input")
    if len(block) < 2:
        raise MalformedMarkup("pipe table needs a separator row")

    rows = [_split_markdown_row(line) for line in block]
    separator = rows[1]
    if not all(_SEPARATOR_CELL_RE.match(cell.strip()) for cell in separator):
        raise MalformedMarkup("second row must be the dash separator")

    grid_texts = [rows[0]] + rows[2:]
    widths = {len(row) for row in grid_texts}
    if len(widths) != 1:
        raise RaggedRows(f"row widths differ: {sorted(widths)}")
    if len(separator) != len(rows[0]):
        raise RaggedRows("separator width differs from header row")

    table_type, spec = _resolve_structure(hints)
    return _build_table(grid_texts, [], table_type, spec, hints)


def _from_delimited(text: str, delimiter: str, hints: ParseHints) -> Table:
    candidate = _fenced_or_whole(text).strip("\n")
    if not candidate.strip():
        raise NoTableFound("empty input")
    reader = csv.reader(io.StringIO(candidate), delimiter=delimiter)
    grid_texts = [row for row in reader]
    if not grid_texts:
        raise NoTableFound("no rows in input")
    widths = {len(row) for row in grid_texts}
    if len(widths) != 1:
        raise RaggedRows(f"row widths differ: {sorted(widths)}")

    table_type, spec = _resolve_structure(hints)
    return _build_table(grid_texts, [], table_type, spec, hints)
