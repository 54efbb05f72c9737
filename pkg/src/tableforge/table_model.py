"""Canonical in-memory table representation with validity checking.

A table is a rectangular grid of cells plus metadata: a type (flat,
horizontal, hierarchical), header depths for the top band and the left
band, and a list of merged regions. Covered slots physically store a
mirror of their anchor's text so flat serializers need no special cases.
"""

from __future__ import annotations

import hashlib
import logging
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Iterator

logger = logging.getLogger(__name__)


class TableType(str, Enum):
    FLAT = "flat"
    HORIZONTAL = "horizontal"
    HIERARCHICAL = "hierarchical"


class CellKind(str, Enum):
    LITERAL = "literal"
    FORMULA = "formula"


class OutOfBounds(Exception):
    """Cell coordinate outside the table grid."""


class DegenerateTable(Exception):
    """Headers consume every row or every column."""


# Header-level combinations each table type allows.
ALLOWED_LEVELS: dict[TableType, set[tuple[int, int]]] = {
    TableType.FLAT: {(1, 0)},
    TableType.HORIZONTAL: {(0, 1)},
    TableType.HIERARCHICAL: {(c, r) for c in (1, 2, 3) for r in (1, 2)},
}


@dataclass(frozen=True)
class HeaderSpec:
    """Header band depths: rows from the top, columns from the left."""

    column_header_levels: int
    row_header_levels: int

    def __post_init__(self) -> None:
        if self.column_header_levels < 0 or self.row_header_levels < 0:
            raise ValueError("header levels must be non-negative")

    def allows(self, table_type: TableType) -> bool:
        return (self.column_header_levels, self.row_header_levels) in ALLOWED_LEVELS[table_type]


@dataclass(frozen=True)
class SizeLimits:
    """Configurable grid-size bounds; defaults match the observed data range."""

    min_rows: int = 4
    max_rows: int = 43
    min_cols: int = 4
    max_cols: int = 45


DEFAULT_LIMITS = SizeLimits()


@dataclass(frozen=True)
class Cell:
    """One grid slot. Formula cells start with "=" and resolve later."""

    raw_text: str
    resolved_text: str | None = None

    @property
    def kind(self) -> CellKind:
        return CellKind.FORMULA if self.raw_text.startswith("=") else CellKind.LITERAL

    @property
    def is_formula(self) -> bool:
        return self.kind is CellKind.FORMULA

    @property
    def display_text(self) -> str:
        """Text a serializer should emit: the resolved value once present."""
        return self.resolved_text if self.resolved_text is not None else self.raw_text


@dataclass(frozen=True)
class MergedRegion:
    """Axis-aligned merged block; spans at least two slots."""

    top_row: int
    left_col: int
    row_span: int
    col_span: int

    def __post_init__(self) -> None:
        if self.top_row < 0 or self.left_col < 0:
            raise ValueError("merge anchor must be non-negative")
        if self.row_span < 1 or self.col_span < 1:
            raise ValueError("merge spans must be at least 1")
        if self.row_span * self.col_span < 2:
            raise ValueError("a 1x1 region is not a merge")

    @property
    def bottom_row(self) -> int:
        return self.top_row + self.row_span - 1

    @property
    def right_col(self) -> int:
        return self.left_col + self.col_span - 1

    def covers(self, r: int, c: int) -> bool:
        return self.top_row <= r <= self.bottom_row and self.left_col <= c <= self.right_col

    def slots(self) -> Iterator[tuple[int, int]]:
        for r in range(self.top_row, self.top_row + self.row_span):
            for c in range(self.left_col, self.left_col + self.col_span):
                yield (r, c)

    def overlaps(self, other: MergedRegion) -> bool:
        return not (
            self.bottom_row < other.top_row
            or other.bottom_row < self.top_row
            or self.right_col < other.left_col
            or other.right_col < self.left_col
        )

    def to_list(self) -> list[int]:
        return [self.top_row, self.left_col, self.row_span, self.col_span]

    @classmethod
    def from_list(cls, items: list[int]) -> MergedRegion:
        top, left, rspan, cspan = items
        return cls(top, left, rspan, cspan)


@dataclass(frozen=True)
class Violation:
    code: str
    detail: str = ""


@dataclass(frozen=True)
class ValidationReport:
    violations: tuple[Violation, ...] = ()

    @property
    def ok(self) -> bool:
        return not self.violations

    @property
    def codes(self) -> list[str]:
        return [v.code for v in self.violations]


@dataclass(frozen=True)
class DataRegion:
    """Rectangle of non-header slots."""

    top: int
    left: int
    n_rows: int
    n_cols: int

    def rows(self) -> range:
        return range(self.top, self.top + self.n_rows)

    def cols(self) -> range:
        return range(self.left, self.left + self.n_cols)


@dataclass(frozen=True)
class Table:
    """Immutable table value; share freely between workers.

    ``cells`` is row-major and must stay rectangular. Construction only
    normalizes containers; semantic checks live in :func:`validate` so
    violations can be reported as data rather than raised piecemeal.
    """

    id: str
    title: str
    topic: str
    subtopic: str
    table_type: TableType
    header_spec: HeaderSpec
    n_rows: int
    n_cols: int
    cells: tuple[tuple[Cell, ...], ...]
    merged_regions: tuple[MergedRegion, ...] = field(default_factory=tuple)

    def __post_init__(self) -> None:
        object.__setattr__(self, "cells", tuple(tuple(row) for row in self.cells))
        # Canonical merge order keeps serialized output stable across runs.
        object.__setattr__(
            self,
            "merged_regions",
            tuple(sorted(self.merged_regions, key=lambda m: (m.top_row, m.left_col))),
        )

    # -- structure queries ------------------------------------------------

    def in_bounds(self, r: int, c: int) -> bool:
        return 0 <= r < self.n_rows and 0 <= c < self.n_cols

    def covering_merge(self, r: int, c: int) -> MergedRegion | None:
        for region in self.merged_regions:
            if region.covers(r, c):
                return region
        return None

    def cell_at(self, r: int, c: int) -> Cell:
        """Cell at (r, c); covered slots resolve to their anchor's cell."""
        if not self.in_bounds(r, c):
            raise OutOfBounds(f"({r}, {c}) outside {self.n_rows}x{self.n_cols} grid")
        region = self.covering_merge(r, c)
        if region is not None:
            return self.cells[region.top_row][region.left_col]
        return self.cells[r][c]

    def is_header_slot(self, r: int, c: int) -> bool:
        return r < self.header_spec.column_header_levels or c < self.header_spec.row_header_levels

    def zone_of(self, r: int, c: int) -> str:
        """One of "column-header", "row-header", "data" for an in-bounds slot."""
        if r < self.header_spec.column_header_levels:
            return "column-header"
        if c < self.header_spec.row_header_levels:
            return "row-header"
        return "data"

    def data_region(self) -> DataRegion:
        top = self.header_spec.column_header_levels
        left = self.header_spec.row_header_levels
        if top >= self.n_rows or left >= self.n_cols:
            raise DegenerateTable(
                f"headers ({top} rows, {left} cols) consume the {self.n_rows}x{self.n_cols} grid"
            )
        return DataRegion(top=top, left=left, n_rows=self.n_rows - top, n_cols=self.n_cols - left)

    def display_grid(self) -> list[list[str]]:
        """Expanded n_rows x n_cols grid of display texts."""
        return [[self.cells[r][c].display_text for c in range(self.n_cols)] for r in range(self.n_rows)]

    # -- derived rebuilds --------------------------------------------------

    def with_cells(self, cells: tuple[tuple[Cell, ...], ...]) -> Table:
        return replace(self, cells=cells)

    def with_id(self, new_id: str) -> Table:
        return replace(self, id=new_id)

    # -- wire form ---------------------------------------------------------

    def to_record(self) -> dict:
        """JSON-safe dict matching the on-disk JSONL schema."""
        cell_objs = []
        for row in self.cells:
            for cell in row:
                obj: dict = {"text": cell.raw_text, "kind": cell.kind.value}
                if cell.resolved_text is not None:
                    obj["resolved"] = cell.resolved_text
                cell_objs.append(obj)
        return {
            "id": self.id,
            "title": self.title,
            "topic": self.topic,
            "subtopic": self.subtopic,
            "table_type": self.table_type.value,
            "col_header_levels": self.header_spec.column_header_levels,
            "row_header_levels": self.header_spec.row_header_levels,
            "n_rows": self.n_rows,
            "n_cols": self.n_cols,
            "cells": cell_objs,
            "merges": [m.to_list() for m in self.merged_regions],
        }

    @classmethod
    def from_record(cls, record: dict) -> Table:
        n_rows = record["n_rows"]
        n_cols = record["n_cols"]
        flat = record["cells"]
        if len(flat) != n_rows * n_cols:
            raise ValueError(f"expected {n_rows * n_cols} cells, record has {len(flat)}")
        grid = []
        for r in range(n_rows):
            row = []
            for c in range(n_cols):
                obj = flat[r * n_cols + c]
                cell = Cell(raw_text=obj["text"], resolved_text=obj.get("resolved"))
                if cell.kind.value != obj["kind"]:
                    raise ValueError(f"cell kind mismatch at ({r}, {c}): {obj}")
                row.append(cell)
            grid.append(tuple(row))
        return cls(
            id=record["id"],
            title=record["title"],
            topic=record["topic"],
            subtopic=record["subtopic"],
            table_type=TableType(record["table_type"]),
            header_spec=HeaderSpec(record["col_header_levels"], record["row_header_levels"]),
            n_rows=n_rows,
            n_cols=n_cols,
            cells=tuple(grid),
            merged_regions=tuple(MergedRegion.from_list(m) for m in record["merges"]),
        )


def validate(table: Table, limits: SizeLimits = DEFAULT_LIMITS) -> ValidationReport:
    """Check every structural invariant; violations come back as data."""
    found: list[Violation] = []

    if len(table.cells) != table.n_rows:
        found.append(Violation("RaggedRow", f"{len(table.cells)} rows stored, n_rows={table.n_rows}"))
    for r, row in enumerate(table.cells):
        if len(row) != table.n_cols:
            found.append(Violation("RaggedRow", f"row {r} has {len(row)} cells, n_cols={table.n_cols}"))

    if table.n_rows < limits.min_rows:
        found.append(Violation("TooFewRows", f"{table.n_rows} < {limits.min_rows}"))
    if table.n_cols < limits.min_cols:
        found.append(Violation("TooFewCols", f"{table.n_cols} < {limits.min_cols}"))
    if table.n_rows > limits.max_rows:
        found.append(Violation("TooManyRows", f"{table.n_rows} > {limits.max_rows}"))
    if table.n_cols > limits.max_cols:
        found.append(Violation("TooManyCols", f"{table.n_cols} > {limits.max_cols}"))

    spec = table.header_spec
    if not spec.allows(table.table_type):
        found.append(
            Violation(
                "BadHeaderSpec",
                f"{table.table_type.value} with col={spec.column_header_levels} row={spec.row_header_levels}",
            )
        )
    if spec.column_header_levels >= table.n_rows or spec.row_header_levels >= table.n_cols:
        found.append(Violation("HeaderConsumesGrid", ""))

    # Merge checks need an intact grid to inspect; skip them when ragged.
    ragged = any(v.code == "RaggedRow" for v in found)

    for i, region in enumerate(table.merged_regions):
        if region.bottom_row >= table.n_rows or region.right_col >= table.n_cols:
            found.append(Violation("MergeOutOfBounds", f"{region.to_list()}"))
            continue
        for other in table.merged_regions[i + 1 :]:
            if region.overlaps(other):
                found.append(Violation("OverlappingMerge", f"{region.to_list()} and {other.to_list()}"))
        zones = {table.zone_of(r, c) for r, c in region.slots()}
        if len(zones) > 1:
            found.append(Violation("MergeCrossesZones", f"{region.to_list()} spans {sorted(zones)}"))
        if not ragged:
            anchor = table.cells[region.top_row][region.left_col]
            for r, c in region.slots():
                if table.cells[r][c].raw_text != anchor.raw_text:
                    found.append(Violation("MirrorMismatch", f"slot ({r}, {c}) in {region.to_list()}"))

    if not ragged:
        for r in range(table.n_rows):
            for c in range(table.n_cols):
                if table.cells[r][c].raw_text == "" and table.covering_merge(r, c) is None:
                    found.append(Violation("EmptyCell", f"({r}, {c})"))

    return ValidationReport(tuple(found))


def mirror_merges(grid: list[list[Cell]], merges: list[MergedRegion]) -> list[list[Cell]]:
    """Copy each merge anchor's cell into every slot the region covers."""
    for region in merges:
        anchor = grid[region.top_row][region.left_col]
        for r, c in region.slots():
            grid[r][c] = anchor
    return grid


def make_table_id(seq: int, title: str, cells: tuple[tuple[Cell, ...], ...], merges: tuple[MergedRegion, ...]) -> str:
    """Run-scoped counter plus a content hash; stable across resume."""
    digest = hashlib.sha256()
    digest.update(title.encode("utf-8"))
    for row in cells:
        for cell in row:
            digest.update(b"\x1f")
            digest.update(cell.raw_text.encode("utf-8"))
        digest.update(b"\x1e")
    for merge in sorted(merges, key=lambda m: (m.top_row, m.left_col)):
        digest.update(",".join(str(x) for x in merge.to_list()).encode("ascii"))
        digest.update(b"\x1d")
    return f"t{seq:05d}-{digest.hexdigest()[:12]}"
