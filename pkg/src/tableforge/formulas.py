"""Cell-relation formula language: parsing, ordering, and evaluation.

Formulas start with "=" and may use 1-based cell refs R<i>C<j>, ranges
R<i>C<j>:R<k>C<l> inside aggregates, the four arithmetic operators with
standard precedence, parentheses, and SUM/AVG/MIN/MAX. Evaluation walks
the dependency graph in topological order and writes rendered values
into resolved_text, reading every operand back from cell text so the
result is independent of evaluation order.
"""

from __future__ import annotations

import logging
import re
from dataclasses import dataclass, replace
from typing import Callable, Iterator

from .table_model import Cell, Table

logger = logging.getLogger(__name__)


class FormulaError(Exception):
    """Base class for formula parsing and evaluation failures."""


class FormulaSyntaxError(FormulaError):
    """Formula text violates the grammar."""


class BadRef(FormulaError):
    """Reference is 0-based, inverted, or outside the owning table."""


class CyclicFormula(FormulaError):
    """Formula cells form a reference cycle; the table is rejected."""


class NonNumericOperand(FormulaError):
    """A referenced cell does not hold a parseable number."""


class DivideByZero(FormulaError):
    """Formula divides by a zero-valued operand."""


# -- AST --------------------------------------------------------------------


@dataclass(frozen=True)
class Num:
    value: float


@dataclass(frozen=True)
class Ref:
    """1-based grid reference, exactly as written."""

    row: int
    col: int


@dataclass(frozen=True)
class RangeRef:
    start: Ref
    end: Ref


@dataclass(frozen=True)
class Unary:
    op: str
    operand: object


@dataclass(frozen=True)
class Binary:
    op: str
    left: object
    right: object


@dataclass(frozen=True)
class Call:
    fn: str
    args: tuple


@dataclass(frozen=True)
class Formula:
    source: str
    ast: object


AGGREGATES = ("SUM", "AVG", "MIN", "MAX")

_TOKEN_RE = re.compile(
    r"\s*(?:(?P<ref>R(?P<row>\d+)C(?P<col>\d+))"
    r"|(?P<number>\d+\.\d+|\d+|\.\d+)"
    r"|(?P<name>[A-Za-z]+)"
    r"|(?P<op>[-+*/(),:]))"
)


def _tokenize(body: str) -> list[tuple[str, object]]:
    tokens: list[tuple[str, object]] = []
    pos = 0
    while pos < len(body):
        match = _TOKEN_RE.match(body, pos)
        if not match or match.end() == pos:
            raise FormulaSyntaxError(f"unexpected character at {pos}: {body[pos:pos + 8]!r}")
        if match.group("ref"):
            row, col = int(match.group("row")), int(match.group("col"))
            if row < 1 or col < 1:
                raise BadRef(f"refs are 1-based: {match.group('ref')}")
            tokens.append(("ref", Ref(row, col)))
        elif match.group("number"):
            tokens.append(("number", float(match.group("number"))))
        elif match.group("name"):
            tokens.append(("name", match.group("name").upper()))
        else:
            tokens.append((match.group("op"), match.group("op")))
        pos = match.end()
    tokens.append(("eof", None))
    return tokens


class _Parser:
    def __init__(self, tokens: list[tuple[str, object]]):
        self.tokens = tokens
        self.pos = 0

    def peek(self) -> tuple[str, object]:
        return self.tokens[self.pos]

    def take(self, kind: str | None = None) -> tuple[str, object]:
        token = self.tokens[self.pos]
        if kind is not None and token[0] != kind:
            raise FormulaSyntaxError(f"expected {kind!r}, found {token[0]!r}")
        self.pos += 1
        return token

    def expr(self) -> object:
        node = self.term()
        while self.peek()[0] in ("+", "-"):
            op = self.take()[0]
            node = Binary(op, node, self.term())
        return node

    def term(self) -> object:
        node = self.unary()
        while self.peek()[0] in ("*", "/"):
            op = self.take()[0]
            node = Binary(op, node, self.unary())
        return node

    def unary(self) -> object:
        if self.peek()[0] == "-":
            self.take()
            return Unary("-", self.unary())
        return self.primary()

    def primary(self) -> object:
        kind, value = self.peek()
        if kind == "number":
            self.take()
            return Num(value)  # type: ignore[arg-type]
        if kind == "ref":
            self.take()
            if self.peek()[0] == ":":
                raise FormulaSyntaxError("ranges are only allowed inside SUM/AVG/MIN/MAX")
            return value
        if kind == "(":
            self.take()
            node = self.expr()
            self.take(")")
            return node
        if kind == "name":
            name = self.take()[1]
            if name not in AGGREGATES:
                raise FormulaSyntaxError(f"unknown function {name}")
            self.take("(")
            args = [self.argument()]
            while self.peek()[0] == ",":
                self.take()
                args.append(self.argument())
            self.take(")")
            return Call(name, tuple(args))  # type: ignore[arg-type]
        raise FormulaSyntaxError(f"unexpected token {kind!r}")

    def argument(self) -> object:
        # A range is legal only directly as an aggregate argument.
        if self.peek()[0] == "ref" and self.tokens[self.pos + 1][0] == ":":
            start = self.take()[1]
            self.take(":")
            end = self.take("ref")[1]
            if end.row < start.row or end.col < start.col:  # type: ignore[union-attr]
                raise BadRef(f"inverted range R{start.row}C{start.col}:R{end.row}C{end.col}")  # type: ignore[union-attr]
            return RangeRef(start, end)  # type: ignore[arg-type]
        return self.expr()


def parse_formula(text: str) -> Formula:
    """Parse "=..." text into an AST; refs are validated as 1-based."""
    if not text.startswith("="):
        raise FormulaSyntaxError("formulas must start with '='")
    parser = _Parser(_tokenize(text[1:]))
    ast = parser.expr()
    parser.take("eof")
    return Formula(source=text, ast=ast)


# -- numbers ------------------------------------------------------------------

_NUMBER_TEXT_RE = re.compile(
    r"^\s*(?P<sign>[+-])?\s*(?P<currency>[$€£¥])?\s*"
    r"(?P<digits>[0-9][0-9,]*(\.[0-9]*)?|\.[0-9]+)\s*(?P<pct>%)?\s*$"
)


def to_number(text: str) -> float:
    """Parse cell text as a number, tolerating ",", currency marks, "%"."""
    match = _NUMBER_TEXT_RE.match(text)
    if not match:
        raise NonNumericOperand(f"not a number: {text!r}")
    digits = match.group("digits").replace(",", "")
    if digits in ("", "."):
        raise NonNumericOperand(f"not a number: {text!r}")
    value = float(digits)
    if match.group("sign") == "-":
        value = -value
    if match.group("pct"):
        value /= 100.0
    return value


def render_number(value: float) -> str:
    """Format with up to 2 decimals, trailing zeros trimmed, integers bare."""
    if value != value or value in (float("inf"), float("-inf")):
        raise NonNumericOperand("formula produced a non-finite value")
    text = f"{value:.2f}"
    if "." in text:
        text = text.rstrip("0").rstrip(".")
    if text in ("-0", ""):
        text = "0"
    return text


# -- dependency graph ---------------------------------------------------------

Coord = tuple[int, int]


@dataclass(frozen=True)
class DependencyGraph:
    """Formula cells and their formula-to-formula reference edges."""

    nodes: tuple[Coord, ...]
    edges: tuple[tuple[Coord, Coord], ...]

    def topological_order(self) -> list[Coord]:
        """Dependees-first order; deterministic; raises on cycles."""
        incoming: dict[Coord, set[Coord]] = {node: set() for node in self.nodes}
        dependents: dict[Coord, set[Coord]] = {node: set() for node in self.nodes}
        for dependent, dependee in self.edges:
            incoming[dependent].add(dependee)
            dependents[dependee].add(dependent)
        ready = sorted(node for node, deps in incoming.items() if not deps)
        order: list[Coord] = []
        while ready:
            node = ready.pop(0)
            order.append(node)
            for follower in sorted(dependents[node]):
                incoming[follower].discard(node)
                if not incoming[follower]:
                    ready.append(follower)
            ready.sort()
        if len(order) != len(self.nodes):
            stuck = sorted(set(self.nodes) - set(order))
            raise CyclicFormula(f"cycle among formula cells {stuck}")
        return order


def _iter_refs(ast: object) -> Iterator[Ref | RangeRef]:
    if isinstance(ast, (Ref, RangeRef)):
        yield ast
    elif isinstance(ast, Unary):
        yield from _iter_refs(ast.operand)
    elif isinstance(ast, Binary):
        yield from _iter_refs(ast.left)
        yield from _iter_refs(ast.right)
    elif isinstance(ast, Call):
        for arg in ast.args:
            yield from _iter_refs(arg)


def _expand_coords(ast: object) -> Iterator[Coord]:
    """All referenced 0-based coordinates, ranges expanded slot by slot."""
    for ref in _iter_refs(ast):
        if isinstance(ref, Ref):
            yield (ref.row - 1, ref.col - 1)
        else:
            for r in range(ref.start.row - 1, ref.end.row):
                for c in range(ref.start.col - 1, ref.end.col):
                    yield (r, c)


def _anchor_coord(table: Table, coord: Coord) -> Coord:
    region = table.covering_merge(*coord)
    if region is not None:
        return (region.top_row, region.left_col)
    return coord


def _anchor_slots(table: Table) -> Iterator[Coord]:
    """Grid slots that own their cell (merge anchors and unmerged slots)."""
    for r in range(table.n_rows):
        for c in range(table.n_cols):
            if _anchor_coord(table, (r, c)) == (r, c):
                yield (r, c)


def _parse_table_formulas(table: Table) -> dict[Coord, Formula]:
    formulas: dict[Coord, Formula] = {}
    for r, c in _anchor_slots(table):
        if table.cells[r][c].is_formula:
            formulas[(r, c)] = parse_formula(table.cells[r][c].raw_text)
    for coord, formula in formulas.items():
        for r, c in _expand_coords(formula.ast):
            if not table.in_bounds(r, c):
                raise BadRef(
                    f"formula at {coord} references R{r + 1}C{c + 1} outside the {table.n_rows}x{table.n_cols} grid"
                )
    return formulas


def dependencies(table: Table) -> DependencyGraph:
    """Graph over formula cells; edges point dependent -> dependee."""
    formulas = _parse_table_formulas(table)
    nodes = tuple(sorted(formulas))
    edges: list[tuple[Coord, Coord]] = []
    for coord, formula in formulas.items():
        seen: set[Coord] = set()
        for raw in _expand_coords(formula.ast):
            dep = _anchor_coord(table, raw)
            if dep in formulas and dep not in seen:
                seen.add(dep)
                if dep == coord:
                    raise CyclicFormula(f"formula at {coord} references itself")
                edges.append((coord, dep))
    return DependencyGraph(nodes=nodes, edges=tuple(sorted(edges)))


def evaluate_formula(ast: object, resolve: Callable[[int, int], float]) -> float:
    """Evaluate one AST; `resolve` maps 0-based coords to numbers."""
    if isinstance(ast, Num):
        return ast.value
    if isinstance(ast, Ref):
        return resolve(ast.row - 1, ast.col - 1)
    if isinstance(ast, Unary):
        return -evaluate_formula(ast.operand, resolve)
    if isinstance(ast, Binary):
        left = evaluate_formula(ast.left, resolve)
        right = evaluate_formula(ast.right, resolve)
        if ast.op == "+":
            return left + right
        if ast.op == "-":
            return left - right
        if ast.op == "*":
            return left * right
        if right == 0.0:
            raise DivideByZero(f"division by zero in {ast}")
        return left / right
    if isinstance(ast, Call):
        values: list[float] = []
        for arg in ast.args:
            if isinstance(arg, RangeRef):
                for r in range(arg.start.row - 1, arg.end.row):
                    for c in range(arg.start.col - 1, arg.end.col):
                        values.append(resolve(r, c))
            else:
                values.append(evaluate_formula(arg, resolve))
        if ast.fn == "SUM":
            return sum(values)
        if ast.fn == "AVG":
            return sum(values) / len(values)
        if ast.fn == "MIN":
            return min(values)
        return max(values)
    raise FormulaSyntaxError(f"unknown AST node {ast!r}")


def evaluate_table(table: Table) -> Table:
    """Resolve every formula cell; returns a new table, input untouched."""
    formulas = _parse_table_formulas(table)
    if not formulas:
        return table
    order = dependencies(table).topological_order()

    working: list[list[Cell]] = [list(row) for row in table.cells]

    def resolve(r: int, c: int) -> float:
        ar, ac = _anchor_coord(table, (r, c))
        cell = working[ar][ac]
        text = cell.resolved_text if cell.resolved_text is not None else cell.raw_text
        if text.startswith("="):
            # Unreachable when called in topological order.
            raise CyclicFormula(f"operand at ({ar}, {ac}) is unresolved")
        try:
            return to_number(text)
        except NonNumericOperand:
            raise NonNumericOperand(f"cell ({ar}, {ac}) is not numeric: {text!r}") from None

    for coord in order:
        value = evaluate_formula(formulas[coord].ast, resolve)
        r, c = coord
        working[r][c] = replace(working[r][c], resolved_text=render_number(value))

    # Re-mirror merges so covered slots carry the anchor's resolved cell.
    for region in table.merged_regions:
        anchor = working[region.top_row][region.left_col]
        for r, c in region.slots():
            working[r][c] = anchor

    return table.with_cells(tuple(tuple(row) for row in working))
