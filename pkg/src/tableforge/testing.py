"""Deterministic offline model stand-ins and table generators.

Everything here is a pure function of the request plus an explicit seed, so
demo runs and tests reproduce byte for byte. The handlers understand the
machine-readable first lines of the shipped prompt templates (``REQUEST:``,
``Attributes:``, ``Task:``, ``Strategy:`` and so on) and honor the same
output contracts a real model is asked to follow.
"""

from __future__ import annotations

import json
import random
import re
import threading
from typing import Callable, Sequence

from .backend import ChatRequest, LlmRole, ProviderError, ScriptedBackend, fingerprint
from .evolution import apply_permutation, data_permutations
from .formats import TableFormat, parse, serialize, sniff_format
from .prompts import extract_table_block
from .table_model import (
    Cell,
    HeaderSpec,
    MergedRegion,
    SizeLimits,
    Table,
    TableType,
    make_table_id,
    mirror_merges,
    validate,
)

_TOPIC_BANK = [
    "Renewable Energy", "Urban Transit", "Retail Commerce", "Public Health",
    "Higher Education", "Freight Logistics", "Consumer Electronics",
    "Agriculture", "Coastal Tourism", "Regional Banking",
]
_SUBTOPIC_BANK = [
    "Regional Programs", "Quarterly Performance", "Vendor Comparison",
    "Annual Budgets", "Staffing Levels", "Market Share", "Capacity Planning",
]
_HEADER_BANK = ["Region", "Segment", "Quarter", "Channel", "Category", "Unit", "Metric"]
_ROW_BANK = ["North", "South", "East", "West", "Central", "Coastal", "Inland", "Metro"]


def _request_rng(req: ChatRequest, master_seed: int) -> random.Random:
    # Seeded from the request fingerprint: same request, same reply, in any
    # process; a different sampling_seed reshuffles everything.
    return random.Random(f"{master_seed}:{fingerprint(req)}")


def _line_after(user: str, prefix: str) -> str | None:
    match = re.search(rf"^{re.escape(prefix)}(.*)$", user, re.MULTILINE)
    return match.group(1).strip() if match else None


# ---------------------------------------------------------------------------
# table generation


def build_demo_table(
    rng: random.Random,
    table_type: TableType,
    n_rows: int,
    n_cols: int,
    spec: HeaderSpec,
    title: str = "Demo Table",
    topic: str = "",
    subtopic: str = "",
    with_merges: bool = True,
    with_formulas: bool = False,
    nasty_text: bool = False,
    seq: int = 0,
) -> Table:
    """A valid table of the requested shape with plausible content."""
    col_levels, row_levels = spec.column_header_levels, spec.row_header_levels
    offset = rng.randint(0, 6)

    def text_for(r: int, c: int) -> str:
        if r < col_levels:
            return f"{_HEADER_BANK[(r + c + offset) % len(_HEADER_BANK)]} {c + 1}"
        if c < row_levels:
            return f"{_ROW_BANK[(r + c + offset) % len(_ROW_BANK)]} {r + 1}"
        return str(((r * 31 + c * 17 + offset * 7) % 900) + 100)

    grid = [[Cell(raw_text=text_for(r, c)) for c in range(n_cols)] for r in range(n_rows)]

    if nasty_text:
        # Exercise escaping: a few data cells get delimiter-hostile content.
        hostile = ["a|b", "c\\d", "e,f", 'g"h', "i\nj", "k\\|m"]
        for _ in range(min(4, (n_rows - col_levels) * (n_cols - row_levels))):
            r = rng.randrange(col_levels, n_rows)
            c = rng.randrange(row_levels, n_cols)
            grid[r][c] = Cell(raw_text=rng.choice(hostile))

    merges: list[MergedRegion] = []
    if with_merges and table_type is TableType.HIERARCHICAL:
        if n_cols - row_levels >= 2:
            start = rng.randrange(row_levels, n_cols - 1)
            merges.append(MergedRegion(0, start, 1, 2))
        if col_levels >= 2 and n_cols - row_levels >= 3:
            candidates = [c for c in range(row_levels, n_cols - 1) if not any(
                m.covers(0, c) or m.covers(1, c) for m in merges
            )]
            if candidates:
                merges.append(MergedRegion(0, rng.choice(candidates), 2, 1))
        if row_levels >= 1 and n_rows - col_levels >= 2:
            r = rng.randrange(col_levels, n_rows - 1)
            merges.append(MergedRegion(r, 0, 2, 1))
        mirror_merges(grid, merges)

    if with_formulas and n_rows - col_levels >= 3 and n_cols - row_levels >= 1:
        # Sum of the column above, written against uncovered slots only.
        c = n_cols - 1
        covered = {s for m in merges for s in m.slots()}
        column_slots = [r for r in range(col_levels, n_rows) if (r, c) not in covered]
        if len(column_slots) >= 3:
            target = column_slots[-1]
            top, bottom = column_slots[0], column_slots[-2]
            grid[target][c] = Cell(raw_text=f"=SUM(R{top + 1}C{c + 1}:R{bottom + 1}C{c + 1})")

    cells = tuple(tuple(row) for row in grid)
    merge_tuple = tuple(merges)
    return Table(
        id=make_table_id(seq, title, cells, merge_tuple),
        title=title,
        topic=topic,
        subtopic=subtopic,
        table_type=table_type,
        header_spec=spec,
        n_rows=n_rows,
        n_cols=n_cols,
        cells=cells,
        merged_regions=merge_tuple,
    )


def random_table(
    rng: random.Random,
    table_type: TableType | None = None,
    min_rows: int = 4,
    max_rows: int = 8,
    min_cols: int = 4,
    max_cols: int = 7,
    with_merges: bool = True,
    with_formulas: bool = False,
    nasty_text: bool = False,
    seq: int = 0,
) -> Table:
    """Small random valid table for property tests; structure varies."""
    if table_type is None:
        table_type = rng.choice([TableType.FLAT, TableType.HORIZONTAL, TableType.HIERARCHICAL])
    n_rows = rng.randint(min_rows, max_rows)
    n_cols = rng.randint(min_cols, max_cols)
    if table_type is TableType.FLAT:
        spec = HeaderSpec(1, 0)
    elif table_type is TableType.HORIZONTAL:
        spec = HeaderSpec(0, 1)
    else:
        spec = HeaderSpec(rng.choice([1, 2, 3]), rng.choice([1, 2]))
    table = build_demo_table(
        rng,
        table_type,
        n_rows,
        n_cols,
        spec,
        title=f"Random Table {seq}",
        with_merges=with_merges,
        with_formulas=with_formulas,
        nasty_text=nasty_text,
        seq=seq,
    )
    report = validate(table)
    if not report.ok:  # pragma: no cover - generator bug guard
        raise AssertionError(f"random_table produced an invalid table: {report.codes}")
    return table


# ---------------------------------------------------------------------------
# teacher handler


_ATTR_RE = re.compile(
    r"Attributes: type=(\w+); rows=(\d+); cols=(\d+); col_header_levels=(\d+);"
    r" row_header_levels=(\d+); format=(\w+); formulas=(yes|no)"
)
_COUNTS_RE = re.compile(r"Counts: topics=(\d+) subtopics=(\d+) titles=(\d+)")

_STRATEGY_TWISTS = {
    "Add Constraints": "Only include rows where the last numeric column exceeds 200, and say how many rows qualify.",
    "Increase Depth": "For each value you report, explain in one clause why it is the correct cell to read.",
    "Add Reasoning Steps": "Show your work step by step: name the cells you read, then the comparison, then the conclusion.",
    "Add Task Number": "Complete these numbered demands as well: (1) restate the relevant cells, (2) verify the result against the column total, (3) state one caveat.",
    "Add Details": "Quote the exact header names of every column you use.",
    "Increase Length": "Answer in at least four full sentences.",
    "Add Context": "Assume you are preparing notes for an audit meeting; flag anything that looks inconsistent.",
    "New Instruction": "Instead, produce a short summary of what this table measures and its most extreme value.",
    "Similar Instruction": "Answer the analogous question about the second-largest value instead of the largest.",
}


def _topic_tree_reply(req: ChatRequest, rng: random.Random) -> str:
    match = _COUNTS_RE.search(req.user)
    if not match:
        raise ProviderError("topic-tree request without a Counts line")
    n_topics, n_subs, n_titles = (int(g) for g in match.groups())
    start = rng.randrange(len(_TOPIC_BANK))
    topics = []
    for i in range(n_topics):
        base = _TOPIC_BANK[(start + i) % len(_TOPIC_BANK)]
        name = base if i < len(_TOPIC_BANK) else f"{base} {i}"
        subtopics = []
        for j in range(n_subs):
            sub = _SUBTOPIC_BANK[(start + i + j) % len(_SUBTOPIC_BANK)]
            titles = [
                f"{sub} of {name}, {2015 + (start + t) % 10} (Series {t + 1})"
                for t in range(n_titles)
            ]
            subtopics.append({"name": sub, "titles": titles})
        topics.append({"topic": name, "subtopics": subtopics})
    return json.dumps({"topics": topics})


def _table_reply(req: ChatRequest, rng: random.Random) -> str:
    match = _ATTR_RE.search(req.user)
    if not match:
        raise ProviderError("table-synthesis request without an Attributes line")
    type_name, rows, cols, col_levels, row_levels, fmt_name, formulas = match.groups()
    title = _line_after(req.user, "Title:") or "Untitled"
    topic = _line_after(req.user, "Topic:") or ""
    subtopic = _line_after(req.user, "Subtopic:") or ""
    table = build_demo_table(
        rng,
        TableType(type_name),
        int(rows),
        int(cols),
        HeaderSpec(int(col_levels), int(row_levels)),
        title=title,
        topic=topic,
        subtopic=subtopic,
        with_formulas=formulas == "yes",
    )
    fmt = TableFormat.from_name(fmt_name)
    text = serialize(table, fmt)
    if fmt is TableFormat.HTML:
        return f"Here is the requested table.\n{text}"
    return f"Here is the requested table.\n```{fmt.value}\n{text}\n```"


def _parse_block(user: str) -> tuple[Table, TableFormat] | None:
    block = extract_table_block(user)
    if block is None:
        return None
    fmt = sniff_format(block)
    try:
        return parse(block, fmt), fmt
    except Exception:
        return None


def _seed_reply(req: ChatRequest, rng: random.Random) -> str:
    task = _line_after(req.user, "Task:") or "the task"
    title_match = re.search(r'Below is a table titled "(.*)"', req.user)
    title = title_match.group(1) if title_match else "the table"
    parsed = _parse_block(req.user)
    if parsed is None:
        raise ProviderError("seed-instruction request without a readable table")
    table, _ = parsed
    region = table.data_region()
    r = rng.choice(list(region.rows()))
    c = rng.choice(list(region.cols()))
    value = table.cells[r][c].display_text
    instruction = (
        f'Using the table "{title}", perform this task: {task.lower()}. '
        f"Pay attention to the entry in row {r + 1}, column {c + 1}."
    )
    response = (
        f"For {task.lower()} on \"{title}\": the entry at row {r + 1}, column {c + 1} "
        f"is {value!r}. Working from that cell and its row and column context, the "
        f"requested result follows directly from the table."
    )
    return json.dumps({"instruction": instruction, "response": response})


def _evolve_instruction_reply(req: ChatRequest) -> str:
    strategy = _line_after(req.user, "Strategy:") or ""
    instruction = (
        _line_after(req.user, "Original instruction:")
        or _line_after(req.user, "Example instruction:")
        or ""
    )
    if not instruction:
        raise ProviderError("evolution request without an instruction line")
    twist = _STRATEGY_TWISTS.get(strategy, f"Apply the idea of {strategy.lower()} to the request.")
    if strategy == "New Instruction" or strategy == "Similar Instruction":
        evolved = f'Regarding the same table: {twist}'
    else:
        evolved = f"{instruction} {twist}"
    return json.dumps({"instruction": evolved})


def _remove_or_duplicate_row(table: Table, limits: SizeLimits) -> Table | None:
    last = table.n_rows - 1
    data_rows = table.n_rows - table.header_spec.column_header_levels
    touches_last = any(m.bottom_row == last for m in table.merged_regions)
    if data_rows >= 2 and not touches_last and table.n_rows - 1 >= limits.min_rows:
        cells = table.cells[:last]
        return Table(
            id=table.id, title=table.title, topic=table.topic, subtopic=table.subtopic,
            table_type=table.table_type, header_spec=table.header_spec,
            n_rows=table.n_rows - 1, n_cols=table.n_cols,
            cells=cells, merged_regions=table.merged_regions,
        )
    if table.n_rows + 1 <= limits.max_rows:
        cells = table.cells + (table.cells[last],)
        return Table(
            id=table.id, title=table.title, topic=table.topic, subtopic=table.subtopic,
            table_type=table.table_type, header_spec=table.header_spec,
            n_rows=table.n_rows + 1, n_cols=table.n_cols,
            cells=cells, merged_regions=table.merged_regions,
        )
    return None


def _edit_uncovered(table: Table, zone: str, edit: Callable[[str], str]) -> Table:
    covered = {s for m in table.merged_regions for s in m.slots()}
    for r in range(table.n_rows):
        for c in range(table.n_cols):
            if (r, c) in covered or table.zone_of(r, c) != zone:
                continue
            grid = [list(row) for row in table.cells]
            old = grid[r][c]
            grid[r][c] = Cell(raw_text=edit(old.display_text))
            return table.with_cells(tuple(tuple(row) for row in grid))
    return table


def _evolve_table_reply(req: ChatRequest, rng: random.Random) -> str:
    strategy = _line_after(req.user, "Strategy:") or ""
    fmt_name = _line_after(req.user, "Current format:") or "markdown"
    instruction = _line_after(req.user, "Instruction:") or ""
    fmt = TableFormat.from_name(fmt_name)
    block = extract_table_block(req.user)
    if block is None:
        raise ProviderError("table-generalization request without a table block")
    table = parse(block, fmt)
    new_fmt = fmt
    limits = SizeLimits()

    if strategy == "Change Format":
        new_fmt = rng.choice(sorted(f for f in TableFormat if f is not fmt))
    elif strategy == "Order Permutation":
        row_perm, col_perm = data_permutations(table, rng)
        if fmt is not TableFormat.HTML:
            # Lossy formats hide the real header columns; permute rows only.
            col_perm = list(range(table.n_cols))
        table = apply_permutation(table, row_perm, col_perm)
    elif strategy == "Modify Header":
        zone = "column-header" if table.header_spec.column_header_levels else "row-header"
        table = _edit_uncovered(table, zone, lambda t: f"{t} (rev)")
    elif strategy == "Insert/Remove Data":
        changed = _remove_or_duplicate_row(table, limits)
        if changed is None:
            table = _edit_uncovered(table, "data", lambda t: f"{t}*")
        else:
            table = changed
    else:  # Modify Data
        table = _edit_uncovered(table, "data", lambda t: f"{t} (updated)")

    adapted = f"{instruction} Note that the table has been transformed ({strategy.lower()})."
    return "Transformed as requested.\n" + json.dumps(
        {"instruction": adapted, "format": new_fmt.value, "table": serialize(table, new_fmt)}
    )


def _answer_reply(req: ChatRequest, rng: random.Random) -> str:
    instruction = _line_after(req.user, "Instruction:") or "the request"
    parsed = _parse_block(req.user)
    if parsed is None:
        return "The table could not be read, so no grounded answer is possible."
    table, _ = parsed
    try:
        region = table.data_region()
        r = rng.choice(list(region.rows()))
        c = rng.choice(list(region.cols()))
        value = table.cells[r][c].display_text
    except Exception:
        value = table.cells[0][0].display_text
        r = c = 0
    openers = ["Reading the table directly", "From the given table", "Per the table"]
    return (
        f"{openers[rng.randrange(len(openers))]}: addressing {instruction.rstrip('.')}, the relevant "
        f"entry at row {r + 1}, column {c + 1} is {value!r}, which settles the request."
    )


def _teacher_reply(req: ChatRequest, master_seed: int) -> str:
    rng = _request_rng(req, master_seed)
    first = req.user.split("\n", 1)[0].strip()
    if first == "REQUEST: topic-tree":
        return _topic_tree_reply(req, rng)
    if first == "REQUEST: table-synthesis":
        return _table_reply(req, rng)
    if first == "REQUEST: seed-instruction":
        return _seed_reply(req, rng)
    if first in ("REQUEST: evolve-instruction-complication", "REQUEST: evolve-instruction-generalization"):
        return _evolve_instruction_reply(req)
    if first == "REQUEST: evolve-table-generalization":
        return _evolve_table_reply(req, rng)
    if first == "REQUEST: answer-instruction":
        return _answer_reply(req, rng)
    raise ProviderError(f"demo teacher cannot script {first!r}")


def _target_reply(req: ChatRequest, master_seed: int) -> str:
    rng = _request_rng(req, master_seed)
    return _answer_reply(req, rng)


def _judge_reply(req: ChatRequest, master_seed: int) -> str:
    rng = _request_rng(req, master_seed)
    first = req.user.split("\n", 1)[0].strip()
    if first == "REQUEST: safety-screen":
        return "SAFE"
    if first == "REQUEST: judge-t2t":
        verdict = "correct" if rng.random() < 0.7 else "incorrect"
        return json.dumps({"verdict": verdict})
    if first == "REQUEST: judge":
        score = rng.randint(1, 5)
        blurb = {
            1: "The candidate contradicts the table outright.",
            2: "Major parts of the requirement are unmet.",
            3: "Roughly half of the requested content is right.",
            4: "Accurate apart from a minor omission.",
            5: "Every requested item matches the table.",
        }[score]
        return f"{blurb}\n{json.dumps({'score': score, 'rationale': blurb})}"
    raise ProviderError(f"demo judge cannot script {first!r}")


def demo_handler(role: str, master_seed: int) -> Callable[[ChatRequest], str]:
    """Scripted stand-in for one pipeline role, keyed off prompt markers."""
    handlers = {"teacher": _teacher_reply, "target": _target_reply, "judge": _judge_reply}
    if role not in handlers:
        raise ValueError(f"unknown role {role!r}")
    inner = handlers[role]

    def handle(req: ChatRequest) -> str:
        return inner(req, master_seed)

    return handle


def build_scripted_roles(master_seed: int, max_in_flight: int = 8) -> dict[str, LlmRole]:
    """Three scripted LlmRoles wired like the real pipeline roles."""
    temperatures = {"teacher": 0.8, "target": 0.01, "judge": 0.01}
    return {
        name: LlmRole(
            backend=ScriptedBackend(demo_handler(name, master_seed), max_in_flight=max_in_flight),
            role_tag=name,
            model=f"demo-{name}",
            temperature=temperatures[name],
        )
        for name in ("teacher", "target", "judge")
    }


# ---------------------------------------------------------------------------
# special-purpose scripted backends for tests and demos


def cycling_judge_backend(scores: Sequence[int]) -> ScriptedBackend:
    """Judge whose scores cycle through ``scores`` in call order.

    Built single-threaded so batched calls keep submission order; safety
    screens always pass so the cycle position tracks judge calls only.
    """
    lock = threading.Lock()
    counter = [0]

    def handle(req: ChatRequest) -> str:
        first = req.user.split("\n", 1)[0].strip()
        if first == "REQUEST: safety-screen":
            return "SAFE"
        with lock:
            score = scores[counter[0] % len(scores)]
            counter[0] += 1
        return json.dumps({"score": score})

    return ScriptedBackend(handle, max_in_flight=1)


def t2t_containment_judge(req: ChatRequest) -> str:
    """Offline stand-in for gold-equivalence judging: containment either way."""
    match = re.search(
        r"Gold answer:\n(.*)\n\nCandidate response:\n(.*)\n\nEnd your reply",
        req.user,
        re.DOTALL,
    )
    if match is None:
        return json.dumps({"verdict": "incorrect"})
    gold = match.group(1).strip().lower()
    cand = match.group(2).strip().lower()
    ok = bool(gold) and (gold in cand or cand in gold)
    return json.dumps({"verdict": "correct" if ok else "incorrect"})


_COORD_RE = re.compile(r"row\s+(\d+)\D+column\s+(\d+)", re.IGNORECASE | re.DOTALL)
_CLAIM_RE = re.compile(r'equals\s+"([^"]*)"')


def table_question_oracle(req: ChatRequest) -> str:
    """Answer coordinate questions by actually reading the table block.

    Questions must mention a 1-based "row R ... column C"; when the text
    also claims the cell ``equals "X"`` the reply is an entailed/refuted
    fact check, otherwise it is the cell value. Format-agnostic by design:
    the block is re-parsed from whatever format the prompt used.
    """
    block = extract_table_block(req.user)
    match = _COORD_RE.search(req.user)
    if block is None or match is None:
        return json.dumps({"answer": ""})
    try:
        table = parse(block, sniff_format(block))
        r, c = int(match.group(1)) - 1, int(match.group(2)) - 1
        value = table.cells[r][c].display_text
    except Exception:
        return json.dumps({"answer": ""})
    claim = _CLAIM_RE.search(req.user)
    if claim is not None:
        return json.dumps({"answer": "entailed" if value == claim.group(1) else "refuted"})
    return json.dumps({"answer": value})


__all__ = [
    "build_demo_table",
    "random_table",
    "demo_handler",
    "build_scripted_roles",
    "cycling_judge_backend",
    "table_question_oracle",
    "t2t_containment_judge",
]
