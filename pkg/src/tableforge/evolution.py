"""Stage 2 input-space exploration: rewrite weakness samples along three
directions (instruction complication, instruction generalization, table
generalization) using one of 14 strategies per attempt.

The LLM performs every strategy.  `deterministic_perturb` implements the two
mechanical table strategies locally and doubles as a test oracle.
"""

from __future__ import annotations

import logging
import random
from dataclasses import dataclass

from . import prompts
from .backend import BackendError, ChatRequest, LlmRole
from .catalog import Direction, Strategy, sample_strategy
from .formats import (
    MalformedMarkup,
    NoTableFound,
    ParseHints,
    RaggedRows,
    TableFormat,
    parse,
    serialize,
)
from .formulas import FormulaError, evaluate_table
from .jsonx import last_json_object_with_key
from .samples import InstructionSample, Lineage, make_evolved_id
from .synthesis import ParseFailure, _attempt_seed, natural_format
from .table_model import DEFAULT_LIMITS, Table, make_table_id, validate

logger = logging.getLogger(__name__)


class InvalidEvolvedTable(Exception):
    """A table-generalization reply parsed but the table is unusable."""


_DIRECTION_TEMPLATE = {
    Direction.INSTRUCTION_COMPLICATION: "evolve_instruction_complication",
    Direction.INSTRUCTION_GENERALIZATION: "evolve_instruction_generalization",
    Direction.TABLE_GENERALIZATION: "evolve_table_generalization",
}


@dataclass(frozen=True)
class EvolutionJob:
    """One planned candidate: which seed, which strategy, which child slot."""

    seed: InstructionSample
    table: Table
    strategy: Strategy
    ordinal: int
    sampling_seed: int

    @property
    def direction(self) -> Direction:
        return self.strategy.direction


@dataclass(frozen=True)
class ParsedEvolution:
    instruction: str
    table: Table
    table_format: TableFormat
    new_table: bool


@dataclass(frozen=True)
class EvolvedCandidate:
    sample: InstructionSample
    table: Table
    parent_instruction: str
    new_table: bool


def plan_round_jobs(
    seeds: list[InstructionSample],
    tables: dict[str, Table],
    rng: random.Random,
    children_per_direction: int = 1,
    sampling_seed: int | None = None,
) -> list[EvolutionJob]:
    """Deterministic job list: seeds in order, directions in declaration
    order, one independently sampled strategy per child."""
    jobs: list[EvolutionJob] = []
    counter = 0
    for seed in seeds:
        table = tables[seed.table_id]
        for direction in Direction:
            for child in range(children_per_direction):
                jobs.append(
                    EvolutionJob(
                        seed=seed,
                        table=table,
                        strategy=sample_strategy(direction, rng),
                        ordinal=child,
                        sampling_seed=_attempt_seed(sampling_seed, counter),
                    )
                )
                counter += 1
    return jobs


def build_evolution_request(teacher: LlmRole, job: EvolutionJob) -> ChatRequest:
    template = _DIRECTION_TEMPLATE[job.direction]
    values = {
        "strategy_name": job.strategy.name,
        "strategy_description": job.strategy.description,
        "instruction": job.seed.instruction,
        "table_block": prompts.fence_table(serialize(job.table, job.seed.table_format)),
    }
    if job.direction is Direction.TABLE_GENERALIZATION:
        values["format_name"] = job.seed.table_format.value
    user = prompts.render(template, **values)
    return teacher.request(prompts.SYSTEM_TEACHER, user, sampling_seed=job.sampling_seed)


def parse_evolution_reply(reply_text: str, job: EvolutionJob, table_seq: int) -> ParsedEvolution:
    """Turn one evolution reply into (instruction, table, format).

    Instruction directions reuse the parent table verbatim.  Table
    generalization must supply a parseable, valid replacement table, which
    gets a fresh id under ``table_seq``.
    """
    payload = last_json_object_with_key(reply_text, "instruction")
    if payload is None:
        raise ParseFailure(f"no instruction object in {job.strategy.name!r} reply")
    instruction = str(payload.get("instruction", "")).strip()
    if not instruction:
        raise ParseFailure(f"empty evolved instruction for {job.strategy.name!r}")

    if job.direction is not Direction.TABLE_GENERALIZATION:
        return ParsedEvolution(
            instruction=instruction,
            table=job.table,
            table_format=job.seed.table_format,
            new_table=False,
        )

    raw_format = str(payload.get("format", "")).strip()
    raw_table = payload.get("table")
    if not raw_format or not isinstance(raw_table, str) or not raw_table.strip():
        raise InvalidEvolvedTable(f"{job.strategy.name!r} reply lacks format or table")
    try:
        fmt = TableFormat.from_name(raw_format)
    except ValueError as exc:
        raise InvalidEvolvedTable(str(exc)) from exc
    parent = job.table
    hints = ParseHints(
        title=parent.title,
        topic=parent.topic,
        subtopic=parent.subtopic,
        table_type=parent.table_type,
        column_header_levels=parent.header_spec.column_header_levels,
        row_header_levels=parent.header_spec.row_header_levels,
    )
    try:
        table = parse(raw_table, fmt, hints)
        table = evaluate_table(table)
    except (NoTableFound, RaggedRows, MalformedMarkup, FormulaError, ValueError) as exc:
        raise InvalidEvolvedTable(f"evolved table unusable: {exc}") from exc
    report = validate(table, DEFAULT_LIMITS)
    if not report.ok:
        raise InvalidEvolvedTable(f"evolved table invalid: {report.codes}")
    table = table.with_id(make_table_id(table_seq, table.title, table.cells, table.merged_regions))
    return ParsedEvolution(instruction=instruction, table=table, table_format=fmt, new_table=True)


def build_reference_request(
    teacher: LlmRole,
    instruction: str,
    table: Table,
    fmt: TableFormat,
    sampling_seed: int | None = None,
) -> ChatRequest:
    user = prompts.render(
        "answer_instruction",
        instruction=instruction,
        table_block=prompts.fence_table(serialize(table, fmt)),
    )
    return teacher.request(prompts.SYSTEM_TEACHER, user, sampling_seed=sampling_seed)


def assemble_candidate(job: EvolutionJob, parsed: ParsedEvolution, response_text: str) -> EvolvedCandidate:
    round_k = job.seed.lineage.round + 1
    lineage = Lineage(
        round=round_k,
        parent_id=job.seed.id,
        direction=job.direction,
        strategy=job.strategy.name,
        origin_task=job.seed.lineage.origin_task,
    )
    sample = InstructionSample(
        id=make_evolved_id(round_k, job.seed.id, job.direction, job.strategy.name, job.ordinal),
        table_id=parsed.table.id,
        instruction=parsed.instruction,
        response=response_text.strip(),
        lineage=lineage,
        table_format=parsed.table_format,
    )
    return EvolvedCandidate(
        sample=sample,
        table=parsed.table,
        parent_instruction=job.seed.instruction,
        new_table=parsed.new_table,
    )


def evolve(
    sample: InstructionSample,
    table: Table,
    direction: Direction,
    strategy: Strategy,
    teacher: LlmRole,
    next_table_seq: int,
    children: int = 1,
    sampling_seed: int | None = None,
) -> list[EvolvedCandidate]:
    """One-shot evolution for a single (seed, direction, strategy).

    Convenience wrapper over the request builders; the orchestrator batches
    the same steps across many seeds instead.  Failed children are dropped.
    """
    if strategy.direction is not direction:
        raise ValueError(f"strategy {strategy.name!r} belongs to {strategy.direction.value}")
    out: list[EvolvedCandidate] = []
    seq = next_table_seq
    for child in range(children):
        job = EvolutionJob(
            seed=sample,
            table=table,
            strategy=strategy,
            ordinal=child,
            sampling_seed=_attempt_seed(sampling_seed, child),
        )
        try:
            reply = teacher.backend.complete(build_evolution_request(teacher, job))
            parsed = parse_evolution_reply(reply.text, job, seq)
            ref = teacher.backend.complete(
                build_reference_request(
                    teacher,
                    parsed.instruction,
                    parsed.table,
                    parsed.table_format,
                    sampling_seed=job.sampling_seed,
                )
            )
        except (ParseFailure, InvalidEvolvedTable, BackendError) as exc:
            logger.warning("candidate dropped (%s, child %d): %s", strategy.name, child, exc)
            continue
        if parsed.new_table:
            seq += 1
        out.append(assemble_candidate(job, parsed, ref.text))
    return out


def filter_candidates(cands: list[EvolvedCandidate]) -> list[EvolvedCandidate]:
    """Drop unusable candidates, preserving order: empty instruction or
    response, invalid table, or an instruction identical to the parent's."""
    kept: list[EvolvedCandidate] = []
    for cand in cands:
        if not cand.sample.instruction.strip() or not cand.sample.response.strip():
            continue
        if cand.sample.instruction.strip() == cand.parent_instruction.strip():
            continue
        if not validate(cand.table, DEFAULT_LIMITS).ok:
            continue
        kept.append(cand)
    return kept


def _blocks(length: int, start: int, glue_spans: list[tuple[int, int]]) -> list[list[int]]:
    # Indices [start, length) grouped into contiguous blocks; each glue span
    # [a, b] forces a..b into one block so merges survive permutation intact.
    # Spans arrive in merge-declaration order, so intersecting spans must be
    # coalesced before assignment or a later span can cut an earlier one.
    clipped = sorted(
        (max(a, start), min(b, length - 1)) for a, b in glue_spans if min(b, length - 1) >= start
    )
    coalesced: list[list[int]] = []
    for a, b in clipped:
        if coalesced and a <= coalesced[-1][1]:
            coalesced[-1][1] = max(coalesced[-1][1], b)
        else:
            coalesced.append([a, b])
    block_of = list(range(length))
    for a, b in coalesced:
        for i in range(a + 1, b + 1):
            block_of[i] = a
    blocks: list[list[int]] = []
    for i in range(start, length):
        if blocks and block_of[i] == block_of[blocks[-1][0]]:
            blocks[-1].append(i)
        else:
            blocks.append([i])
    return blocks


def data_permutations(table: Table, rng: random.Random) -> tuple[list[int], list[int]]:
    """Shuffled full-length row and column permutations that keep header
    bands fixed and never split a merged region."""
    spec = table.header_spec
    row_glue = [
        (m.top_row, m.bottom_row)
        for m in table.merged_regions
        if m.bottom_row >= spec.column_header_levels
    ]
    col_glue = [
        (m.left_col, m.right_col)
        for m in table.merged_regions
        if m.right_col >= spec.row_header_levels
    ]
    row_blocks = _blocks(table.n_rows, spec.column_header_levels, row_glue)
    col_blocks = _blocks(table.n_cols, spec.row_header_levels, col_glue)
    rng.shuffle(row_blocks)
    rng.shuffle(col_blocks)
    row_perm = list(range(spec.column_header_levels)) + [i for b in row_blocks for i in b]
    col_perm = list(range(spec.row_header_levels)) + [i for b in col_blocks for i in b]
    return row_perm, col_perm


def apply_permutation(table: Table, row_perm: list[int], col_perm: list[int]) -> Table:
    """Reorder rows/columns by permutation lists (``new index -> old index``).

    Merged regions must land on contiguous spans or ValueError is raised;
    permutations produced by `data_permutations` always satisfy that.
    """
    if sorted(row_perm) != list(range(table.n_rows)):
        raise ValueError("row_perm is not a permutation of the table's rows")
    if sorted(col_perm) != list(range(table.n_cols)):
        raise ValueError("col_perm is not a permutation of the table's columns")
    new_row = {old: new for new, old in enumerate(row_perm)}
    new_col = {old: new for new, old in enumerate(col_perm)}
    grid = [
        [table.cells[old_r][old_c] for old_c in col_perm]
        for old_r in row_perm
    ]
    merges = []
    for m in table.merged_regions:
        rows = sorted(new_row[r] for r in range(m.top_row, m.bottom_row + 1))
        cols = sorted(new_col[c] for c in range(m.left_col, m.right_col + 1))
        if rows[-1] - rows[0] + 1 != len(rows) or cols[-1] - cols[0] + 1 != len(cols):
            raise ValueError("permutation splits a merged region")
        merges.append(type(m)(rows[0], cols[0], len(rows), len(cols)))
    return Table(
        id=table.id,
        title=table.title,
        topic=table.topic,
        subtopic=table.subtopic,
        table_type=table.table_type,
        header_spec=table.header_spec,
        n_rows=table.n_rows,
        n_cols=table.n_cols,
        cells=tuple(tuple(row) for row in grid),
        merged_regions=tuple(merges),
    )


_MECHANICAL = {"Change Format", "Order Permutation"}


def deterministic_perturb(
    table: Table, strategy: Strategy, rng: random.Random
) -> tuple[Table, TableFormat]:
    """Offline fallback for the two mechanical table strategies.

    Change Format keeps the table and re-targets serialization; Order
    Permutation shuffles data rows/columns under the current format.
    """
    if strategy.name not in _MECHANICAL:
        raise ValueError(f"{strategy.name!r} has no deterministic form")
    current = natural_format(table.table_type)
    if strategy.name == "Change Format":
        others = sorted(f for f in TableFormat if f is not current)
        return table, rng.choice(others)
    row_perm, col_perm = data_permutations(table, rng)
    return apply_permutation(table, row_perm, col_perm), current
