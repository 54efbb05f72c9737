"""Stage 1: topic tree, table attribute sampling, table generation with
validity filtering, and seed-instruction generation from the 20 seed tasks."""

from __future__ import annotations

import logging
import random
from dataclasses import dataclass

from . import prompts
from .backend import BackendError, ChatRequest, LlmRole
from .catalog import SeedTask
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
from .samples import InstructionSample, Lineage, make_seed_id
from .table_model import (
    DEFAULT_LIMITS,
    HeaderSpec,
    SizeLimits,
    Table,
    TableType,
    make_table_id,
    validate,
)

logger = logging.getLogger(__name__)


class ParseFailure(Exception):
    """Model reply did not match the output contract after retries."""


class GenerationExhausted(Exception):
    """A table slot failed every generation attempt in its budget."""


@dataclass(frozen=True)
class Subtopic:
    name: str
    titles: tuple[str, ...]


@dataclass(frozen=True)
class TopicNode:
    topic: str
    subtopics: tuple[Subtopic, ...]

    def to_dict(self) -> dict:
        return {
            "topic": self.topic,
            "subtopics": [{"name": s.name, "titles": list(s.titles)} for s in self.subtopics],
        }

    @classmethod
    def from_dict(cls, data: dict) -> TopicNode:
        return cls(
            topic=data["topic"],
            subtopics=tuple(
                Subtopic(name=s["name"], titles=tuple(s["titles"])) for s in data["subtopics"]
            ),
        )


@dataclass(frozen=True)
class TableAttributes:
    table_type: TableType
    n_rows: int
    n_cols: int
    header_spec: HeaderSpec
    target_format: TableFormat
    wants_formulas: bool


def natural_format(table_type: TableType) -> TableFormat:
    """Hierarchical tables are requested in HTML, the others in Markdown."""
    if table_type is TableType.HIERARCHICAL:
        return TableFormat.HTML
    return TableFormat.MARKDOWN


def sample_attributes(
    rng: random.Random,
    limits: SizeLimits = DEFAULT_LIMITS,
    formula_probability: float = 0.3,
) -> TableAttributes:
    """One uniform attribute draw; a pure function of the rng state."""
    table_type = rng.choice([TableType.FLAT, TableType.HORIZONTAL, TableType.HIERARCHICAL])
    n_rows = rng.randint(limits.min_rows, limits.max_rows)
    n_cols = rng.randint(limits.min_cols, limits.max_cols)
    if table_type is TableType.FLAT:
        spec = HeaderSpec(1, 0)
    elif table_type is TableType.HORIZONTAL:
        spec = HeaderSpec(0, 1)
    else:
        spec = HeaderSpec(rng.choice([1, 2, 3]), rng.choice([1, 2]))
    wants_formulas = rng.random() < formula_probability
    return TableAttributes(
        table_type=table_type,
        n_rows=n_rows,
        n_cols=n_cols,
        header_spec=spec,
        target_format=natural_format(table_type),
        wants_formulas=wants_formulas,
    )


_FORMULA_CLAUSE_ON = (
    "- Where one cell is derived from others (totals, differences, averages), write it\n"
    '  as a formula instead of a value: start with "=", reference cells 1-based as\n'
    "  R<row>C<col>, use + - * / with parentheses, and SUM/AVG/MIN/MAX over ranges\n"
    "  like R2C2:R5C2. Formulas must reference only literal numeric cells or other\n"
    "  formula cells without cycles. Use a handful of formulas, not one per cell."
)
_FORMULA_CLAUSE_OFF = "- Write a literal value in every cell; do not use formulas."


def build_table_prompt(attrs: TableAttributes, title: str, topic: str, subtopic: str) -> str:
    """Synthesis prompt with every placeholder substituted."""
    return prompts.render(
        "table_synthesis",
        table_type=attrs.table_type.value,
        n_rows=attrs.n_rows,
        n_cols=attrs.n_cols,
        col_header_levels=attrs.header_spec.column_header_levels,
        row_header_levels=attrs.header_spec.row_header_levels,
        format_name=attrs.target_format.value,
        formulas_flag="yes" if attrs.wants_formulas else "no",
        formula_clause=_FORMULA_CLAUSE_ON if attrs.wants_formulas else _FORMULA_CLAUSE_OFF,
        title=title,
        topic=topic,
        subtopic=subtopic,
    )


def _attempt_seed(base: int | None, attempt: int) -> int:
    # Distinct per attempt so neither the cache nor a scripted backend can
    # replay the reply that just failed to parse.
    return (base or 0) + attempt


def generate_topic_tree(
    teacher: LlmRole,
    n_topics: int,
    subtopics_per_topic: int = 2,
    titles_per_subtopic: int = 3,
    sampling_seed: int | None = None,
    max_attempts: int = 2,
) -> list[TopicNode]:
    """Ask the teacher for a topic tree; malformed subtopics are dropped."""
    user = prompts.render(
        "topic_tree",
        n_topics=n_topics,
        n_subtopics=subtopics_per_topic,
        n_titles=titles_per_subtopic,
    )
    last_reason = ""
    for attempt in range(max_attempts):
        reply = teacher.complete(
            prompts.SYSTEM_TEACHER, user, sampling_seed=_attempt_seed(sampling_seed, attempt)
        )
        payload = last_json_object_with_key(reply.text, "topics")
        if payload is None or not isinstance(payload.get("topics"), list):
            last_reason = "no topics object in reply"
            continue
        nodes: list[TopicNode] = []
        for raw_topic in payload["topics"]:
            if not isinstance(raw_topic, dict) or not str(raw_topic.get("topic", "")).strip():
                logger.warning("dropping malformed topic entry: %r", raw_topic)
                continue
            subtopics: list[Subtopic] = []
            for raw_sub in raw_topic.get("subtopics") or []:
                if not isinstance(raw_sub, dict):
                    continue
                name = str(raw_sub.get("name", "")).strip()
                titles = [str(t).strip() for t in raw_sub.get("titles") or [] if str(t).strip()]
                if not name or not titles:
                    logger.warning("dropping subtopic without titles under %r", raw_topic.get("topic"))
                    continue
                subtopics.append(Subtopic(name=name, titles=tuple(titles)))
            if subtopics:
                nodes.append(TopicNode(topic=str(raw_topic["topic"]).strip(), subtopics=tuple(subtopics)))
        if nodes:
            return nodes
        last_reason = "every topic entry was malformed"
    raise ParseFailure(f"topic tree unusable after {max_attempts} attempts: {last_reason}")


def flatten_titles(nodes: list[TopicNode]) -> list[tuple[str, str, str]]:
    """(topic, subtopic, title) triples in tree order."""
    return [
        (node.topic, sub.name, title)
        for node in nodes
        for sub in node.subtopics
        for title in sub.titles
    ]


class TableRejected(Exception):
    """One generation attempt produced an unusable table."""


def generate_table_once(
    teacher: LlmRole,
    attrs: TableAttributes,
    title: str,
    topic: str,
    subtopic: str,
    seq: int,
    limits: SizeLimits = DEFAULT_LIMITS,
    sampling_seed: int | None = None,
) -> Table:
    """One synthesis attempt: prompt, parse, resolve formulas, validate."""
    user = build_table_prompt(attrs, title, topic, subtopic)
    reply = teacher.complete(prompts.SYSTEM_TEACHER, user, sampling_seed=sampling_seed)
    hints = ParseHints(
        title=title,
        topic=topic,
        subtopic=subtopic,
        table_type=attrs.table_type,
        column_header_levels=attrs.header_spec.column_header_levels,
        row_header_levels=attrs.header_spec.row_header_levels,
    )
    try:
        table = parse(reply.text, attrs.target_format, hints)
        table = evaluate_table(table)
    except (NoTableFound, RaggedRows, MalformedMarkup, FormulaError, ValueError) as exc:
        raise TableRejected(str(exc)) from exc
    report = validate(table, limits)
    if not report.ok:
        raise TableRejected(f"invalid table: {report.codes}")
    if table.n_rows != attrs.n_rows or table.n_cols != attrs.n_cols:
        raise TableRejected(
            f"size mismatch: requested {attrs.n_rows}x{attrs.n_cols}, got {table.n_rows}x{table.n_cols}"
        )
    return table.with_id(make_table_id(seq, table.title, table.cells, table.merged_regions))


def synthesize_table(
    teacher: LlmRole,
    title: str,
    topic: str,
    subtopic: str,
    seq: int,
    rng: random.Random,
    limits: SizeLimits = DEFAULT_LIMITS,
    formula_probability: float = 0.3,
    budget: int = 3,
    sampling_seed: int | None = None,
) -> Table:
    """Fill one table slot, redrawing attributes on each failed attempt."""
    reasons: list[str] = []
    for attempt in range(budget):
        attrs = sample_attributes(rng, limits=limits, formula_probability=formula_probability)
        try:
            return generate_table_once(
                teacher,
                attrs,
                title,
                topic,
                subtopic,
                seq,
                limits=limits,
                sampling_seed=_attempt_seed(sampling_seed, attempt),
            )
        except (TableRejected, BackendError) as exc:
            reasons.append(str(exc))
            logger.warning("table slot %d attempt %d rejected: %s", seq, attempt + 1, exc)
    raise GenerationExhausted(f"slot {seq}: {budget} attempts failed: {reasons}")


def build_seed_instruction_request(
    teacher: LlmRole,
    table: Table,
    task: SeedTask,
    fmt: TableFormat,
    sampling_seed: int | None = None,
) -> ChatRequest:
    user = prompts.render(
        "seed_instruction",
        task_name=task.name,
        task_description=task.description,
        title=table.title,
        table_block=prompts.fence_table(serialize(table, fmt)),
    )
    return teacher.request(prompts.SYSTEM_TEACHER, user, sampling_seed=sampling_seed)


def parse_seed_reply(reply_text: str, table: Table, task: SeedTask, fmt: TableFormat) -> InstructionSample:
    """Build the round-0 sample from one seed-instruction reply."""
    payload = last_json_object_with_key(reply_text, "instruction")
    if payload is None:
        raise ParseFailure(f"no instruction object in reply for task {task.name!r}")
    instruction = str(payload.get("instruction", "")).strip()
    response = str(payload.get("response", "")).strip()
    if not instruction or not response:
        raise ParseFailure(f"empty instruction or response for task {task.name!r}")
    return InstructionSample(
        id=make_seed_id(table.id, task.name),
        table_id=table.id,
        instruction=instruction,
        response=response,
        lineage=Lineage(round=0, origin_task=task.name),
        table_format=fmt,
    )


def generate_seed_instructions(
    teacher: LlmRole,
    table: Table,
    tasks: list[SeedTask],
    k: int,
    rng: random.Random,
    sampling_seed: int | None = None,
) -> list[InstructionSample]:
    """k tasks sampled without replacement; malformed items are dropped."""
    if k < 1:
        raise ValueError("k must be >= 1")
    chosen = rng.sample(list(tasks), k=min(k, len(tasks)))
    fmt = natural_format(table.table_type)
    samples: list[InstructionSample] = []
    for index, task in enumerate(chosen):
        req = build_seed_instruction_request(
            teacher, table, task, fmt, sampling_seed=_attempt_seed(sampling_seed, index)
        )
        try:
            reply = teacher.backend.complete(req)
            samples.append(parse_seed_reply(reply.text, table, task, fmt))
        except (ParseFailure, BackendError) as exc:
            logger.warning("seed instruction dropped (table %s, task %s): %s", table.id, task.name, exc)
    return samples
