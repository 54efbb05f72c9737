"""Benchmark evaluation: prompt assembly, answer extraction, scoring.

Records come in as generic JSONL: each line carries an id, a benchmark
name, a question, a gold answer (string or list), a task type, and a
table either as the structured record form or as raw HTML. Prompts are
assembled per (record, template, format) cell; answers are pulled from
the last JSON object in the reply; accuracy is reported per benchmark
plus a macro average.
"""

from __future__ import annotations

import dataclasses
import logging
from dataclasses import dataclass
from decimal import Decimal, InvalidOperation
from enum import Enum
from pathlib import Path
from typing import Mapping, Sequence

from . import prompts
from .backend import BackendError, ChatRequest, LlmRole
from .formats import TableFormat, parse, serialize
from .jsonl import read_jsonl, write_jsonl
from .jsonx import last_json_object_with_key
from .table_model import Table

logger = logging.getLogger(__name__)


class MissingTemplate(Exception):
    """Requested prompt template id is not registered."""


class TaskType(str, Enum):
    TQA = "TQA"  # table question answering: exact match
    TFV = "TFV"  # fact verification: entailed / refuted
    T2T = "T2T"  # table-to-text: judged against gold free text


# template id -> prompt template name
TEMPLATE_FILES = {
    "t1": "eval_t1",
    "t2": "eval_t2",
    "t3": "eval_t3",
}

_TQA_CLAUSE = (
    "End your reply with a single JSON object on its own line, for example: "
    '{"answer": "..."}. Use a JSON list as the value when the answer has '
    "several parts."
)
_TFV_CLAUSE = (
    "End your reply with a single JSON object on its own line, exactly "
    '{"answer": "entailed"} or {"answer": "refuted"}.'
)

_TFV_LABELS = frozenset({"entailed", "refuted"})


@dataclass(frozen=True)
class BenchmarkRecord:
    """One evaluation item; the table arrives structured or as raw HTML."""

    id: str
    benchmark: str
    question: str
    gold: str | tuple[str, ...]
    task_type: TaskType
    table: Table

    def __post_init__(self) -> None:
        if isinstance(self.gold, list):
            object.__setattr__(self, "gold", tuple(self.gold))
        if self.task_type is TaskType.TFV:
            if not isinstance(self.gold, str):
                raise ValueError(f"record {self.id}: TFV gold must be a single label")
            label = self.gold.strip().lower()
            if label not in _TFV_LABELS:
                raise ValueError(f"record {self.id}: TFV gold {self.gold!r} not entailed/refuted")
            object.__setattr__(self, "gold", label)

    @classmethod
    def from_record(cls, rec: Mapping) -> BenchmarkRecord:
        raw_table = rec["table"]
        if isinstance(raw_table, str):
            table = parse(raw_table, TableFormat.HTML)
        else:
            table = Table.from_record(raw_table)
        gold = rec["gold"]
        return cls(
            id=str(rec["id"]),
            benchmark=str(rec.get("benchmark", "unnamed")),
            question=str(rec["question"]),
            gold=tuple(gold) if isinstance(gold, list) else str(gold),
            task_type=TaskType(str(rec["task_type"]).upper()),
            table=table,
        )


def load_benchmark(path: Path) -> list[BenchmarkRecord]:
    return [BenchmarkRecord.from_record(rec) for rec in read_jsonl(path)]


@dataclass(frozen=True)
class EvalConfig:
    """What to run: which templates, which wire formats, which models."""

    template_ids: tuple[str, ...] = ("t1",)
    formats: tuple[TableFormat, ...] = (TableFormat.MARKDOWN,)
    model: LlmRole | None = None
    judge: LlmRole | None = None
    temperature: float = 0.01
    judge_reasks: int = 2

    def __post_init__(self) -> None:
        if not self.template_ids or not self.formats:
            raise ValueError("need at least one template id and one format")
        for template_id in self.template_ids:
            if template_id not in TEMPLATE_FILES:
                raise MissingTemplate(template_id)


# ---------------------------------------------------------------------------
# prompt assembly and answer extraction


def assemble_prompt(rec: BenchmarkRecord, template_id: str, fmt: TableFormat) -> str:
    if template_id not in TEMPLATE_FILES:
        raise MissingTemplate(template_id)
    block = prompts.fence_table(serialize(rec.table, fmt))
    text = prompts.render(TEMPLATE_FILES[template_id], table_block=block, question=rec.question)
    if rec.task_type is TaskType.TQA:
        return f"{text}\n\n{_TQA_CLAUSE}"
    if rec.task_type is TaskType.TFV:
        return f"{text}\n\n{_TFV_CLAUSE}"
    return text


def normalize_answer(value: object) -> str | tuple[str, ...]:
    """Canonical comparison form: trimmed, unquoted, lowercased, numbers reduced."""
    if isinstance(value, (list, tuple)):
        return tuple(str(normalize_answer(v)) for v in value)
    text = str(value).strip()
    if len(text) >= 2 and text[0] == text[-1] and text[0] in ("'", '"'):
        text = text[1:-1].strip()
    text = text.rstrip(".").strip().lower()
    try:
        number = Decimal(text)
    except InvalidOperation:
        return text
    if number.is_finite():
        return format(number.normalize(), "f")  # "5.0" -> "5", "1.2E+3" -> "1200"
    return text


def extract_answer(response: str) -> str | tuple[str, ...] | None:
    """Normalized value of the last JSON object carrying an "answer" key."""
    payload = last_json_object_with_key(response, "answer")
    if payload is None:
        return None
    return normalize_answer(payload["answer"])


def exact_match(pred: str | tuple[str, ...] | None, gold: str | tuple[str, ...]) -> int:
    if pred is None:
        return 0
    pred_set = set(pred) if isinstance(pred, tuple) else {pred}
    gold_set = set(gold) if isinstance(gold, tuple) else {gold}
    return int(pred_set == gold_set)


def judge_t2t(response: str, gold: str, judge: LlmRole, reasks: int = 2) -> int:
    """Binary gold-equivalence verdict from the judge; unparseable counts wrong."""
    user = prompts.render("judge_t2t", gold=gold, response=response)
    for attempt in range(1 + reasks):
        try:
            reply = judge.complete(prompts.SYSTEM_JUDGE, user, sampling_seed=attempt)
        except BackendError as exc:
            logger.warning("t2t judge call failed (attempt %d): %s", attempt, exc)
            continue
        payload = last_json_object_with_key(reply.text, "verdict")
        if payload is not None and payload["verdict"] in ("correct", "incorrect"):
            return int(payload["verdict"] == "correct")
        logger.warning("unparseable t2t verdict (attempt %d): %.80r", attempt, reply.text)
    logger.warning("t2t sample counted incorrect after %d attempts", 1 + reasks)
    return 0


# ---------------------------------------------------------------------------
# scoring


CellKey = tuple[str, str, str]  # (record id, template id, format value)


def cell_keys(records: Sequence[BenchmarkRecord], cfg: EvalConfig) -> list[tuple[BenchmarkRecord, str, TableFormat]]:
    return [
        (rec, template_id, fmt)
        for rec in records
        for template_id in cfg.template_ids
        for fmt in cfg.formats
    ]


@dataclass(frozen=True)
class BenchmarkScore:
    benchmark: str
    n: int
    correct: int

    @property
    def accuracy(self) -> float:
        return self.correct / self.n if self.n else 0.0

    def to_record(self) -> dict:
        return {
            "benchmark": self.benchmark,
            "n": self.n,
            "correct": self.correct,
            "accuracy": round(self.accuracy, 4),
        }


@dataclass(frozen=True)
class EvalReport:
    scores: tuple[BenchmarkScore, ...]
    macro_average: float | None

    def to_records(self) -> list[dict]:
        rows = [score.to_record() for score in self.scores]
        rows.append({"benchmark": "MACRO_AVERAGE", "n": sum(s.n for s in self.scores),
                     "correct": sum(s.correct for s in self.scores),
                     "accuracy": round(self.macro_average, 4) if self.macro_average is not None else None})
        return rows

    def format_report(self) -> str:
        width = max([len("benchmark")] + [len(s.benchmark) for s in self.scores])
        lines = [f"{'benchmark':<{width}}  {'n':>6}  {'correct':>7}  {'accuracy':>8}"]
        for score in self.scores:
            lines.append(
                f"{score.benchmark:<{width}}  {score.n:>6}  {score.correct:>7}  {score.accuracy:>8.4f}"
            )
        if self.macro_average is not None:
            lines.append(f"{'macro average':<{width}}  {'':>6}  {'':>7}  {self.macro_average:>8.4f}")
        return "\n".join(lines)

    def write(self, out_dir: Path) -> None:
        out_dir.mkdir(parents=True, exist_ok=True)
        write_jsonl(out_dir / "report.jsonl", self.to_records())
        (out_dir / "report.txt").write_text(self.format_report() + "\n", encoding="utf-8")


def score_run(
    records: Sequence[BenchmarkRecord],
    responses: Mapping[CellKey, str],
    cfg: EvalConfig,
) -> EvalReport:
    """Fold responses into per-benchmark accuracy plus a macro average.

    Missing response cells are skipped with a warning rather than scored;
    a benchmark whose every cell is missing is excluded from the macro
    average, again with a warning.
    """
    totals: dict[str, list[int]] = {}
    for rec in records:
        totals.setdefault(rec.benchmark, [0, 0])
    for rec, template_id, fmt in cell_keys(records, cfg):
        key = (rec.id, template_id, fmt.value)
        if key not in responses:
            logger.warning("no response for cell %s; skipping", key)
            continue
        response = responses[key]
        if rec.task_type is TaskType.T2T:
            if cfg.judge is None:
                raise ValueError("T2T records require a judge role in EvalConfig")
            gold = rec.gold if isinstance(rec.gold, str) else "; ".join(rec.gold)
            point = judge_t2t(response, gold, cfg.judge, reasks=cfg.judge_reasks)
        else:
            point = exact_match(extract_answer(response), normalize_answer(rec.gold))
        bucket = totals[rec.benchmark]
        bucket[0] += 1
        bucket[1] += point
    scores = []
    scored = []
    for benchmark in sorted(totals):
        n, correct = totals[benchmark]
        score = BenchmarkScore(benchmark=benchmark, n=n, correct=correct)
        scores.append(score)
        if n == 0:
            logger.warning("benchmark %s has no scored cells; excluded from macro average", benchmark)
        else:
            scored.append(score.accuracy)
    macro = sum(scored) / len(scored) if scored else None
    return EvalReport(scores=tuple(scores), macro_average=macro)


def run_eval(records: Sequence[BenchmarkRecord], cfg: EvalConfig) -> tuple[dict[CellKey, str], EvalReport]:
    """Assemble all cells, batch them through the model, score the replies."""
    if cfg.model is None:
        raise ValueError("run_eval needs a model role in EvalConfig")
    cells = cell_keys(records, cfg)
    requests: list[ChatRequest] = []
    for rec, template_id, fmt in cells:
        base = cfg.model.request(prompts.SYSTEM_TARGET, assemble_prompt(rec, template_id, fmt))
        requests.append(dataclasses.replace(base, temperature=cfg.temperature))
    results = cfg.model.complete_batch(requests)
    responses: dict[CellKey, str] = {}
    for (rec, template_id, fmt), result in zip(cells, results):
        key = (rec.id, template_id, fmt.value)
        if isinstance(result, BackendError):
            logger.warning("model call failed for cell %s: %s", key, result)
            responses[key] = ""
        else:
            responses[key] = result.text
    return responses, score_run(records, responses, cfg)


__all__ = [
    "TaskType",
    "BenchmarkRecord",
    "EvalConfig",
    "MissingTemplate",
    "TEMPLATE_FILES",
    "load_benchmark",
    "assemble_prompt",
    "normalize_answer",
    "extract_answer",
    "exact_match",
    "judge_t2t",
    "score_run",
    "run_eval",
    "EvalReport",
    "BenchmarkScore",
]
