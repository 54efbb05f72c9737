"""Instruction samples, their provenance lineage, and the dataset container."""

from __future__ import annotations

import hashlib
import logging
from dataclasses import dataclass, field, replace

from .catalog import STRATEGY_BY_NAME, Direction
from .formats import TableFormat, serialize
from .table_model import Table

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class Lineage:
    """Where a sample came from: round 0 seeds have no parent, evolved
    samples carry parent, direction, and strategy."""

    round: int
    parent_id: str | None = None
    direction: Direction | None = None
    strategy: str | None = None
    origin_task: str | None = None

    def __post_init__(self) -> None:
        if self.round < 0:
            raise ValueError("round must be >= 0")
        if (self.round == 0) != (self.parent_id is None) or (self.parent_id is None) != (
            self.direction is None
        ):
            raise ValueError(
                "round 0 means no parent and no direction; later rounds need both"
            )
        if self.strategy is not None:
            strategy = STRATEGY_BY_NAME.get(self.strategy)
            if strategy is None:
                raise ValueError(f"unknown strategy {self.strategy!r}")
            if strategy.direction is not self.direction:
                raise ValueError(
                    f"strategy {self.strategy!r} belongs to {strategy.direction}, not {self.direction}"
                )

    def to_dict(self) -> dict:
        return {
            "round": self.round,
            "parent_id": self.parent_id,
            "direction": self.direction.value if self.direction else None,
            "strategy": self.strategy,
            "origin_task": self.origin_task,
        }

    @classmethod
    def from_dict(cls, data: dict) -> Lineage:
        return cls(
            round=data["round"],
            parent_id=data.get("parent_id"),
            direction=Direction(data["direction"]) if data.get("direction") else None,
            strategy=data.get("strategy"),
            origin_task=data.get("origin_task"),
        )


@dataclass(frozen=True)
class InstructionSample:
    """One (instruction, reference response) pair bound to a table.

    ``response`` is the teacher's reference answer and doubles as the
    training label; the target model's reply is kept for audit only.
    """

    id: str
    table_id: str
    instruction: str
    response: str
    lineage: Lineage
    table_format: TableFormat
    judge_score: int | None = None
    target_response: str | None = None

    def with_verdict(self, score: int, target_response: str) -> InstructionSample:
        return replace(self, judge_score=score, target_response=target_response)

    def to_record(self) -> dict:
        record = {
            "id": self.id,
            "table_id": self.table_id,
            "table_format": self.table_format.value,
            "instruction": self.instruction,
            "response": self.response,
            "lineage": self.lineage.to_dict(),
            "judge_score": self.judge_score,
        }
        if self.target_response is not None:
            record["target_response"] = self.target_response
        return record

    @classmethod
    def from_record(cls, record: dict) -> InstructionSample:
        return cls(
            id=record["id"],
            table_id=record["table_id"],
            instruction=record["instruction"],
            response=record["response"],
            lineage=Lineage.from_dict(record["lineage"]),
            table_format=TableFormat(record["table_format"]),
            judge_score=record.get("judge_score"),
            target_response=record.get("target_response"),
        )


def _digest12(*parts: str) -> str:
    joined = "\x1f".join(parts)
    return hashlib.sha256(joined.encode("utf-8")).hexdigest()[:12]


def make_seed_id(table_id: str, task_name: str) -> str:
    return f"s0-{_digest12(table_id, task_name)}"


def make_evolved_id(
    round_k: int, parent_id: str, direction: Direction, strategy: str, ordinal: int
) -> str:
    return f"e{round_k}-{_digest12(parent_id, direction.value, strategy, str(ordinal))}"


@dataclass
class Dataset:
    """Ordered samples plus the tables they reference."""

    samples: list[InstructionSample] = field(default_factory=list)
    tables: dict[str, Table] = field(default_factory=dict)

    def add_table(self, table: Table) -> None:
        self.tables[table.id] = table

    def check_integrity(self) -> list[str]:
        """Dangling table or parent references; empty when sound."""
        problems: list[str] = []
        ids = {s.id for s in self.samples}
        for sample in self.samples:
            if sample.table_id not in self.tables:
                problems.append(f"sample {sample.id} references missing table {sample.table_id}")
            parent = sample.lineage.parent_id
            if parent is not None and parent not in ids:
                problems.append(f"sample {sample.id} references missing parent {parent}")
        return problems

    def export_records(self) -> list[dict]:
        """Wire records sorted by (round, id), table text inlined."""
        table_text_cache: dict[tuple[str, TableFormat], str] = {}

        def table_text(sample: InstructionSample) -> str:
            key = (sample.table_id, sample.table_format)
            if key not in table_text_cache:
                table_text_cache[key] = serialize(self.tables[sample.table_id], sample.table_format)
            return table_text_cache[key]

        ordered = sorted(self.samples, key=lambda s: (s.lineage.round, s.id))
        return [
            {
                "id": s.id,
                "table_id": s.table_id,
                "table_format": s.table_format.value,
                "table_text": table_text(s),
                "table_title": self.tables[s.table_id].title,
                "instruction": s.instruction,
                "response": s.response,
                "lineage": s.lineage.to_dict(),
                "judge_score": s.judge_score,
            }
            for s in ordered
        ]
