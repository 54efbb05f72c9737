"""Fixed registries: the three evolution directions with their fourteen
strategies, and the twenty seed tasks instructions start from."""

from __future__ import annotations

import random
import re
from dataclasses import dataclass
from enum import Enum


class Direction(str, Enum):
    INSTRUCTION_COMPLICATION = "instruction-complication"
    INSTRUCTION_GENERALIZATION = "instruction-generalization"
    TABLE_GENERALIZATION = "table-generalization"


@dataclass(frozen=True)
class Strategy:
    name: str
    direction: Direction
    description: str

    @property
    def slug(self) -> str:
        return re.sub(r"[^a-z0-9]+", "-", self.name.lower()).strip("-")


STRATEGIES: tuple[Strategy, ...] = (
    Strategy(
        "Add Constraints",
        Direction.INSTRUCTION_COMPLICATION,
        "Attach one further requirement or condition the answer must satisfy.",
    ),
    Strategy(
        "Increase Depth",
        Direction.INSTRUCTION_COMPLICATION,
        "Deepen the question so a surface lookup no longer suffices.",
    ),
    Strategy(
        "Add Reasoning Steps",
        Direction.INSTRUCTION_COMPLICATION,
        "Require a multi-step chain of reasoning instead of a single step.",
    ),
    Strategy(
        "Add Task Number",
        Direction.INSTRUCTION_COMPLICATION,
        "Bundle several distinct demands into one enumerated instruction.",
    ),
    Strategy(
        "Add Details",
        Direction.INSTRUCTION_COMPLICATION,
        "Swap general wording for precise, concrete concepts from the table.",
    ),
    Strategy(
        "Increase Length",
        Direction.INSTRUCTION_COMPLICATION,
        "Expand the instruction into multiple lines or paragraphs of demands.",
    ),
    Strategy(
        "Add Context",
        Direction.INSTRUCTION_COMPLICATION,
        "Bring in extra input beyond the table, such as background text, code, or examples.",
    ),
    Strategy(
        "New Instruction",
        Direction.INSTRUCTION_GENERALIZATION,
        "Invent an instruction for a genuinely different task over the same table.",
    ),
    Strategy(
        "Similar Instruction",
        Direction.INSTRUCTION_GENERALIZATION,
        "Write a fresh instruction of the same task type as the example.",
    ),
    Strategy(
        "Change Format",
        Direction.TABLE_GENERALIZATION,
        "Re-express the table in a different wire format.",
    ),
    Strategy(
        "Modify Header",
        Direction.TABLE_GENERALIZATION,
        "Paraphrase header labels without changing their meaning.",
    ),
    Strategy(
        "Modify Data",
        Direction.TABLE_GENERALIZATION,
        "Replace table values with new, diverse data, possibly including nulls.",
    ),
    Strategy(
        "Order Permutation",
        Direction.TABLE_GENERALIZATION,
        "Shuffle the order of the table's rows and columns.",
    ),
    Strategy(
        "Insert/Remove Data",
        Direction.TABLE_GENERALIZATION,
        "Insert new rows or columns, or drop existing ones.",
    ),
)

STRATEGY_BY_NAME: dict[str, Strategy] = {s.name: s for s in STRATEGIES}


def strategies_for(direction: Direction) -> tuple[Strategy, ...]:
    return tuple(s for s in STRATEGIES if s.direction is direction)


def sample_strategy(direction: Direction, rng: random.Random) -> Strategy:
    """Uniform draw over the direction's strategy set."""
    return rng.choice(strategies_for(direction))


class TaskCategory(str, Enum):
    TQA = "TQA"
    T2T = "T2T"
    STRUCTURE_UNDERSTANDING = "StructureUnderstanding"
    DATA_MANIPULATION = "DataManipulation"
    TABLE_PROCESSING = "TableProcessing"


@dataclass(frozen=True)
class SeedTask:
    category: TaskCategory
    name: str
    description: str

    @property
    def slug(self) -> str:
        return re.sub(r"[^a-z0-9]+", "-", self.name.lower()).strip("-")


SEED_TASKS: tuple[SeedTask, ...] = (
    SeedTask(
        TaskCategory.TQA,
        "Numerical reasoning problem",
        "Ask for arithmetic over table values: sums, differences, averages, rates.",
    ),
    SeedTask(
        TaskCategory.TQA,
        "Information seeking problem",
        "Ask for specific cell contents that satisfy a stated requirement.",
    ),
    SeedTask(
        TaskCategory.TQA,
        "Multihop reasoning problem",
        "Ask a question whose answer needs several chained lookups in the table.",
    ),
    SeedTask(
        TaskCategory.TQA,
        "Time calculation problem",
        "Ask for a computation or comparison over time values in the table.",
    ),
    SeedTask(
        TaskCategory.TQA,
        "Table-based fact verification",
        "State a claim and ask whether the table supports it.",
    ),
    SeedTask(
        TaskCategory.T2T,
        "Table description",
        "Ask for a detailed prose description of the table contents.",
    ),
    SeedTask(
        TaskCategory.T2T,
        "Table summarization",
        "Ask for a short summary of the table's key information.",
    ),
    SeedTask(
        TaskCategory.T2T,
        "Table analysis",
        "Ask for an analyst-style reading of trends and notable patterns.",
    ),
    SeedTask(
        TaskCategory.STRUCTURE_UNDERSTANDING,
        "Table size detection",
        "Ask how many rows and columns the table has.",
    ),
    SeedTask(
        TaskCategory.STRUCTURE_UNDERSTANDING,
        "Table cell extraction",
        "Give row and column numbers and ask for the cell text there.",
    ),
    SeedTask(
        TaskCategory.STRUCTURE_UNDERSTANDING,
        "Table cell location",
        "Give cell text and ask for its row and column numbers.",
    ),
    SeedTask(
        TaskCategory.STRUCTURE_UNDERSTANDING,
        "Row&Column extraction",
        "Give row or column numbers and ask for all text in them.",
    ),
    SeedTask(
        TaskCategory.STRUCTURE_UNDERSTANDING,
        "Merged cell detection",
        "Ask whether the table has merged cells and where they are.",
    ),
    SeedTask(
        TaskCategory.DATA_MANIPULATION,
        "Data formatting",
        "Ask to rewrite some values into a requested format.",
    ),
    SeedTask(
        TaskCategory.DATA_MANIPULATION,
        "Data cleaning",
        "Ask to find and fix errors such as typos or duplicates in the table.",
    ),
    SeedTask(
        TaskCategory.DATA_MANIPULATION,
        "Data filtering",
        "Ask to keep only rows or columns matching given criteria.",
    ),
    SeedTask(
        TaskCategory.DATA_MANIPULATION,
        "Data classification",
        "Ask to sort table entries into predefined categories.",
    ),
    SeedTask(
        TaskCategory.DATA_MANIPULATION,
        "Data sorting",
        "Ask to reorder the data by some column, ascending or descending.",
    ),
    SeedTask(
        TaskCategory.TABLE_PROCESSING,
        "Table modification",
        "Ask to change the table per stated requirements and return the result.",
    ),
    SeedTask(
        TaskCategory.TABLE_PROCESSING,
        "Format transformation",
        "Ask to convert the table into another representation, such as LaTeX.",
    ),
)

SEED_TASK_BY_NAME: dict[str, SeedTask] = {t.name: t for t in SEED_TASKS}


def tasks_in_category(category: TaskCategory) -> tuple[SeedTask, ...]:
    return tuple(t for t in SEED_TASKS if t.category is category)
