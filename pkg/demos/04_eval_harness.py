"""Benchmark evaluation offline: build records, run a model, score it.

The benchmark here is six coordinate questions over two random tables.
The "model" is the bundled table-reading oracle, which re-parses the
table out of each prompt, so accuracy stays flat no matter which prompt
template or wire format carries the table. A second pass scores a map
of canned responses to show where the accuracy numbers come from.
"""

import json
import random
import tempfile
from pathlib import Path

from tableforge.backend import LlmRole, ScriptedBackend
from tableforge.evalharness import (
    BenchmarkRecord,
    EvalConfig,
    TaskType,
    run_eval,
    score_run,
)
from tableforge.formats import TableFormat
from tableforge.testing import random_table, table_question_oracle

records = []
for i in range(6):
    table = random_table(random.Random(40 + i), with_merges=False, seq=i)
    r, c = 2 + i % 2, 2 + i % 3
    records.append(
        BenchmarkRecord(
            id=f"q{i}",
            benchmark="coordinates",
            question=f"What value appears in row {r}, column {c} of the table?",
            gold=table.cells[r - 1][c - 1].display_text,
            task_type=TaskType.TQA,
            table=table,
        )
    )

oracle = LlmRole(
    backend=ScriptedBackend(table_question_oracle, max_in_flight=8),
    role_tag="eval-model",
    model="table-oracle",
    temperature=0.0,
)

print("=== oracle across two templates and two formats ===")
cfg = EvalConfig(
    template_ids=("t1", "t2"),
    formats=(TableFormat.MARKDOWN, TableFormat.HTML),
    model=oracle,
)
responses, report = run_eval(records, cfg)
print(report.format_report())

out_dir = Path(tempfile.mkdtemp(prefix="forge-eval-")) / "report"
report.write(out_dir)
print(f"\nwrote {out_dir / 'report.jsonl'} and report.txt")

print("\n=== scoring canned responses ===")
canned = {}
for i, rec in enumerate(records):
    if i < 4:
        reply = json.dumps({"answer": rec.gold})
    elif i == 4:
        reply = json.dumps({"answer": "wrong on purpose"})
    else:
        reply = "refuses to end with JSON"
    canned[(rec.id, "t1", "markdown")] = f"Let me check the table. {reply}"

scored = score_run(records, canned, EvalConfig())
print(scored.format_report())
print("\n4 right out of 6: one wrong answer, one reply with no JSON object")
