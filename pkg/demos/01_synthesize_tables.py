"""Stage 1 from the inside: topic tree, attribute draws, tables, seed tasks.

Runs entirely against the built-in scripted teacher, so it is offline and
deterministic: rerunning prints the same tree, the same tables, and the
same seed instructions every time.
"""

import random

from tableforge.catalog import SEED_TASKS
from tableforge.formats import TableFormat, serialize
from tableforge.synthesis import (
    flatten_titles,
    generate_seed_instructions,
    generate_topic_tree,
    sample_attributes,
    synthesize_table,
)
from tableforge.table_model import SizeLimits, validate
from tableforge.testing import build_scripted_roles

MASTER_SEED = 11

roles = build_scripted_roles(MASTER_SEED)
teacher = roles["teacher"]

print("=== topic tree ===")
nodes = generate_topic_tree(teacher, n_topics=3, subtopics_per_topic=2, titles_per_subtopic=2)
for node in nodes:
    print(node.topic)
    for sub in node.subtopics:
        print(f"  {sub.name}: {', '.join(sub.titles)}")

titles = flatten_titles(nodes)
print(f"\n{len(titles)} table slots from the tree")

print("\n=== attribute draws ===")
rng = random.Random(MASTER_SEED)
for _ in range(3):
    attrs = sample_attributes(rng)
    print(
        f"{attrs.table_type.value:>12}  {attrs.n_rows}x{attrs.n_cols}  "
        f"headers {attrs.header_spec.column_header_levels}/{attrs.header_spec.row_header_levels}  "
        f"formulas={attrs.wants_formulas}"
    )

print("\n=== one synthesized table ===")
# small limits keep the printout readable; the pipeline default is 4..43 x 4..45
topic, subtopic, title = titles[0]
table = synthesize_table(
    teacher, title, topic, subtopic, seq=0,
    rng=random.Random(MASTER_SEED), limits=SizeLimits(4, 7, 4, 6),
)
report = validate(table)
print(f"id={table.id}  {table.n_rows}x{table.n_cols}  valid={report.ok}")
print(serialize(table, TableFormat.MARKDOWN))

print("=== seed instructions ===")
samples = generate_seed_instructions(teacher, table, list(SEED_TASKS), k=4, rng=random.Random(3))
for sample in samples:
    print(f"[{sample.lineage.origin_task}] {sample.instruction}")
    print(f"    -> {sample.response}")
