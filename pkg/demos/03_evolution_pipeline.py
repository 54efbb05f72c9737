"""The whole loop: synthesize, evolve against weaknesses, judge, export.

Runs the pipeline twice in a temporary directory with the scripted demo
models. The first attempt is stopped right after round-1 judging, the
way a crashed job would stop; the second call resumes from the stage
files and finishes without repeating a single model call.
"""

import random
import tempfile
from collections import Counter
from pathlib import Path

from tableforge.backend import ScriptedBackend
from tableforge.jsonl import read_jsonl
from tableforge.pipeline import PipelineConfig, PipelineInterrupted, run_pipeline
from tableforge.testing import demo_handler

root = Path(tempfile.mkdtemp(prefix="forge-demo-"))
cfg = PipelineConfig(
    master_seed=23,
    n_tables=6,
    seeds_per_table=2,
    n_rounds=2,
    children_per_direction=1,
    n_topics=3,
    subtopics_per_topic=2,
    titles_per_subtopic=1,
    run_root=root,
)


def fresh_backends():
    return {
        name: ScriptedBackend(demo_handler(name, cfg.master_seed), max_in_flight=8)
        for name in ("teacher", "target", "judge")
    }


print("=== first attempt, killed after round-1 judging ===")
first = fresh_backends()
try:
    run_pipeline(cfg, backends=first, stop_after="round1:judgments")
except PipelineInterrupted as stop:
    print(f"interrupted: {stop}")
calls_before = {name: backend.call_count for name, backend in first.items()}
print(f"calls so far: {calls_before}")

print("\n=== resume ===")
second = fresh_backends()
dataset = run_pipeline(cfg, backends=second)
print(f"resume calls: { {name: b.call_count for name, b in second.items()} }")
overlap = set().union(*(b.fingerprints for b in first.values())) & set().union(
    *(b.fingerprints for b in second.values())
)
print(f"requests repeated across the interruption: {len(overlap)}")

print("\n=== run directory ===")
for path in sorted(cfg.run_dir.rglob("*.jsonl")):
    rel = path.relative_to(cfg.run_dir)
    print(f"{rel}  ({len(read_jsonl(path))} records)")

print("\n=== export ===")
records = read_jsonl(cfg.run_dir / "export.jsonl")
by_round = Counter(rec["lineage"]["round"] for rec in records)
print(f"{len(records)} samples; per round: {dict(sorted(by_round.items()))}")
evolved = [rec for rec in records if rec["lineage"]["round"] > 0]
strategies = Counter(rec["lineage"]["strategy"] for rec in evolved)
print(f"evolution strategies used: {dict(strategies.most_common(5))}")

sample = random.Random(0).choice(evolved)
print("\none evolved sample:")
for key in ("id", "table_id", "instruction", "response", "judge_score"):
    print(f"  {key}: {sample[key]}")
print(f"  lineage: {sample['lineage']}")
