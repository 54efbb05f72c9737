import json
import random

import pytest

from tableforge.backend import LlmRole, ProviderError, ScriptedBackend
from tableforge.catalog import SEED_TASKS
from tableforge.formats import TableFormat, serialize
from tableforge.synthesis import (
    GenerationExhausted,
    ParseFailure,
    Subtopic,
    TableAttributes,
    TableRejected,
    TopicNode,
    _attempt_seed,
    flatten_titles,
    generate_seed_instructions,
    generate_table_once,
    generate_topic_tree,
    natural_format,
    parse_seed_reply,
    sample_attributes,
    synthesize_table,
)
from tableforge.table_model import (
    ALLOWED_LEVELS,
    DEFAULT_LIMITS,
    HeaderSpec,
    SizeLimits,
    TableType,
    validate,
)
from tableforge.testing import build_demo_table, demo_handler
from testing_tables import build


def teacher_role(handler, max_in_flight=1):
    return LlmRole(
        backend=ScriptedBackend(handler, max_in_flight=max_in_flight),
        role_tag="teacher",
        model="unit-teacher",
        temperature=0.8,
    )


class TestAttributeSampling:
    def test_ranges_and_levels_over_many_draws(self):
        # acceptance criterion runs the same sweep; this is the unit copy
        rng = random.Random(6001)
        seen_types = set()
        seen_hier_levels = set()
        for _ in range(2000):
            attrs = sample_attributes(rng)
            assert DEFAULT_LIMITS.min_rows <= attrs.n_rows <= DEFAULT_LIMITS.max_rows
            assert DEFAULT_LIMITS.min_cols <= attrs.n_cols <= DEFAULT_LIMITS.max_cols
            combo = (
                attrs.header_spec.column_header_levels,
                attrs.header_spec.row_header_levels,
            )
            assert combo in ALLOWED_LEVELS[attrs.table_type]
            seen_types.add(attrs.table_type)
            if attrs.table_type is TableType.HIERARCHICAL:
                seen_hier_levels.add(combo)
            assert attrs.target_format is natural_format(attrs.table_type)
        assert seen_types == {TableType.FLAT, TableType.HORIZONTAL, TableType.HIERARCHICAL}
        assert seen_hier_levels == {(c, r) for c in (1, 2, 3) for r in (1, 2)}

    def test_custom_limits_respected(self):
        rng = random.Random(6002)
        limits = SizeLimits(5, 6, 7, 8)
        for _ in range(200):
            attrs = sample_attributes(rng, limits=limits)
            assert 5 <= attrs.n_rows <= 6
            assert 7 <= attrs.n_cols <= 8

    def test_formula_probability_extremes(self):
        rng = random.Random(6003)
        assert not any(
            sample_attributes(rng, formula_probability=0.0).wants_formulas for _ in range(100)
        )
        assert all(
            sample_attributes(rng, formula_probability=1.0).wants_formulas for _ in range(100)
        )

    def test_deterministic_in_rng(self):
        a = [sample_attributes(random.Random(17)) for _ in range(20)]
        b = [sample_attributes(random.Random(17)) for _ in range(20)]
        assert a == b

    def test_natural_format(self):
        assert natural_format(TableType.FLAT) is TableFormat.MARKDOWN
        assert natural_format(TableType.HORIZONTAL) is TableFormat.MARKDOWN
        assert natural_format(TableType.HIERARCHICAL) is TableFormat.HTML


class TestAttemptSeed:
    def test_offsets_from_base(self):
        assert _attempt_seed(100, 0) == 100
        assert _attempt_seed(100, 2) == 102

    def test_none_base(self):
        assert _attempt_seed(None, 3) == 3


class TestTopicTree:
    def test_parses_demo_teacher(self):
        teacher = teacher_role(demo_handler("teacher", master_seed=11))
        nodes = generate_topic_tree(teacher, n_topics=3, subtopics_per_topic=2,
                                    titles_per_subtopic=4, sampling_seed=1)
        assert len(nodes) == 3
        for node in nodes:
            assert len(node.subtopics) == 2
            for sub in node.subtopics:
                assert len(sub.titles) == 4

    def test_drops_malformed_entries(self):
        payload = {
            "topics": [
                {"topic": "Good", "subtopics": [{"name": "s", "titles": ["t1"]}]},
                {"topic": "", "subtopics": [{"name": "s", "titles": ["t"]}]},
                {"topic": "NoTitles", "subtopics": [{"name": "s", "titles": []}]},
                "not a dict",
            ]
        }
        teacher = teacher_role(lambda req: json.dumps(payload))
        nodes = generate_topic_tree(teacher, n_topics=4)
        assert [n.topic for n in nodes] == ["Good"]

    def test_retries_then_fails(self):
        calls = {"n": 0}

        def garbage(req):
            calls["n"] += 1
            return "no json here"

        teacher = teacher_role(garbage)
        with pytest.raises(ParseFailure):
            generate_topic_tree(teacher, n_topics=2, max_attempts=2)
        assert calls["n"] == 2

    def test_retry_uses_fresh_sampling_seed(self):
        seeds = []

        def flaky(req):
            seeds.append(req.sampling_seed)
            if len(seeds) == 1:
                return "garbage"
            return json.dumps(
                {"topics": [{"topic": "T", "subtopics": [{"name": "s", "titles": ["x"]}]}]}
            )

        generate_topic_tree(teacher_role(flaky), n_topics=1, sampling_seed=50)
        assert seeds == [50, 51]

    def test_round_trip_dict(self):
        node = TopicNode(topic="T", subtopics=(Subtopic(name="s", titles=("a", "b")),))
        assert TopicNode.from_dict(node.to_dict()) == node

    def test_flatten_titles_order(self):
        nodes = [
            TopicNode("A", (Subtopic("a1", ("t1", "t2")), Subtopic("a2", ("t3",)))),
            TopicNode("B", (Subtopic("b1", ("t4",)),)),
        ]
        assert flatten_titles(nodes) == [
            ("A", "a1", "t1"),
            ("A", "a1", "t2"),
            ("A", "a2", "t3"),
            ("B", "b1", "t4"),
        ]


def attrs_for(table):
    return TableAttributes(
        table_type=table.table_type,
        n_rows=table.n_rows,
        n_cols=table.n_cols,
        header_spec=table.header_spec,
        target_format=natural_format(table.table_type),
        wants_formulas=False,
    )


class TestGenerateTable:
    def test_accepts_wellformed_reply(self):
        reply_table = build(5, 5, title="Quarterly")
        text = serialize(reply_table, TableFormat.MARKDOWN)
        teacher = teacher_role(lambda req: f"Sure.\n```markdown\n{text}\n```")
        out = generate_table_once(
            teacher, attrs_for(reply_table), "Quarterly", "Topic", "Sub", seq=3
        )
        assert out.n_rows == 5 and out.n_cols == 5
        assert out.id.startswith("t00003-")
        assert validate(out).ok

    def test_rejects_size_mismatch(self):
        reply_table = build(5, 5)
        text = serialize(reply_table, TableFormat.MARKDOWN)
        attrs = attrs_for(reply_table)
        wrong = TableAttributes(**{**attrs.__dict__, "n_rows": 7})
        teacher = teacher_role(lambda req: text)
        with pytest.raises(TableRejected):
            generate_table_once(teacher, wrong, "T", "t", "s", seq=0)

    def test_rejects_unparseable_reply(self):
        teacher = teacher_role(lambda req: "I refuse to make a table.")
        t = build(4, 4)
        with pytest.raises(TableRejected):
            generate_table_once(teacher, attrs_for(t), "T", "t", "s", seq=0)

    def test_resolves_formulas_before_validation(self):
        t = build(4, 4)
        grid = [[c.raw_text for c in row] for row in t.cells]
        grid[1][1] = "5"
        grid[1][2] = "=R2C2 * 2"
        lines = ["| " + " | ".join(row) + " |" for row in grid]
        lines.insert(1, "| --- | --- | --- | --- |")
        teacher = teacher_role(lambda req: "\n".join(lines))
        out = generate_table_once(teacher, attrs_for(t), "T", "t", "s", seq=0)
        assert out.cells[1][2].display_text == "10"
        assert out.cells[1][2].raw_text == "=R2C2 * 2"

    def test_rejects_cyclic_formulas(self):
        t = build(4, 4)
        grid = [[c.raw_text for c in row] for row in t.cells]
        grid[1][1] = "=R2C3"
        grid[1][2] = "=R2C2"
        lines = ["| " + " | ".join(row) + " |" for row in grid]
        lines.insert(1, "| --- | --- | --- | --- |")
        teacher = teacher_role(lambda req: "\n".join(lines))
        with pytest.raises(TableRejected):
            generate_table_once(teacher, attrs_for(t), "T", "t", "s", seq=0)


class TestSynthesizeTable:
    def test_demo_teacher_end_to_end(self):
        teacher = teacher_role(demo_handler("teacher", master_seed=12))
        rng = random.Random(60)
        table = synthesize_table(teacher, "Demo Title", "Topic", "Sub", seq=1, rng=rng,
                                 sampling_seed=9)
        assert validate(table).ok
        assert table.title == "Demo Title"

    def test_budget_exhaustion(self):
        teacher = teacher_role(lambda req: "never a table")
        with pytest.raises(GenerationExhausted) as exc:
            synthesize_table(teacher, "T", "t", "s", seq=2, rng=random.Random(1), budget=3)
        assert "3 attempts" in str(exc.value)

    def test_backend_error_counts_against_budget(self):
        calls = {"n": 0}

        def flaky(req):
            calls["n"] += 1
            raise ProviderError("down")

        teacher = teacher_role(flaky)
        with pytest.raises(GenerationExhausted):
            synthesize_table(teacher, "T", "t", "s", seq=0, rng=random.Random(2), budget=2)
        assert calls["n"] == 2


class TestSeedInstructions:
    def test_samples_without_replacement(self):
        table = build_demo_table(random.Random(5), TableType.FLAT, 5, 5,
                                 HeaderSpec(1, 0), "T", "topic", "sub")
        seen_tasks = []

        def handler(req):
            line = [l for l in req.user.splitlines() if l.startswith("Task: ")][0]
            seen_tasks.append(line.removeprefix("Task: "))
            return json.dumps({"instruction": "Do the thing.", "response": "Done."})

        out = generate_seed_instructions(
            teacher_role(handler), table, list(SEED_TASKS), k=20, rng=random.Random(3)
        )
        assert len(out) == 20
        assert len(set(seen_tasks)) == 20

    def test_k_larger_than_pool_is_capped(self):
        table = build_demo_table(random.Random(5), TableType.FLAT, 5, 5,
                                 HeaderSpec(1, 0), "T", "topic", "sub")
        teacher = teacher_role(
            lambda req: json.dumps({"instruction": "i", "response": "r"})
        )
        out = generate_seed_instructions(teacher, table, list(SEED_TASKS), k=99,
                                         rng=random.Random(4))
        assert len(out) == 20

    def test_malformed_replies_dropped_not_fatal(self):
        table = build_demo_table(random.Random(5), TableType.FLAT, 5, 5,
                                 HeaderSpec(1, 0), "T", "topic", "sub")
        count = {"n": 0}

        def handler(req):
            count["n"] += 1
            if count["n"] % 2:
                return "not json"
            return json.dumps({"instruction": "i", "response": "r"})

        out = generate_seed_instructions(teacher_role(handler), table, list(SEED_TASKS),
                                         k=6, rng=random.Random(5))
        assert len(out) == 3

    def test_k_must_be_positive(self):
        table = build_demo_table(random.Random(5), TableType.FLAT, 5, 5,
                                 HeaderSpec(1, 0), "T", "topic", "sub")
        with pytest.raises(ValueError):
            generate_seed_instructions(teacher_role(lambda r: "x"), table,
                                       list(SEED_TASKS), k=0, rng=random.Random(6))

    def test_parse_seed_reply_builds_round0_lineage(self):
        table = build(4, 4).with_id("t00001-deadbeef")
        task = SEED_TASKS[0]
        sample = parse_seed_reply(
            json.dumps({"instruction": "Ask.", "response": "Answer."}),
            table, task, TableFormat.MARKDOWN,
        )
        assert sample.lineage.round == 0
        assert sample.lineage.parent_id is None
        assert sample.lineage.origin_task == task.name
        assert sample.table_id == table.id

    def test_parse_seed_reply_rejects_empty_fields(self):
        table = build(4, 4).with_id("t00001-deadbeef")
        with pytest.raises(ParseFailure):
            parse_seed_reply(json.dumps({"instruction": " ", "response": "r"}),
                             table, SEED_TASKS[0], TableFormat.MARKDOWN)
