"""Benchmark evaluation: records, prompts, answer matching, scoring."""

import json
import logging
from pathlib import Path

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from tableforge.backend import LlmRole, ProviderError, ScriptedBackend
from tableforge.evalharness import (
    BenchmarkRecord,
    BenchmarkScore,
    EvalConfig,
    EvalReport,
    MissingTemplate,
    TEMPLATE_FILES,
    TaskType,
    assemble_prompt,
    cell_keys,
    exact_match,
    extract_answer,
    judge_t2t,
    load_benchmark,
    normalize_answer,
    run_eval,
    score_run,
)
from tableforge.formats import TableFormat, serialize
from tableforge.jsonl import read_jsonl
from tableforge.testing import random_table, t2t_containment_judge, table_question_oracle

import random

FIXTURES = Path(__file__).parent / "fixtures"


def bench_records():
    return load_benchmark(FIXTURES / "eval_bench.jsonl")


def fixture_responses():
    return {
        (row["record_id"], row["template_id"], row["format"]): row["response"]
        for row in read_jsonl(FIXTURES / "eval_responses.jsonl")
    }


def make_record(task_type=TaskType.TQA, gold="42", rec_id="r1", benchmark="bench"):
    table = random_table(random.Random(5), seq=1)
    return BenchmarkRecord(
        id=rec_id,
        benchmark=benchmark,
        question='What value appears in row 1, column 1 of the table?',
        gold=gold,
        task_type=task_type,
        table=table,
    )


def oracle_role():
    return LlmRole(
        backend=ScriptedBackend(table_question_oracle),
        role_tag="target",
        model="table-oracle",
        temperature=0.0,
    )


def judge_role(handler):
    return LlmRole(
        backend=ScriptedBackend(handler),
        role_tag="judge",
        model="scripted-judge",
        temperature=0.0,
    )


# ---------------------------------------------------------------------------
# answer normalization


class TestNormalizeAnswer:
    def test_strips_outer_quotes(self):
        assert normalize_answer('"Paris"') == "paris"
        assert normalize_answer("'Paris'") == "paris"

    def test_strips_trailing_period_and_whitespace(self):
        assert normalize_answer("  Paris.  ") == "paris"
        assert normalize_answer("done...") == "done"

    def test_lowercases(self):
        assert normalize_answer("ENTAILED") == "entailed"

    def test_numbers_reduce_to_canonical_form(self):
        assert normalize_answer("5.0") == "5"
        assert normalize_answer("1.2E+3") == "1200"
        assert normalize_answer("0.500") == "0.5"
        assert normalize_answer("042") == "42"
        assert normalize_answer("-0.0") == "-0"

    def test_quoted_number_is_still_a_number(self):
        assert normalize_answer('"5.0"') == "5"

    def test_non_finite_decimals_stay_text(self):
        assert normalize_answer("NaN") == "nan"
        assert normalize_answer("Infinity") == "infinity"

    def test_sequences_normalize_elementwise(self):
        assert normalize_answer(["5.0", "B "]) == ("5", "b")
        assert normalize_answer(("YES.",)) == ("yes",)

    def test_non_string_scalars_coerced(self):
        assert normalize_answer(5) == "5"
        assert normalize_answer(2.5) == "2.5"

    def test_empty_string(self):
        assert normalize_answer("") == ""

    @given(st.text(alphabet="abcdfghij0123456789 .,-", max_size=24))
    @settings(max_examples=200)
    def test_idempotent_on_plain_text(self, text):
        once = normalize_answer(text)
        assert normalize_answer(once) == once

    def test_quote_stripping_happens_before_period_stripping(self):
        # Single normalization pass: quotes hidden behind a trailing period
        # stay; both sides of a comparison get the same treatment.
        assert normalize_answer('"abc".') == '"abc"'


class TestExtractAnswer:
    def test_pulls_last_json_object(self):
        text = 'first {"answer": "1"} then {"answer": "5.0"} done'
        assert extract_answer(text) == "5"

    def test_list_answers_become_tuples(self):
        assert extract_answer('{"answer": ["B", "A"]}') == ("b", "a")

    def test_none_without_answer_key(self):
        assert extract_answer("no json here") is None
        assert extract_answer('{"verdict": "correct"}') is None

    def test_ignores_objects_missing_the_key(self):
        text = '{"answer": "yes"} {"note": "ignored"}'
        assert extract_answer(text) == "yes"


class TestExactMatch:
    def test_scalar_equality(self):
        assert exact_match("paris", "paris") == 1
        assert exact_match("paris", "rome") == 0

    def test_none_prediction_scores_zero(self):
        assert exact_match(None, "paris") == 0

    def test_singleton_tuple_matches_scalar(self):
        assert exact_match("a", ("a",)) == 1
        assert exact_match(("a",), "a") == 1

    def test_tuples_compare_as_sets(self):
        assert exact_match(("b", "a"), ("a", "b")) == 1
        assert exact_match(("a", "a"), ("a",)) == 1
        assert exact_match(("a", "b"), ("a",)) == 0


# ---------------------------------------------------------------------------
# free-text judging


class TestJudgeT2t:
    def test_correct_verdict(self):
        role = judge_role(lambda req: '{"verdict": "correct"}')
        assert judge_t2t("resp", "gold", role) == 1

    def test_incorrect_verdict(self):
        role = judge_role(lambda req: '{"verdict": "incorrect"}')
        assert judge_t2t("resp", "gold", role) == 0

    def test_prompt_carries_gold_and_response(self):
        backend = ScriptedBackend(lambda req: '{"verdict": "correct"}')
        role = LlmRole(backend=backend, role_tag="judge", model="m", temperature=0.0)
        judge_t2t("the candidate text", "the gold text", role)
        user = backend.calls[0].user
        assert "the gold text" in user
        assert "the candidate text" in user

    def test_reask_recovers_and_bumps_sampling_seed(self, caplog):
        backend = ScriptedBackend.from_replies(["static", '{"verdict": "correct"}'])
        role = LlmRole(backend=backend, role_tag="judge", model="m", temperature=0.0)
        with caplog.at_level(logging.WARNING, logger="tableforge.evalharness"):
            assert judge_t2t("r", "g", role, reasks=2) == 1
        assert backend.call_count == 2
        assert [req.sampling_seed for req in backend.calls] == [0, 1]
        assert any("unparseable t2t verdict" in r.message for r in caplog.records)

    def test_off_contract_verdict_counts_as_unparseable(self):
        role = judge_role(lambda req: '{"verdict": "maybe"}')
        assert judge_t2t("r", "g", role, reasks=0) == 0

    def test_fails_closed_after_exhausting_reasks(self, caplog):
        backend = ScriptedBackend(lambda req: "never json")
        role = LlmRole(backend=backend, role_tag="judge", model="m", temperature=0.0)
        with caplog.at_level(logging.WARNING, logger="tableforge.evalharness"):
            assert judge_t2t("r", "g", role, reasks=2) == 0
        assert backend.call_count == 3
        assert any("counted incorrect after 3 attempts" in r.message for r in caplog.records)

    def test_backend_errors_are_retried(self, caplog):
        replies = iter([ProviderError("flaky"), '{"verdict": "correct"}'])

        def handle(req):
            item = next(replies)
            if isinstance(item, Exception):
                raise item
            return item

        role = judge_role(handle)
        with caplog.at_level(logging.WARNING, logger="tableforge.evalharness"):
            assert judge_t2t("r", "g", role, reasks=1) == 1
        assert any("judge call failed" in r.message for r in caplog.records)

    def test_containment_judge_contract(self):
        role = judge_role(t2t_containment_judge)
        assert judge_t2t("Revenue rose 10% in Q2.", "revenue rose 10%", role) == 1
        assert judge_t2t("Totally unrelated.", "revenue rose 10%", role) == 0


# ---------------------------------------------------------------------------
# records and configuration


class TestBenchmarkRecord:
    def test_list_gold_becomes_tuple(self):
        rec = make_record(gold=["a", "b"])
        assert rec.gold == ("a", "b")

    def test_tfv_gold_is_canonicalized(self):
        rec = make_record(task_type=TaskType.TFV, gold=" Entailed ")
        assert rec.gold == "entailed"

    def test_tfv_rejects_unknown_label(self):
        with pytest.raises(ValueError, match="not entailed/refuted"):
            make_record(task_type=TaskType.TFV, gold="maybe")

    def test_tfv_rejects_multi_part_gold(self):
        with pytest.raises(ValueError, match="single label"):
            make_record(task_type=TaskType.TFV, gold=["entailed", "refuted"])

    def test_from_record_with_structured_table(self):
        table = random_table(random.Random(7), seq=2)
        rec = BenchmarkRecord.from_record(
            {
                "id": 9,
                "question": "q",
                "gold": ["1", "2"],
                "task_type": "tqa",
                "table": table.to_record(),
            }
        )
        assert rec.id == "9"
        assert rec.benchmark == "unnamed"
        assert rec.task_type is TaskType.TQA
        assert rec.gold == ("1", "2")
        assert rec.table.n_rows == table.n_rows

    def test_from_record_with_html_table(self):
        table = random_table(random.Random(8), seq=3, with_merges=True)
        rec = BenchmarkRecord.from_record(
            {
                "id": "h1",
                "benchmark": "b",
                "question": "q",
                "gold": "x",
                "task_type": "TFV" if False else "T2T",
                "table": serialize(table, TableFormat.HTML),
            }
        )
        assert rec.table.n_rows == table.n_rows
        assert rec.table.merged_regions == table.merged_regions

    def test_load_benchmark_fixture(self):
        records = bench_records()
        assert len(records) == 20
        assert {rec.benchmark for rec in records} == {"handmix"}
        assert sum(rec.task_type is TaskType.TQA for rec in records) == 12
        assert sum(rec.task_type is TaskType.TFV for rec in records) == 8


class TestEvalConfig:
    def test_defaults(self):
        cfg = EvalConfig()
        assert cfg.template_ids == ("t1",)
        assert cfg.formats == (TableFormat.MARKDOWN,)
        assert cfg.model is None and cfg.judge is None
        assert cfg.temperature == 0.01
        assert cfg.judge_reasks == 2

    def test_rejects_empty_axes(self):
        with pytest.raises(ValueError):
            EvalConfig(template_ids=())
        with pytest.raises(ValueError):
            EvalConfig(formats=())

    def test_rejects_unknown_template(self):
        with pytest.raises(MissingTemplate):
            EvalConfig(template_ids=("t1", "t9"))

    def test_template_registry(self):
        assert set(TEMPLATE_FILES) == {"t1", "t2", "t3"}


# ---------------------------------------------------------------------------
# prompt assembly


class TestAssemblePrompt:
    def test_tqa_prompt_has_fenced_table_question_and_json_clause(self):
        rec = make_record()
        text = assemble_prompt(rec, "t1", TableFormat.MARKDOWN)
        assert "BEGIN TABLE" in text and "END TABLE" in text
        assert rec.question in text
        assert '{"answer"' in text
        assert "Use a JSON list" in text

    def test_tfv_prompt_pins_the_two_labels(self):
        rec = make_record(task_type=TaskType.TFV, gold="entailed")
        text = assemble_prompt(rec, "t1", TableFormat.MARKDOWN)
        assert '{"answer": "entailed"}' in text
        assert '{"answer": "refuted"}' in text

    def test_t2t_prompt_has_no_json_clause(self):
        rec = make_record(task_type=TaskType.T2T, gold="a summary")
        text = assemble_prompt(rec, "t1", TableFormat.MARKDOWN)
        assert '{"answer"' not in text

    def test_format_changes_the_table_block(self):
        rec = make_record()
        md = assemble_prompt(rec, "t1", TableFormat.MARKDOWN)
        html = assemble_prompt(rec, "t1", TableFormat.HTML)
        assert "|" in md
        assert "<table>" in html

    def test_templates_differ(self):
        rec = make_record()
        rendered = {assemble_prompt(rec, tid, TableFormat.MARKDOWN) for tid in ("t1", "t2", "t3")}
        assert len(rendered) == 3

    def test_unknown_template_raises(self):
        with pytest.raises(MissingTemplate):
            assemble_prompt(make_record(), "t9", TableFormat.MARKDOWN)


def test_cell_keys_row_major_order():
    recs = [make_record(rec_id="a"), make_record(rec_id="b")]
    cfg = EvalConfig(template_ids=("t1", "t2"), formats=(TableFormat.MARKDOWN, TableFormat.HTML))
    cells = cell_keys(recs, cfg)
    flat = [(rec.id, tid, fmt.value) for rec, tid, fmt in cells]
    assert flat == [
        ("a", "t1", "markdown"),
        ("a", "t1", "html"),
        ("a", "t2", "markdown"),
        ("a", "t2", "html"),
        ("b", "t1", "markdown"),
        ("b", "t1", "html"),
        ("b", "t2", "markdown"),
        ("b", "t2", "html"),
    ]


# ---------------------------------------------------------------------------
# scoring


class TestScoreRun:
    def test_fixture_accuracy_is_065(self):
        report = score_run(bench_records(), fixture_responses(), EvalConfig())
        assert len(report.scores) == 1
        score = report.scores[0]
        assert (score.benchmark, score.n, score.correct) == ("handmix", 20, 13)
        assert score.accuracy == pytest.approx(0.65)
        assert report.macro_average == pytest.approx(0.65)

    def test_fixture_agrees_with_hand_labels(self):
        by_id = {row["record_id"]: row["hand_label"] for row in read_jsonl(FIXTURES / "eval_responses.jsonl")}
        responses = fixture_responses()
        cfg = EvalConfig()
        for rec in bench_records():
            solo = score_run([rec], responses, cfg)
            assert solo.scores[0].correct == int(by_id[rec.id] == "correct"), rec.id

    def test_missing_cell_skipped_with_warning(self, caplog):
        responses = fixture_responses()
        del responses[("tqa00", "t1", "markdown")]
        with caplog.at_level(logging.WARNING, logger="tableforge.evalharness"):
            report = score_run(bench_records(), responses, EvalConfig())
        assert report.scores[0].n == 19
        assert report.scores[0].correct == 12  # tqa00 was a correct cell
        assert any("no response for cell" in r.message for r in caplog.records)

    def test_t2t_requires_judge(self):
        rec = make_record(task_type=TaskType.T2T, gold="summary text")
        with pytest.raises(ValueError, match="judge"):
            score_run([rec], {("r1", "t1", "markdown"): "whatever"}, EvalConfig())

    def test_t2t_scored_through_judge(self):
        rec = make_record(task_type=TaskType.T2T, gold="revenue rose 10%")
        cfg = EvalConfig(judge=judge_role(t2t_containment_judge))
        responses = {("r1", "t1", "markdown"): "Revenue rose 10% across all regions."}
        report = score_run([rec], responses, cfg)
        assert report.scores[0].correct == 1

    def test_t2t_tuple_gold_joined_for_judge(self):
        rec = make_record(task_type=TaskType.T2T, gold=["part one", "part two"])
        backend = ScriptedBackend(lambda req: '{"verdict": "correct"}')
        cfg = EvalConfig(judge=LlmRole(backend=backend, role_tag="judge", model="m", temperature=0.0))
        score_run([rec], {("r1", "t1", "markdown"): "x"}, cfg)
        assert "part one; part two" in backend.calls[0].user

    def test_unscored_benchmark_excluded_from_macro(self, caplog):
        hit = make_record(rec_id="a", benchmark="alpha")
        ghost = make_record(rec_id="b", benchmark="beta")
        responses = {("a", "t1", "markdown"): json.dumps({"answer": "42"})}
        with caplog.at_level(logging.WARNING, logger="tableforge.evalharness"):
            report = score_run([hit, ghost], responses, EvalConfig())
        by_name = {s.benchmark: s for s in report.scores}
        assert by_name["alpha"].accuracy == 1.0
        assert (by_name["beta"].n, by_name["beta"].accuracy) == (0, 0.0)
        assert report.macro_average == pytest.approx(1.0)
        assert any("excluded from macro average" in r.message for r in caplog.records)

    def test_macro_averages_benchmarks_not_cells(self):
        # alpha: 1 cell, right; beta: 3 cells, all wrong. Micro would be 0.25.
        recs = [make_record(rec_id="a", benchmark="alpha")] + [
            make_record(rec_id=f"b{i}", benchmark="beta") for i in range(3)
        ]
        responses = {("a", "t1", "markdown"): '{"answer": "42"}'}
        responses.update({(f"b{i}", "t1", "markdown"): '{"answer": "no"}' for i in range(3)})
        report = score_run(recs, responses, EvalConfig())
        assert report.macro_average == pytest.approx(0.5)

    def test_benchmarks_sorted_by_name(self):
        recs = [make_record(rec_id="z", benchmark="zeta"), make_record(rec_id="a", benchmark="alpha")]
        responses = {
            ("z", "t1", "markdown"): '{"answer": "42"}',
            ("a", "t1", "markdown"): '{"answer": "42"}',
        }
        report = score_run(recs, responses, EvalConfig())
        assert [s.benchmark for s in report.scores] == ["alpha", "zeta"]


class TestEvalReport:
    def make(self):
        return EvalReport(
            scores=(
                BenchmarkScore(benchmark="alpha", n=4, correct=3),
                BenchmarkScore(benchmark="beta", n=10, correct=5),
            ),
            macro_average=0.625,
        )

    def test_records_include_macro_row(self):
        rows = self.make().to_records()
        assert rows[-1] == {"benchmark": "MACRO_AVERAGE", "n": 14, "correct": 8, "accuracy": 0.625}
        assert rows[0] == {"benchmark": "alpha", "n": 4, "correct": 3, "accuracy": 0.75}

    def test_macro_row_accuracy_none_when_nothing_scored(self):
        report = EvalReport(scores=(BenchmarkScore(benchmark="a", n=0, correct=0),), macro_average=None)
        assert report.to_records()[-1]["accuracy"] is None

    def test_text_report_lines(self):
        text = self.make().format_report()
        lines = text.splitlines()
        assert lines[0].split() == ["benchmark", "n", "correct", "accuracy"]
        assert "alpha" in lines[1] and "0.7500" in lines[1]
        assert "macro average" in lines[-1] and "0.6250" in lines[-1]

    def test_write_emits_both_files(self, tmp_path):
        out = tmp_path / "eval"
        self.make().write(out)
        rows = read_jsonl(out / "report.jsonl")
        assert [row["benchmark"] for row in rows] == ["alpha", "beta", "MACRO_AVERAGE"]
        text = (out / "report.txt").read_text(encoding="utf-8")
        assert text.endswith("\n")
        assert "macro average" in text


# ---------------------------------------------------------------------------
# end-to-end offline run


class TestRunEval:
    def test_requires_model(self):
        with pytest.raises(ValueError, match="model"):
            run_eval(bench_records(), EvalConfig())

    def test_oracle_model_scores_every_cell(self):
        records = bench_records()[:5]
        cfg = EvalConfig(
            template_ids=("t1", "t2"),
            formats=(TableFormat.MARKDOWN, TableFormat.HTML),
            model=oracle_role(),
        )
        responses, report = run_eval(records, cfg)
        assert len(responses) == len(records) * 4
        assert report.scores[0].n == len(records) * 4
        assert report.scores[0].accuracy == 1.0

    def test_accuracy_invariant_across_formats_and_templates(self):
        # The oracle re-parses whatever format the prompt used, so every
        # (template, format) slice lands on the same accuracy.
        records = bench_records()[:4]
        accuracies = set()
        for tid in ("t1", "t3"):
            for fmt in (TableFormat.CSV, TableFormat.HTML):
                cfg = EvalConfig(template_ids=(tid,), formats=(fmt,), model=oracle_role())
                _, report = run_eval(records, cfg)
                accuracies.add(report.scores[0].accuracy)
        assert accuracies == {1.0}

    def test_backend_failure_becomes_empty_response(self, caplog):
        records = bench_records()[:2]
        target_question = records[0].question

        def handle(req):
            if target_question in req.user:
                raise ProviderError("boom")
            return table_question_oracle(req)

        role = LlmRole(backend=ScriptedBackend(handle), role_tag="target", model="m", temperature=0.0)
        cfg = EvalConfig(model=role)
        with caplog.at_level(logging.WARNING, logger="tableforge.evalharness"):
            responses, report = run_eval(records, cfg)
        assert responses[(records[0].id, "t1", "markdown")] == ""
        assert report.scores[0] == BenchmarkScore(benchmark="handmix", n=2, correct=1)
        assert any("model call failed" in r.message for r in caplog.records)

    def test_requests_use_config_temperature(self):
        backend = ScriptedBackend(table_question_oracle)
        role = LlmRole(backend=backend, role_tag="target", model="m", temperature=0.9)
        cfg = EvalConfig(model=role, temperature=0.01)
        run_eval(bench_records()[:1], cfg)
        assert backend.calls[0].temperature == 0.01
