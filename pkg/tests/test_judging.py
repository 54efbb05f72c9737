import json
import logging

import pytest

from tableforge.backend import LlmRole, ScriptedBackend
from tableforge.formats import TableFormat
from tableforge.judging import (
    WEAKNESS_THRESHOLD,
    JudgeVerdict,
    SafetyVerdict,
    UnscorableSample,
    build_judge_request,
    judge,
    parse_judge_reply,
    parse_safety_reply,
    partition,
    safety_screen,
    target_answer,
)
from tableforge.samples import InstructionSample, Lineage
from testing_tables import build


def sample_for(table, score=None, n=0):
    return InstructionSample(
        id=f"s{n:05d}",
        table_id=table.id,
        instruction="What is in row 2, column 2?",
        response="The value is r1c1.",
        lineage=Lineage(round=0, origin_task="Information seeking problem"),
        table_format=TableFormat.MARKDOWN,
        judge_score=score,
    )


def judge_role(handler):
    return LlmRole(backend=ScriptedBackend(handler), role_tag="judge",
                   model="unit-judge", temperature=0.01)


class TestParseJudgeReply:
    def test_fixture_corpus(self, fixtures_dir):
        # 30 captured replies, 3 deliberately malformed; parsing must never
        # raise and must score exactly the 27 well-formed ones
        rows = [json.loads(line) for line in
                (fixtures_dir / "judge_replies.jsonl").read_text().splitlines()]
        assert len(rows) == 30
        parsed = 0
        for row in rows:
            out = parse_judge_reply(row["reply"])
            if row["expected"] is None:
                assert out is None, row["reply"]
            else:
                assert out is not None, row["reply"]
                assert out[0] == row["expected"], row["reply"]
                parsed += 1
        assert parsed == 27

    def test_bool_score_rejected(self):
        assert parse_judge_reply('{"score": true}') is None

    def test_integral_float_accepted(self):
        assert parse_judge_reply('{"score": 4.0}')[0] == 4

    def test_fractional_float_rejected(self):
        assert parse_judge_reply('{"score": 3.5}') is None

    def test_out_of_range_rejected(self):
        assert parse_judge_reply('{"score": 0}') is None
        assert parse_judge_reply('{"score": 6}') is None

    def test_last_object_wins(self):
        text = 'first {"score": 1} then {"score": 5, "rationale": "good"}'
        assert parse_judge_reply(text) == (5, "good")

    def test_rationale_falls_back_to_whole_reply(self):
        out = parse_judge_reply('prefix {"score": 2}')
        assert out == (2, 'prefix {"score": 2}')


class TestJudge:
    def test_verdict_and_threshold(self):
        t = build(4, 4).with_id("t00001-aaaaaaaa")
        role = judge_role(lambda r: '{"score": 2, "rationale": "wrong cell"}')
        v = judge(sample_for(t), t, "some answer", role)
        assert v == JudgeVerdict(score=2, rationale="wrong cell", is_weakness=True)

    def test_boundary_score_three_is_not_weak(self):
        t = build(4, 4).with_id("t00001-aaaaaaaa")
        role = judge_role(lambda r: '{"score": 3}')
        assert judge(sample_for(t), t, "answer", role).is_weakness is False

    def test_reasks_then_unscorable(self, caplog):
        t = build(4, 4).with_id("t00001-aaaaaaaa")
        backend = ScriptedBackend(lambda r: "I cannot score this.")
        role = LlmRole(backend=backend, role_tag="judge", model="m", temperature=0.01)
        with caplog.at_level(logging.WARNING, logger="tableforge.judging"):
            with pytest.raises(UnscorableSample):
                judge(sample_for(t), t, "answer", role, max_reasks=2)
        assert backend.call_count == 3
        assert sum("unparseable judge reply" in r.message for r in caplog.records) == 3

    def test_reask_changes_fingerprint(self):
        t = build(4, 4).with_id("t00001-aaaaaaaa")
        seen = []

        def flaky(req):
            seen.append(req.sampling_seed)
            return "garbage" if len(seen) < 3 else '{"score": 4}'

        role = judge_role(flaky)
        v = judge(sample_for(t), t, "answer", role, sampling_seed=10)
        assert v.score == 4
        assert seen == [10, 11, 12]

    def test_recovers_on_second_attempt(self):
        t = build(4, 4).with_id("t00001-aaaaaaaa")
        replies = iter(["not json", '{"score": 5, "rationale": "ok"}'])
        role = judge_role(lambda r: next(replies))
        assert judge(sample_for(t), t, "answer", role).score == 5

    def test_empty_responses_rejected(self):
        t = build(4, 4).with_id("t00001-aaaaaaaa")
        role = judge_role(lambda r: '{"score": 5}')
        with pytest.raises(ValueError):
            judge(sample_for(t), t, "   ", role)

    def test_request_contains_all_parts(self):
        t = build(4, 4).with_id("t00001-aaaaaaaa")
        s = sample_for(t)
        req = build_judge_request(judge_role(lambda r: "x"), s, t, "target says 42")
        assert s.instruction in req.user
        assert s.response in req.user
        assert "target says 42" in req.user
        assert "BEGIN TABLE" in req.user

    def test_from_score_range_check(self):
        with pytest.raises(ValueError):
            JudgeVerdict.from_score(0, "r")
        with pytest.raises(ValueError):
            JudgeVerdict.from_score(6, "r")


class TestPartition:
    def test_splits_on_threshold(self):
        t = build(4, 4).with_id("t00001-aaaaaaaa")
        samples = [sample_for(t, score=s, n=s) for s in (1, 2, 3, 4, 5)]
        weak, passed = partition(samples)
        assert [s.judge_score for s in weak] == [1, 2]
        assert [s.judge_score for s in passed] == [3, 4, 5]

    def test_preserves_input_order(self):
        t = build(4, 4).with_id("t00001-aaaaaaaa")
        samples = [sample_for(t, score=s, n=i) for i, s in enumerate((5, 1, 4, 2))]
        weak, passed = partition(samples)
        assert [s.id for s in weak] == ["s00001", "s00003"]
        assert [s.id for s in passed] == ["s00000", "s00002"]

    def test_unscored_sample_is_an_error(self):
        t = build(4, 4).with_id("t00001-aaaaaaaa")
        with pytest.raises(ValueError):
            partition([sample_for(t, score=None)])

    def test_custom_threshold(self):
        t = build(4, 4).with_id("t00001-aaaaaaaa")
        samples = [sample_for(t, score=s, n=s) for s in (1, 2, 3, 4, 5)]
        weak, _ = partition(samples, threshold=5)
        assert [s.judge_score for s in weak] == [1, 2, 3, 4]

    def test_threshold_constant(self):
        assert WEAKNESS_THRESHOLD == 3


class TestTargetAnswer:
    def test_returns_backend_text(self):
        t = build(4, 4).with_id("t00001-aaaaaaaa")
        role = LlmRole(backend=ScriptedBackend(lambda r: "it is r1c1"),
                       role_tag="target", model="m", temperature=0.01)
        assert target_answer(sample_for(t), t, role) == "it is r1c1"


class TestSafety:
    def test_parse_safe(self):
        assert parse_safety_reply("SAFE") == SafetyVerdict(flagged=False)
        assert parse_safety_reply("\n  safe  \n") == SafetyVerdict(flagged=False)

    def test_parse_unsafe_with_reason(self):
        v = parse_safety_reply("UNSAFE: promotes harm")
        assert v.flagged and v.reason == "promotes harm"

    def test_parse_unsafe_without_reason(self):
        v = parse_safety_reply("UNSAFE")
        assert v.flagged and v.reason == "unspecified"

    def test_off_contract_fails_closed(self):
        v = parse_safety_reply("This looks fine to me!")
        assert v.flagged
        assert v.reason == "unparseable safety reply"

    def test_empty_reply_fails_closed(self):
        assert parse_safety_reply("").flagged

    def test_screen_logs_flag(self, caplog):
        t = build(4, 4).with_id("t00001-aaaaaaaa")
        role = judge_role(lambda r: "UNSAFE: bad content")
        with caplog.at_level(logging.WARNING, logger="tableforge.judging"):
            v = safety_screen(sample_for(t), t, role)
        assert v.flagged
        assert any("safety flag" in r.message for r in caplog.records)

    def test_screen_passes_clean(self):
        t = build(4, 4).with_id("t00001-aaaaaaaa")
        assert safety_screen(sample_for(t), t, judge_role(lambda r: "SAFE")).flagged is False
