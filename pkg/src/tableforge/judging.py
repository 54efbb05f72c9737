"""Weakness identification: target answering, LLM-as-a-judge scoring on a
1..5 correctness scale, weakness partitioning, and safety screening."""

from __future__ import annotations

import logging
from dataclasses import dataclass

from . import prompts
from .backend import ChatRequest, LlmRole
from .formats import TableFormat, serialize
from .jsonx import last_json_object_with_key
from .samples import InstructionSample
from .synthesis import _attempt_seed
from .table_model import Table

logger = logging.getLogger(__name__)

WEAKNESS_THRESHOLD = 3  # strict less-than: score 3 is not a weakness


class UnscorableSample(Exception):
    """Judge never produced a parseable score within the retry budget."""


@dataclass(frozen=True)
class JudgeVerdict:
    score: int
    rationale: str
    is_weakness: bool

    @classmethod
    def from_score(cls, score: int, rationale: str, threshold: int = WEAKNESS_THRESHOLD) -> JudgeVerdict:
        if not 1 <= score <= 5:
            raise ValueError(f"score must be 1..5, got {score}")
        return cls(score=score, rationale=rationale, is_weakness=score < threshold)


@dataclass(frozen=True)
class SafetyVerdict:
    flagged: bool
    reason: str | None = None

    def __post_init__(self) -> None:
        if self.flagged and not self.reason:
            object.__setattr__(self, "reason", "unspecified")


def build_answer_request(
    role: LlmRole,
    instruction: str,
    table: Table,
    fmt: TableFormat,
    sampling_seed: int | None = None,
) -> ChatRequest:
    user = prompts.render(
        "answer_instruction",
        instruction=instruction,
        table_block=prompts.fence_table(serialize(table, fmt)),
    )
    return role.request(prompts.SYSTEM_TARGET, user, sampling_seed=sampling_seed)


def target_answer(
    sample: InstructionSample,
    table: Table,
    target: LlmRole,
    sampling_seed: int | None = None,
) -> str:
    """The target model's answer to (instruction, table); provider errors
    propagate so the orchestrator can decide per-item handling."""
    req = build_answer_request(target, sample.instruction, table, sample.table_format, sampling_seed)
    return target.backend.complete(req).text


def build_judge_request(
    judge: LlmRole,
    sample: InstructionSample,
    table: Table,
    target_response: str,
    attempt: int = 0,
    sampling_seed: int | None = None,
) -> ChatRequest:
    user = prompts.render(
        "judge",
        instruction=sample.instruction,
        table_block=prompts.fence_table(serialize(table, sample.table_format)),
        reference_response=sample.response,
        target_response=target_response,
    )
    # Re-asks vary the sampling seed so the fingerprint changes and neither
    # the cache nor the provider replays the reply that just failed to parse.
    return judge.request(prompts.SYSTEM_JUDGE, user, sampling_seed=_attempt_seed(sampling_seed, attempt))


def parse_judge_reply(reply_text: str) -> tuple[int, str] | None:
    """(score, rationale) from the last JSON object carrying "score",
    or None when no usable score is present."""
    payload = last_json_object_with_key(reply_text, "score")
    if payload is None:
        return None
    value = payload.get("score")
    if isinstance(value, bool):
        return None
    if isinstance(value, float) and value.is_integer():
        value = int(value)
    if not isinstance(value, int) or not 1 <= value <= 5:
        return None
    rationale = str(payload.get("rationale", "")).strip() or reply_text.strip()
    return value, rationale


def judge(
    sample: InstructionSample,
    table: Table,
    target_response: str,
    judge_role: LlmRole,
    max_reasks: int = 2,
    threshold: int = WEAKNESS_THRESHOLD,
    sampling_seed: int | None = None,
) -> JudgeVerdict:
    """Score the target response against the sample's reference response."""
    if not sample.response.strip() or not target_response.strip():
        raise ValueError("judging requires non-empty reference and target responses")
    for attempt in range(1 + max_reasks):
        req = build_judge_request(judge_role, sample, table, target_response, attempt, sampling_seed)
        reply = judge_role.backend.complete(req)
        parsed = parse_judge_reply(reply.text)
        if parsed is not None:
            score, rationale = parsed
            return JudgeVerdict.from_score(score, rationale, threshold)
        logger.warning("unparseable judge reply for %s (attempt %d)", sample.id, attempt + 1)
    raise UnscorableSample(f"no score for {sample.id} after {1 + max_reasks} attempts")


def partition(
    judged: list[InstructionSample], threshold: int = WEAKNESS_THRESHOLD
) -> tuple[list[InstructionSample], list[InstructionSample]]:
    """(weakness, passed) in input order; every sample must carry a score."""
    weakness: list[InstructionSample] = []
    passed: list[InstructionSample] = []
    for sample in judged:
        if sample.judge_score is None:
            raise ValueError(f"sample {sample.id} has no judge score")
        (weakness if sample.judge_score < threshold else passed).append(sample)
    return weakness, passed


def build_safety_request(
    judge_role: LlmRole,
    sample: InstructionSample,
    table: Table,
    sampling_seed: int | None = None,
) -> ChatRequest:
    user = prompts.render(
        "safety",
        instruction=sample.instruction,
        response=sample.response,
        table_block=prompts.fence_table(serialize(table, sample.table_format)),
    )
    return judge_role.request(prompts.SYSTEM_JUDGE, user, sampling_seed=sampling_seed)


def parse_safety_reply(reply_text: str) -> SafetyVerdict:
    """First non-empty line decides; anything off-contract flags (fail-closed)."""
    for line in reply_text.splitlines():
        line = line.strip()
        if not line:
            continue
        upper = line.upper()
        if upper == "SAFE":
            return SafetyVerdict(flagged=False)
        if upper.startswith("UNSAFE"):
            _, _, reason = line.partition(":")
            return SafetyVerdict(flagged=True, reason=reason.strip() or None)
        break
    return SafetyVerdict(flagged=True, reason="unparseable safety reply")


def safety_screen(
    sample: InstructionSample,
    table: Table,
    judge_role: LlmRole,
    sampling_seed: int | None = None,
) -> SafetyVerdict:
    req = build_safety_request(judge_role, sample, table, sampling_seed)
    verdict = parse_safety_reply(judge_role.backend.complete(req).text)
    if verdict.flagged:
        logger.warning("safety flag on %s: %s", sample.id, verdict.reason)
    return verdict
