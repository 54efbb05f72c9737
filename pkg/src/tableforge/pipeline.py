"""End-to-end pipeline control.

Stage 1 synthesizes tables and seed instructions; each later round evolves
the previous round's weakness samples, answers them with the target model,
judges the answers, and keeps the weak ones. Every stage writes one JSONL
checkpoint under the run directory and is skipped when its file already
exists, so an interrupted run resumes without repeating a single model
call. All randomness derives from ``master_seed``.

Run directory layout::

    run/<id>/config.snapshot
    run/<id>/topics.jsonl
    run/<id>/tables.jsonl
    run/<id>/round<k>/candidates.jsonl
    run/<id>/round<k>/judgments.jsonl
    run/<id>/round<k>/weakness.jsonl
    run/<id>/export.jsonl
"""

from __future__ import annotations

import hashlib
import json
import logging
import random
from dataclasses import dataclass, field
from pathlib import Path

from .backend import (
    BackendConfig,
    BackendError,
    ChatBackend,
    CachingBackend,
    HttpChatBackend,
    LlmRole,
    ScriptedBackend,
)
from .catalog import SEED_TASKS
from .evolution import (
    EvolvedCandidate,
    InvalidEvolvedTable,
    assemble_candidate,
    build_evolution_request,
    build_reference_request,
    filter_candidates,
    parse_evolution_reply,
    plan_round_jobs,
)
from .judging import (
    build_answer_request,
    build_judge_request,
    build_safety_request,
    parse_judge_reply,
    parse_safety_reply,
    partition,
)
from .jsonl import read_jsonl, write_jsonl
from .samples import Dataset, InstructionSample
from .synthesis import (
    GenerationExhausted,
    ParseFailure,
    TopicNode,
    flatten_titles,
    generate_seed_instructions,
    generate_topic_tree,
    synthesize_table,
)
from .table_model import DEFAULT_LIMITS, SizeLimits, Table

logger = logging.getLogger(__name__)

ROLE_NAMES = ("teacher", "target", "judge")
ROLE_TEMPERATURES = {"teacher": 0.8, "target": 0.01, "judge": 0.01}

# Offset between rounds for evolved-table sequence numbers; keeps ids stable
# under resume no matter how many candidates earlier rounds dropped.
_TABLE_SEQ_STRIDE = 100_000


class PipelineInterrupted(Exception):
    """Raised after the stage named by ``stop_after`` has been written."""

    def __init__(self, stage: str):
        super().__init__(f"pipeline stopped after stage {stage!r}")
        self.stage = stage


class EmptyWeaknessSet(Exception):
    """A round received no seeds; iteration halts and the export proceeds."""


def derive_seed(master_seed: int, label: str) -> int:
    """Stable per-stage seed; independent labels give independent streams."""
    digest = hashlib.sha256(f"{master_seed}:{label}".encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "big") % (2**31)


@dataclass(frozen=True)
class RoleConfig:
    """How to reach one model role; `kind` picks the backend implementation."""

    kind: str = "scripted-demo"
    endpoint: str = ""
    model: str = "scripted"
    api_key_env: str = ""
    temperature: float | None = None
    max_tokens: int = 2048
    requests_per_minute: int = 60
    max_in_flight: int = 4
    max_retries: int = 3
    backoff_base: float = 0.5
    timeout: float = 120.0

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "endpoint": self.endpoint,
            "model": self.model,
            "api_key_env": self.api_key_env,
            "temperature": self.temperature,
            "max_tokens": self.max_tokens,
            "requests_per_minute": self.requests_per_minute,
            "max_in_flight": self.max_in_flight,
            "max_retries": self.max_retries,
            "backoff_base": self.backoff_base,
            "timeout": self.timeout,
        }


@dataclass(frozen=True)
class PipelineConfig:
    master_seed: int = 0
    n_tables: int = 10
    seeds_per_table: int = 2
    n_rounds: int = 2
    children_per_direction: int = 1
    weakness_threshold: int = 3
    retain_all_seeds: bool = True
    run_root: Path = Path("runs")
    run_id: str = ""
    n_topics: int = 5
    subtopics_per_topic: int = 2
    titles_per_subtopic: int = 3
    formula_probability: float = 0.3
    table_budget: int = 3
    judge_reasks: int = 2
    safety_screen: bool = True
    limits: SizeLimits = DEFAULT_LIMITS
    teacher: RoleConfig = field(default_factory=RoleConfig)
    target: RoleConfig = field(default_factory=RoleConfig)
    judge: RoleConfig = field(default_factory=RoleConfig)

    def __post_init__(self) -> None:
        if self.n_rounds < 1:
            raise ValueError("n_rounds must be >= 1")
        if not 1 <= self.weakness_threshold <= 5:
            raise ValueError("weakness_threshold must be in [1, 5]")
        if self.n_tables < 1 or self.seeds_per_table < 1:
            raise ValueError("n_tables and seeds_per_table must be >= 1")
        object.__setattr__(self, "run_root", Path(self.run_root))
        if not self.run_id:
            object.__setattr__(self, "run_id", f"m{self.master_seed:08d}")

    @property
    def run_dir(self) -> Path:
        return self.run_root / self.run_id

    def snapshot(self) -> dict:
        data = {
            "master_seed": self.master_seed,
            "n_tables": self.n_tables,
            "seeds_per_table": self.seeds_per_table,
            "n_rounds": self.n_rounds,
            "children_per_direction": self.children_per_direction,
            "weakness_threshold": self.weakness_threshold,
            "retain_all_seeds": self.retain_all_seeds,
            "run_root": str(self.run_root),
            "run_id": self.run_id,
            "n_topics": self.n_topics,
            "subtopics_per_topic": self.subtopics_per_topic,
            "titles_per_subtopic": self.titles_per_subtopic,
            "formula_probability": self.formula_probability,
            "table_budget": self.table_budget,
            "judge_reasks": self.judge_reasks,
            "safety_screen": self.safety_screen,
            "limits": {
                "min_rows": self.limits.min_rows,
                "max_rows": self.limits.max_rows,
                "min_cols": self.limits.min_cols,
                "max_cols": self.limits.max_cols,
            },
            "roles": {name: getattr(self, name).to_dict() for name in ROLE_NAMES},
        }
        return data

    @classmethod
    def from_mapping(cls, data: dict) -> PipelineConfig:
        data = dict(data)
        known = {
            "master_seed", "n_tables", "seeds_per_table", "n_rounds",
            "children_per_direction", "weakness_threshold", "retain_all_seeds",
            "run_root", "run_id", "n_topics", "subtopics_per_topic",
            "titles_per_subtopic", "formula_probability", "table_budget",
            "judge_reasks", "safety_screen", "limits", "roles",
        }
        unknown = sorted(set(data) - known)
        if unknown:
            raise ValueError(f"unknown config keys: {unknown}")
        kwargs: dict = {k: v for k, v in data.items() if k not in ("limits", "roles")}
        if "limits" in data:
            kwargs["limits"] = SizeLimits(**data["limits"])
        for name, raw in (data.get("roles") or {}).items():
            if name not in ROLE_NAMES:
                raise ValueError(f"unknown role {name!r}; expected one of {ROLE_NAMES}")
            kwargs[name] = RoleConfig(**raw)
        if "run_root" in kwargs:
            kwargs["run_root"] = Path(kwargs["run_root"])
        return cls(**kwargs)

    @classmethod
    def from_toml(cls, path: Path | str) -> PipelineConfig:
        try:
            import tomllib
        except ModuleNotFoundError:  # Python 3.10
            import tomli as tomllib
        with open(path, "rb") as fh:
            return cls.from_mapping(tomllib.load(fh))


@dataclass(frozen=True)
class RoundState:
    round: int
    input_seeds: tuple[str, ...]
    candidates: tuple[str, ...]
    judged: tuple[str, ...]
    weakness: tuple[str, ...]
    completed: bool

    def __post_init__(self) -> None:
        if not set(self.weakness) <= set(self.judged) <= set(self.candidates):
            raise ValueError("round state must satisfy weakness <= judged <= candidates")


def build_roles(
    cfg: PipelineConfig, overrides: dict[str, ChatBackend] | None = None
) -> dict[str, LlmRole]:
    """One LlmRole per pipeline role.

    Config-built backends are wrapped in the run-local response cache;
    override backends (tests, demos) are used as handed in so callers keep
    full control of call counting.
    """
    roles: dict[str, LlmRole] = {}
    for name in ROLE_NAMES:
        rc: RoleConfig = getattr(cfg, name)
        if overrides and name in overrides:
            backend = overrides[name]
        elif rc.kind == "openai":
            backend = HttpChatBackend(
                BackendConfig(
                    endpoint=rc.endpoint,
                    api_key_env=rc.api_key_env,
                    max_in_flight=rc.max_in_flight,
                    requests_per_minute=rc.requests_per_minute,
                    max_retries=rc.max_retries,
                    backoff_base=rc.backoff_base,
                    timeout=rc.timeout,
                )
            )
            backend = CachingBackend(backend, cfg.run_dir / "cache" / name)
        elif rc.kind == "scripted-demo":
            from .testing import demo_handler

            backend = ScriptedBackend(demo_handler(name, cfg.master_seed), max_in_flight=rc.max_in_flight)
            backend = CachingBackend(backend, cfg.run_dir / "cache" / name)
        else:
            raise ValueError(f"unknown backend kind {rc.kind!r} for role {name!r}")
        temperature = rc.temperature if rc.temperature is not None else ROLE_TEMPERATURES[name]
        roles[name] = LlmRole(
            backend=backend,
            role_tag=name,
            model=rc.model,
            temperature=temperature,
            max_tokens=rc.max_tokens,
        )
    return roles


def _checkpoint(stage: str, stop_after: str | None) -> None:
    if stop_after is not None and stage == stop_after:
        raise PipelineInterrupted(stage)


def _write_snapshot(cfg: PipelineConfig) -> None:
    path = cfg.run_dir / "config.snapshot"
    current = json.dumps(cfg.snapshot(), indent=2, sort_keys=True) + "\n"
    if path.exists():
        if path.read_text(encoding="utf-8") != current:
            logger.warning("config drift: %s differs from the active config", path)
        return
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(current, encoding="utf-8")


# ---------------------------------------------------------------------------
# stage 1


def _stage_topics(cfg: PipelineConfig, teacher: LlmRole) -> list[TopicNode]:
    path = cfg.run_dir / "topics.jsonl"
    if path.exists():
        return [TopicNode.from_dict(rec) for rec in read_jsonl(path)]
    nodes = generate_topic_tree(
        teacher,
        cfg.n_topics,
        cfg.subtopics_per_topic,
        cfg.titles_per_subtopic,
        sampling_seed=derive_seed(cfg.master_seed, "topics"),
    )
    write_jsonl(path, [node.to_dict() for node in nodes])
    return nodes


def _stage_tables(cfg: PipelineConfig, teacher: LlmRole, nodes: list[TopicNode]) -> list[Table]:
    path = cfg.run_dir / "tables.jsonl"
    if path.exists():
        return [Table.from_record(rec) for rec in read_jsonl(path)]
    triples = flatten_titles(nodes)
    if not triples:
        raise ParseFailure("topic tree carries no table titles")
    rng = random.Random(derive_seed(cfg.master_seed, "attributes"))
    tables: list[Table] = []
    for seq in range(cfg.n_tables):
        topic, subtopic, title = triples[seq % len(triples)]
        try:
            tables.append(
                synthesize_table(
                    teacher,
                    title,
                    topic,
                    subtopic,
                    seq,
                    rng,
                    limits=cfg.limits,
                    formula_probability=cfg.formula_probability,
                    budget=cfg.table_budget,
                    sampling_seed=derive_seed(cfg.master_seed, f"table:{seq}"),
                )
            )
        except GenerationExhausted as exc:
            logger.warning("table slot %d abandoned: %s", seq, exc)
    if not tables:
        raise GenerationExhausted("no table slot survived synthesis")
    write_jsonl(path, [t.to_record() for t in tables])
    return tables


def _stage_seeds(cfg: PipelineConfig, teacher: LlmRole, tables: list[Table]) -> list[InstructionSample]:
    path = cfg.run_dir / "round0" / "candidates.jsonl"
    if path.exists():
        return [InstructionSample.from_record(rec) for rec in read_jsonl(path)]
    rng = random.Random(derive_seed(cfg.master_seed, "seed-tasks"))
    seeds: list[InstructionSample] = []
    for table in tables:
        seeds.extend(
            generate_seed_instructions(
                teacher,
                table,
                list(SEED_TASKS),
                cfg.seeds_per_table,
                rng,
                sampling_seed=derive_seed(cfg.master_seed, f"seeds:{table.id}"),
            )
        )
    write_jsonl(path, [s.to_record() for s in seeds])
    return seeds


# ---------------------------------------------------------------------------
# judging stages (shared by round 0 under retain_all_seeds=false and rounds >= 1)


def _judge_samples(
    cfg: PipelineConfig,
    roles: dict[str, LlmRole],
    samples: list[InstructionSample],
    tables: dict[str, Table],
    round_label: str,
) -> list[dict]:
    """Target-answer and judge every sample; one audit record each.

    Records carry {sample_id, target_response, score, rationale}; a null
    score marks a sample that could not be answered or scored, which
    excludes it from both the weakness set and the export.
    """
    target, judge_role = roles["target"], roles["judge"]
    answer_requests = [
        build_answer_request(
            target,
            s.instruction,
            tables[s.table_id],
            s.table_format,
            sampling_seed=derive_seed(cfg.master_seed, f"{round_label}:target:{i}"),
        )
        for i, s in enumerate(samples)
    ]
    answers = target.complete_batch(answer_requests)

    records: list[dict] = []
    pending: list[tuple[int, str]] = []  # (sample index, target text)
    for i, (sample, reply) in enumerate(zip(samples, answers)):
        if isinstance(reply, BackendError):
            logger.warning("target failed on %s: %s", sample.id, reply)
            records.append(
                {"sample_id": sample.id, "target_response": None, "score": None,
                 "rationale": f"target error: {reply}"}
            )
        elif not reply.text.strip():
            records.append(
                {"sample_id": sample.id, "target_response": "", "score": None,
                 "rationale": "empty target response"}
            )
        else:
            records.append({"sample_id": sample.id, "target_response": reply.text})
            pending.append((i, reply.text))

    # First judge attempt is batched; re-asks run per item with a shifted
    # sampling seed so retries are fresh calls, not cache replays.
    first_requests = [
        build_judge_request(
            judge_role,
            samples[i],
            tables[samples[i].table_id],
            text,
            attempt=0,
            sampling_seed=derive_seed(cfg.master_seed, f"{round_label}:judge:{i}"),
        )
        for i, text in pending
    ]
    first_replies = judge_role.complete_batch(first_requests)
    for (i, text), reply in zip(pending, first_replies):
        record = records[i]
        parsed = None if isinstance(reply, BackendError) else parse_judge_reply(reply.text)
        attempt = 1
        while parsed is None and attempt <= cfg.judge_reasks:
            try:
                retry = judge_role.backend.complete(
                    build_judge_request(
                        judge_role,
                        samples[i],
                        tables[samples[i].table_id],
                        text,
                        attempt=attempt,
                        sampling_seed=derive_seed(cfg.master_seed, f"{round_label}:judge:{i}"),
                    )
                )
            except BackendError as exc:
                logger.warning("judge failed on %s: %s", samples[i].id, exc)
                break
            parsed = parse_judge_reply(retry.text)
            attempt += 1
        if parsed is None:
            logger.warning("sample %s unscorable after %d attempts", samples[i].id, attempt)
            record.update(score=None, rationale="unscorable after retries")
        else:
            score, rationale = parsed
            record.update(score=score, rationale=rationale)
    return records


def _attach_verdicts(
    samples: list[InstructionSample], judgment_records: list[dict]
) -> list[InstructionSample]:
    """Samples that earned a score, in input order, verdicts attached."""
    by_id = {rec["sample_id"]: rec for rec in judgment_records}
    judged: list[InstructionSample] = []
    for sample in samples:
        rec = by_id.get(sample.id)
        if rec is None or rec.get("score") is None:
            continue
        judged.append(sample.with_verdict(rec["score"], rec.get("target_response") or ""))
    return judged


# ---------------------------------------------------------------------------
# rounds


def _load_candidates(
    path: Path, tables: dict[str, Table]
) -> list[EvolvedCandidate]:
    candidates: list[EvolvedCandidate] = []
    for rec in read_jsonl(path):
        if rec.get("table") is not None:
            table = Table.from_record(rec["table"])
            tables[table.id] = table
        sample = InstructionSample.from_record(rec["sample"])
        candidates.append(
            EvolvedCandidate(
                sample=sample,
                table=tables[sample.table_id],
                parent_instruction=rec["parent_instruction"],
                new_table=bool(rec.get("table") is not None),
            )
        )
    return candidates


def _stage_candidates(
    cfg: PipelineConfig,
    roles: dict[str, LlmRole],
    seeds: list[InstructionSample],
    tables: dict[str, Table],
    k: int,
) -> list[EvolvedCandidate]:
    path = cfg.run_dir / f"round{k}" / "candidates.jsonl"
    if path.exists():
        return _load_candidates(path, tables)
    teacher = roles["teacher"]
    jobs = plan_round_jobs(
        seeds,
        tables,
        random.Random(derive_seed(cfg.master_seed, f"round{k}:plan")),
        children_per_direction=cfg.children_per_direction,
        sampling_seed=derive_seed(cfg.master_seed, f"round{k}:evolve"),
    )
    replies = teacher.complete_batch([build_evolution_request(teacher, job) for job in jobs])

    parsed_jobs = []
    for idx, (job, reply) in enumerate(zip(jobs, replies)):
        if isinstance(reply, BackendError):
            logger.warning("evolution call failed (%s): %s", job.strategy.name, reply)
            continue
        try:
            parsed = parse_evolution_reply(
                reply.text, job, table_seq=cfg.n_tables + k * _TABLE_SEQ_STRIDE + idx
            )
        except (ParseFailure, InvalidEvolvedTable) as exc:
            logger.warning("candidate dropped (%s): %s", job.strategy.name, exc)
            continue
        parsed_jobs.append((job, parsed))

    ref_requests = [
        build_reference_request(
            teacher,
            parsed.instruction,
            parsed.table,
            parsed.table_format,
            sampling_seed=derive_seed(cfg.master_seed, f"round{k}:ref:{i}"),
        )
        for i, (_, parsed) in enumerate(parsed_jobs)
    ]
    ref_replies = teacher.complete_batch(ref_requests)
    raw: list[EvolvedCandidate] = []
    for (job, parsed), reply in zip(parsed_jobs, ref_replies):
        if isinstance(reply, BackendError):
            logger.warning("reference response failed for %s: %s", job.seed.id, reply)
            continue
        raw.append(assemble_candidate(job, parsed, reply.text))
    kept = filter_candidates(raw)
    logger.info("round %d: %d jobs -> %d candidates kept", k, len(jobs), len(kept))

    for cand in kept:
        if cand.new_table:
            tables[cand.table.id] = cand.table
    write_jsonl(
        path,
        [
            {
                "sample": cand.sample.to_record(),
                "parent_instruction": cand.parent_instruction,
                "table": cand.table.to_record() if cand.new_table else None,
            }
            for cand in kept
        ],
    )
    return kept


def run_round(
    seeds: list[InstructionSample],
    cfg: PipelineConfig,
    roles: dict[str, LlmRole],
    tables: dict[str, Table],
    k: int,
    stop_after: str | None = None,
) -> tuple[RoundState, list[InstructionSample]]:
    """Run (or resume) round k >= 1: evolve, answer, judge, partition."""
    if not seeds:
        raise EmptyWeaknessSet(f"round {k} has no input seeds")
    round_dir = cfg.run_dir / f"round{k}"
    round_dir.mkdir(parents=True, exist_ok=True)

    candidates = _stage_candidates(cfg, roles, seeds, tables, k)
    _checkpoint(f"round{k}:candidates", stop_after)

    judgments_path = round_dir / "judgments.jsonl"
    if judgments_path.exists():
        judgment_records = read_jsonl(judgments_path)
    else:
        judgment_records = _judge_samples(
            cfg, roles, [c.sample for c in candidates], tables, f"round{k}"
        )
        write_jsonl(judgments_path, judgment_records)
    _checkpoint(f"round{k}:judgments", stop_after)

    judged = _attach_verdicts([c.sample for c in candidates], judgment_records)
    weakness_path = round_dir / "weakness.jsonl"
    if weakness_path.exists():
        weakness = [InstructionSample.from_record(rec) for rec in read_jsonl(weakness_path)]
    else:
        weakness, _ = partition(judged, cfg.weakness_threshold)
        write_jsonl(weakness_path, [s.to_record() for s in weakness])
    _checkpoint(f"round{k}:weakness", stop_after)

    state = RoundState(
        round=k,
        input_seeds=tuple(s.id for s in seeds),
        candidates=tuple(c.sample.id for c in candidates),
        judged=tuple(s.id for s in judged),
        weakness=tuple(s.id for s in weakness),
        completed=True,
    )
    return state, weakness


# ---------------------------------------------------------------------------
# export


def _safety_pass(
    cfg: PipelineConfig,
    roles: dict[str, LlmRole],
    samples: list[InstructionSample],
    tables: dict[str, Table],
) -> list[InstructionSample]:
    """Drop flagged samples; backend failures flag too (fail-closed)."""
    if not samples:
        return samples
    judge_role = roles["judge"]
    requests = [
        build_safety_request(
            judge_role,
            s,
            tables[s.table_id],
            sampling_seed=derive_seed(cfg.master_seed, f"safety:{i}"),
        )
        for i, s in enumerate(samples)
    ]
    replies = judge_role.complete_batch(requests)
    dropped: set[str] = set()
    for sample, reply in zip(samples, replies):
        if isinstance(reply, BackendError):
            logger.warning("safety screen errored on %s; excluded: %s", sample.id, reply)
            dropped.add(sample.id)
            continue
        verdict = parse_safety_reply(reply.text)
        if verdict.flagged:
            logger.warning("safety flag on %s: %s", sample.id, verdict.reason)
            dropped.add(sample.id)
    # Exclusion cascades: a sample evolved from dropped content goes too,
    # which keeps every surviving parent chain resolvable.
    kept: list[InstructionSample] = []
    for sample in samples:
        parent = sample.lineage.parent_id
        if sample.id in dropped:
            continue
        if parent is not None and parent in dropped:
            logger.warning("dropping %s: parent %s was excluded", sample.id, parent)
            dropped.add(sample.id)
            continue
        kept.append(sample)
    return kept


def export(dataset: Dataset, path: Path | str) -> Path:
    """Write the dataset as sorted JSONL export records."""
    problems = dataset.check_integrity()
    if problems:
        raise ValueError("refusing to export an inconsistent dataset: " + "; ".join(problems))
    path = Path(path)
    write_jsonl(path, dataset.export_records())
    return path


def run_pipeline(
    cfg: PipelineConfig,
    backends: dict[str, ChatBackend] | None = None,
    stop_after: str | None = None,
) -> Dataset:
    """Run the whole pipeline, resuming from whatever checkpoints exist."""
    cfg.run_dir.mkdir(parents=True, exist_ok=True)
    _write_snapshot(cfg)
    roles = build_roles(cfg, backends)
    teacher = roles["teacher"]

    nodes = _stage_topics(cfg, teacher)
    _checkpoint("topics", stop_after)

    tables = _stage_tables(cfg, teacher, nodes)
    _checkpoint("tables", stop_after)
    table_store: dict[str, Table] = {t.id: t for t in tables}

    (cfg.run_dir / "round0").mkdir(parents=True, exist_ok=True)
    seeds = _stage_seeds(cfg, teacher, tables)
    _checkpoint("round0:candidates", stop_after)

    round0_weakness_path = cfg.run_dir / "round0" / "weakness.jsonl"
    if cfg.retain_all_seeds:
        # Seeds ship regardless of judge score and all of them feed round 1,
        # so the seed judging stage is skipped entirely.
        exported_seeds = seeds
        if not round0_weakness_path.exists():
            write_jsonl(round0_weakness_path, [s.to_record() for s in seeds])
        next_seeds = seeds
        _checkpoint("round0:weakness", stop_after)
    else:
        judgments_path = cfg.run_dir / "round0" / "judgments.jsonl"
        if judgments_path.exists():
            judgment_records = read_jsonl(judgments_path)
        else:
            judgment_records = _judge_samples(cfg, roles, seeds, table_store, "round0")
            write_jsonl(judgments_path, judgment_records)
        _checkpoint("round0:judgments", stop_after)
        judged = _attach_verdicts(seeds, judgment_records)
        if round0_weakness_path.exists():
            weakness = [InstructionSample.from_record(r) for r in read_jsonl(round0_weakness_path)]
        else:
            weakness, _ = partition(judged, cfg.weakness_threshold)
            write_jsonl(round0_weakness_path, [s.to_record() for s in weakness])
        _checkpoint("round0:weakness", stop_after)
        exported_seeds = weakness
        next_seeds = weakness

    accumulated: list[InstructionSample] = []
    for k in range(1, cfg.n_rounds + 1):
        try:
            _, weakness = run_round(next_seeds, cfg, roles, table_store, k, stop_after)
        except EmptyWeaknessSet as exc:
            logger.info("halting early: %s", exc)
            break
        accumulated.extend(weakness)
        next_seeds = weakness

    export_path = cfg.run_dir / "export.jsonl"
    if export_path.exists():
        samples = [InstructionSample.from_record(r) for r in read_jsonl(export_path)]
    else:
        samples = exported_seeds + accumulated
        if cfg.safety_screen:
            samples = _safety_pass(cfg, roles, samples, table_store)

    dataset = Dataset(samples=list(samples))
    for sample in samples:
        dataset.add_table(table_store[sample.table_id])
    if not export_path.exists():
        export(dataset, export_path)
    _checkpoint("export", stop_after)
    return dataset
