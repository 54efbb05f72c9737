"""Weakness-guided synthesis of table instruction-tuning data.

The package generates diverse structured tables, derives seed
instruction data from them, then iteratively evolves the samples a
target model handles poorly, as scored by an LLM judge, into new
training data. A separate harness evaluates models on table benchmarks
across prompt templates and table formats.
"""

from .backend import (
    AuthMissing,
    BackendConfig,
    BackendError,
    CachingBackend,
    ChatBackend,
    ChatRequest,
    ChatResponse,
    HttpChatBackend,
    LlmRole,
    ProviderError,
    RetriesExhausted,
    ScriptedBackend,
    fingerprint,
)
from .catalog import (
    SEED_TASKS,
    STRATEGIES,
    Direction,
    SeedTask,
    Strategy,
    sample_strategy,
    strategies_for,
)
from .evalharness import (
    BenchmarkRecord,
    EvalConfig,
    EvalReport,
    MissingTemplate,
    TaskType,
    assemble_prompt,
    exact_match,
    extract_answer,
    judge_t2t,
    load_benchmark,
    normalize_answer,
    run_eval,
    score_run,
)
from .evolution import (
    EvolutionJob,
    EvolvedCandidate,
    InvalidEvolvedTable,
    apply_permutation,
    data_permutations,
    deterministic_perturb,
    evolve,
    filter_candidates,
    plan_round_jobs,
)
from .formats import (
    MalformedMarkup,
    NoTableFound,
    ParseHints,
    RaggedRows,
    TableFormat,
    convert,
    parse,
    serialize,
    sniff_format,
)
from .formulas import (
    CyclicFormula,
    FormulaError,
    evaluate_table,
    parse_formula,
    render_number,
    to_number,
)
from .judging import (
    WEAKNESS_THRESHOLD,
    JudgeVerdict,
    SafetyVerdict,
    UnscorableSample,
    judge,
    partition,
    safety_screen,
    target_answer,
)
from .pipeline import (
    EmptyWeaknessSet,
    PipelineConfig,
    PipelineInterrupted,
    RoleConfig,
    build_roles,
    derive_seed,
    run_pipeline,
)
from .samples import Dataset, InstructionSample, Lineage, make_evolved_id, make_seed_id
from .stats import DatasetStats, compute_stats, format_stats
from .synthesis import (
    GenerationExhausted,
    ParseFailure,
    TableAttributes,
    TableRejected,
    generate_seed_instructions,
    generate_topic_tree,
    sample_attributes,
    synthesize_table,
)
from .table_model import (
    DEFAULT_LIMITS,
    Cell,
    HeaderSpec,
    MergedRegion,
    SizeLimits,
    Table,
    TableType,
    ValidationReport,
    make_table_id,
    validate,
)

__version__ = "0.1.0"

__all__ = [
    "__version__",
    # tables
    "Table", "Cell", "MergedRegion", "HeaderSpec", "TableType", "SizeLimits",
    "DEFAULT_LIMITS", "ValidationReport", "validate", "make_table_id",
    # formats
    "TableFormat", "ParseHints", "serialize", "parse", "convert", "sniff_format",
    "NoTableFound", "RaggedRows", "MalformedMarkup",
    # formulas
    "FormulaError", "CyclicFormula", "evaluate_table", "parse_formula",
    "to_number", "render_number",
    # catalog
    "Direction", "Strategy", "SeedTask", "STRATEGIES", "SEED_TASKS",
    "strategies_for", "sample_strategy",
    # backend
    "ChatRequest", "ChatResponse", "ChatBackend", "HttpChatBackend",
    "ScriptedBackend", "CachingBackend", "BackendConfig", "LlmRole",
    "BackendError", "ProviderError", "RetriesExhausted", "AuthMissing", "fingerprint",
    # synthesis
    "TableAttributes", "sample_attributes", "generate_topic_tree",
    "synthesize_table", "generate_seed_instructions",
    "ParseFailure", "TableRejected", "GenerationExhausted",
    # evolution
    "EvolutionJob", "EvolvedCandidate", "InvalidEvolvedTable", "plan_round_jobs",
    "evolve", "filter_candidates", "data_permutations", "apply_permutation",
    "deterministic_perturb",
    # judging
    "JudgeVerdict", "SafetyVerdict", "UnscorableSample", "WEAKNESS_THRESHOLD",
    "judge", "partition", "target_answer", "safety_screen",
    # samples
    "InstructionSample", "Lineage", "Dataset", "make_seed_id", "make_evolved_id",
    # pipeline
    "PipelineConfig", "RoleConfig", "PipelineInterrupted", "EmptyWeaknessSet",
    "run_pipeline", "build_roles", "derive_seed",
    # stats
    "DatasetStats", "compute_stats", "format_stats",
    # eval
    "BenchmarkRecord", "EvalConfig", "EvalReport", "TaskType", "MissingTemplate",
    "load_benchmark", "assemble_prompt", "extract_answer", "normalize_answer",
    "exact_match", "judge_t2t", "score_run", "run_eval",
]
