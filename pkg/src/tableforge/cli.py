"""Command-line entry points.

`forge run` drives the whole pipeline from a TOML config; the staged
subcommands (`tables`, `seed`, `evolve`, `judge`) run the same pipeline
but stop once the named stage's artifacts are on disk, so a run can be
advanced incrementally and inspected between stages. Every stage that
already has its file is loaded, not recomputed, which is also how
`resume` works after an interruption.
"""

from __future__ import annotations

import json
import logging
import shutil
from pathlib import Path

import click

from .backend import BackendConfig, HttpChatBackend, LlmRole, ScriptedBackend
from .evalharness import EvalConfig, load_benchmark, run_eval
from .formats import TableFormat
from .jsonl import read_jsonl
from .pipeline import PipelineConfig, PipelineInterrupted, run_pipeline
from .stats import compute_stats, format_stats


def _configure_logging(verbose: bool) -> None:
    logging.basicConfig(
        level=logging.DEBUG if verbose else logging.INFO,
        format="%(levelname)s %(name)s: %(message)s",
    )


@click.group()
@click.option("-v", "--verbose", is_flag=True, help="Debug-level logging.")
def main(verbose: bool) -> None:
    """Synthesize table instruction-tuning data and evaluate table skills."""
    _configure_logging(verbose)


_config_option = click.option(
    "-c",
    "--config",
    "config_path",
    default="config.toml",
    show_default=True,
    type=click.Path(exists=True, dir_okay=False, path_type=Path),
    help="Pipeline TOML config.",
)


def _run_to(cfg: PipelineConfig, stop_after: str | None) -> None:
    try:
        dataset = run_pipeline(cfg, stop_after=stop_after)
    except PipelineInterrupted as stop:
        click.echo(f"stopped after stage {stop.stage}; artifacts in {cfg.run_dir}")
    else:
        click.echo(f"pipeline complete: {len(dataset.samples)} samples in {cfg.run_dir / 'export.jsonl'}")


@main.command()
@_config_option
def run(config_path: Path) -> None:
    """Run the full synthesis pipeline."""
    _run_to(PipelineConfig.from_toml(config_path), stop_after=None)


@main.command()
@_config_option
def tables(config_path: Path) -> None:
    """Generate topics and seed tables, then stop."""
    _run_to(PipelineConfig.from_toml(config_path), stop_after="tables")


@main.command()
@_config_option
def seed(config_path: Path) -> None:
    """Generate round-0 seed instruction data, then stop."""
    _run_to(PipelineConfig.from_toml(config_path), stop_after="round0:weakness")


@main.command()
@_config_option
@click.option("-k", "--round", "round_k", required=True, type=click.IntRange(min=1))
def evolve(config_path: Path, round_k: int) -> None:
    """Evolve round-k candidates from the previous weakness set, then stop."""
    _run_to(PipelineConfig.from_toml(config_path), stop_after=f"round{round_k}:candidates")


@main.command()
@_config_option
@click.option("-k", "--round", "round_k", required=True, type=click.IntRange(min=1))
def judge(config_path: Path, round_k: int) -> None:
    """Judge round-k candidates and select the weakness set, then stop."""
    _run_to(PipelineConfig.from_toml(config_path), stop_after=f"round{round_k}:weakness")


@main.command()
@_config_option
@click.option("-o", "--out", "out_path", required=True, type=click.Path(dir_okay=False, path_type=Path))
def export(config_path: Path, out_path: Path) -> None:
    """Run (or finish) the pipeline and copy the export to OUT."""
    cfg = PipelineConfig.from_toml(config_path)
    dataset = run_pipeline(cfg)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    shutil.copyfile(cfg.run_dir / "export.jsonl", out_path)
    click.echo(f"wrote {len(dataset.samples)} samples to {out_path}")


@main.command()
@click.argument("dataset", type=click.Path(exists=True, dir_okay=False, path_type=Path))
def stats(dataset: Path) -> None:
    """Summarize an exported dataset: sizes, word counts, density."""
    click.echo(format_stats(compute_stats(read_jsonl(dataset))))


@main.command()
@click.argument("run_id")
@click.option("--run-root", default="runs", show_default=True, type=click.Path(file_okay=False, path_type=Path))
def resume(run_id: str, run_root: Path) -> None:
    """Resume an interrupted run from its config snapshot."""
    snapshot = run_root / run_id / "config.snapshot"
    if not snapshot.exists():
        raise click.ClickException(f"no config snapshot at {snapshot}")
    cfg = PipelineConfig.from_mapping(json.loads(snapshot.read_text(encoding="utf-8")))
    _run_to(cfg, stop_after=None)


def _parse_formats(text: str) -> tuple[TableFormat, ...]:
    try:
        return tuple(TableFormat.from_name(part.strip()) for part in text.split(",") if part.strip())
    except ValueError as exc:
        raise click.ClickException(str(exc))


@main.command(name="eval")
@click.option("--bench", "bench_path", required=True, type=click.Path(exists=True, dir_okay=False, path_type=Path))
@click.option("--templates", default="t1", show_default=True, help="Comma-separated template ids.")
@click.option("--formats", default="md", show_default=True, help="Comma-separated formats (md,html,csv,tsv).")
@click.option("--out", "out_dir", required=True, type=click.Path(file_okay=False, path_type=Path))
@click.option("--endpoint", default="", help="OpenAI-compatible endpoint; omit for the offline table-reading oracle.")
@click.option("--model", "model_name", default="", help="Model name at the endpoint.")
@click.option("--api-key-env", default="", help="Environment variable holding the API key.")
@click.option("--judge-model", default="", help="Judge model for T2T records (defaults to --model).")
@click.option("--temperature", default=0.01, show_default=True, type=float)
def eval_command(
    bench_path: Path,
    templates: str,
    formats: str,
    out_dir: Path,
    endpoint: str,
    model_name: str,
    api_key_env: str,
    judge_model: str,
    temperature: float,
) -> None:
    """Evaluate a model on a benchmark JSONL across templates and formats."""
    records = load_benchmark(bench_path)
    if endpoint:
        if not model_name:
            raise click.ClickException("--model is required with --endpoint")
        backend = HttpChatBackend(BackendConfig(endpoint=endpoint, api_key_env=api_key_env))
        model_role = LlmRole(backend=backend, role_tag="eval-model", model=model_name, temperature=temperature)
        judge_role = LlmRole(
            backend=backend, role_tag="eval-judge", model=judge_model or model_name, temperature=0.01
        )
    else:
        # Offline default: a deterministic oracle that reads coordinate
        # questions straight off the table, plus a containment judge.
        from .testing import t2t_containment_judge, table_question_oracle

        model_role = LlmRole(
            backend=ScriptedBackend(table_question_oracle, max_in_flight=8),
            role_tag="eval-model",
            model="table-oracle",
            temperature=temperature,
        )
        judge_role = LlmRole(
            backend=ScriptedBackend(t2t_containment_judge, max_in_flight=8),
            role_tag="eval-judge",
            model="containment-judge",
            temperature=0.01,
        )
    template_ids = tuple(part.strip() for part in templates.split(",") if part.strip())
    cfg = EvalConfig(
        template_ids=template_ids,
        formats=_parse_formats(formats),
        model=model_role,
        judge=judge_role,
        temperature=temperature,
    )
    _, report = run_eval(records, cfg)
    report.write(out_dir)
    click.echo(report.format_report())
    click.echo(f"report written to {out_dir}")


if __name__ == "__main__":
    main()
