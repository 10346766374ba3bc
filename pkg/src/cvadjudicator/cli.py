"""Command-line entry point: run the pipeline end to end or stage by stage."""

from __future__ import annotations

import logging
import sys

import click

from .config import ConfigError, METHODS, load_config_file, resolve_config
from .runner import (
    RunContext,
    ValidationFailure,
    prepare_context,
    run_adjudicate,
    run_evaluate,
    run_extract,
    run_pipeline,
    run_score_cleart,
)

_STAGES = {
    "extract": run_extract,
    "adjudicate": run_adjudicate,
    "score-cleart": run_score_cleart,
    "evaluate": run_evaluate,
    "pipeline": run_pipeline,
}


def _parse_set_overrides(pairs: tuple[str, ...]) -> dict:
    values: dict = {}
    for pair in pairs:
        if "=" not in pair:
            raise ConfigError(f"--set expects KEY=VALUE, got {pair!r}")
        key, raw = pair.split("=", 1)
        key = key.strip()
        if "." in key:
            head, sub = key.split(".", 1)
            values.setdefault(head, {})
            if not isinstance(values[head], dict):
                raise ConfigError(f"cannot mix {head} and {key} overrides")
            values[head][sub] = raw
        else:
            values[key] = raw
    return values


def _run_stage(name: str, **options) -> None:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    try:
        flag_values = _parse_set_overrides(options.pop("set_overrides", ()))
        for field_name in ("corpus_path", "out_dir", "method", "max_in_flight", "record_fixtures_path"):
            value = options.pop(field_name, None)
            if value is not None:
                flag_values[field_name] = value
        config_path = options.pop("config", None)
        file_values = load_config_file(config_path) if config_path else {}
        backend_kind = options.pop("backend_kind", None)
        if backend_kind:
            # overrides the kind of any backend defined in either layer
            for role in ("adjudication_backend", "evaluator_backend"):
                if role in file_values or role in flag_values:
                    sub = flag_values.setdefault(role, {})
                    if isinstance(sub, dict):
                        sub["kind"] = backend_kind
        cfg = resolve_config(file_values, flag_values)
        ctx = prepare_context(cfg)
    except (ConfigError, ValidationFailure, OSError) as exc:
        click.echo(f"error: {exc}", err=True)
        sys.exit(1)
    try:
        counts = _STAGES[name](ctx)
        ctx.finish(name)
    except ValidationFailure as exc:
        click.echo(f"error: {exc}", err=True)
        sys.exit(1)
    except Exception as exc:  # runtime failure
        click.echo(f"runtime failure: {exc}", err=True)
        sys.exit(2)
    click.echo(f"{name}: done ({counts})")


def _stage_options(fn):
    fn = click.option("--config", type=click.Path(), help="YAML config file.")(fn)
    fn = click.option("--corpus", "corpus_path", type=click.Path(), help="Corpus JSONL file.")(fn)
    fn = click.option("--out-dir", "out_dir", type=click.Path(), help="Output directory.")(fn)
    fn = click.option("--method", type=click.Choice(METHODS), default=None, help="Adjudication method.")(fn)
    fn = click.option("--backend-kind", type=click.Choice(["http_endpoint", "scripted"]), default=None,
                      help="Override the kind of both backends.")(fn)
    fn = click.option("--max-in-flight", "max_in_flight", type=int, default=None,
                      help="Worker pool size.")(fn)
    fn = click.option("--record-fixtures", "record_fixtures_path", type=click.Path(), default=None,
                      help="Capture live responses into a scripted fixture file.")(fn)
    fn = click.option("--set", "set_overrides", multiple=True, metavar="KEY=VALUE",
                      help="Override any config field (dotted keys reach backend fields).")(fn)
    return fn


@click.group()
@click.version_option(package_name="cvadjudicator")
def main():
    """Extract clinical events, adjudicate deaths, and score the reasoning."""


@main.command()
@_stage_options
def extract(**options):
    """Extract events from every corpus document."""
    _run_stage("extract", **options)


@main.command()
@_stage_options
def adjudicate(**options):
    """Adjudicate every patient from previously extracted events."""
    _run_stage("adjudicate", **options)


@main.command(name="score-cleart")
@_stage_options
def score_cleart(**options):
    """Grade adjudication reasoning against the six-criterion rubric."""
    _run_stage("score-cleart", **options)


@main.command()
@_stage_options
def evaluate(**options):
    """Compute extraction/adjudication metrics against the gold files."""
    _run_stage("evaluate", **options)


@main.command()
@_stage_options
def pipeline(**options):
    """Run extract, adjudicate, score-cleart, and evaluate in order."""
    _run_stage("pipeline", **options)


if __name__ == "__main__":
    main()
