"""Command line interface.

Exit codes: 0 success, 2 bad input (malformed rows, out-of-order sessions,
corrupt store, bad options), 3 backend failure.
"""
from __future__ import annotations

import json
import logging
import sys
from pathlib import Path

import click

from .config import EngineConfig
from .engine import Engine, make_backend
from .errors import (
    BackendError,
    CorruptManifest,
    EmptyCompletion,
    MalformedSession,
    OutOfOrderSession,
    ResearchAborted,
)
from .evalharness import BenchmarkConfig, Mode, load_dataset, run_benchmark
from .records import read_sessions
from .researcher import OutputFormat

EXIT_INPUT = 2
EXIT_BACKEND = 3


def _fail(message: str, code: int):
    click.echo(f"error: {message}", err=True)
    sys.exit(code)


def _config(ctx: click.Context, **flags) -> EngineConfig:
    try:
        return EngineConfig.resolve(ctx.obj.get("config_file"), **flags)
    except (ValueError, OSError) as exc:
        _fail(f"bad configuration: {exc}", EXIT_INPUT)


def _open(config: EngineConfig) -> Engine:
    try:
        return Engine.open(config)
    except CorruptManifest as exc:
        _fail(f"corrupt store: {exc}", EXIT_INPUT)
    except OSError as exc:
        _fail(str(exc), EXIT_INPUT)


def trace_path_for(store_path) -> Path:
    store = Path(store_path)
    return store.with_name(store.name + ".trace.json")


@click.group()
@click.option("--config", "config_file", type=click.Path(exists=True, dir_okay=False),
              help="TOML file with EngineConfig keys.")
@click.option("-v", "--verbose", is_flag=True)
@click.pass_context
def main(ctx: click.Context, config_file, verbose):
    """Agentic memory engine: ingest histories, research them, evaluate."""
    logging.basicConfig(level=logging.INFO if verbose else logging.WARNING, stream=sys.stderr)
    ctx.ensure_object(dict)
    ctx.obj["config_file"] = config_file


def backend_options(f):
    f = click.option("--rules", "scripted_rules", type=click.Path(exists=True, dir_okay=False),
                     help="Scripted backend rule file (JSON).")(f)
    f = click.option("--base-url", default=None, help="Chat-completion base URL.")(f)
    f = click.option("--model", default=None)(f)
    return f


@main.command()
@click.argument("sessions_file", type=click.Path(exists=True, dir_okay=False))
@click.option("--store", "store_path", default=None, help="Store directory.")
@click.option("--page-size", type=int, default=None)
@backend_options
@click.pass_context
def ingest(ctx, sessions_file, store_path, page_size, scripted_rules, base_url, model):
    """Ingest a JSON Lines session file into the store."""
    config = _config(ctx, store_path=store_path, page_size=page_size, scripted_rules=scripted_rules,
                     base_url=base_url, model=model)
    if not config.store_path:
        _fail("no store path (use --store or GAM_STORE)", EXIT_INPUT)
    try:
        sessions = read_sessions(sessions_file)
    except MalformedSession as exc:
        _fail(f"malformed session: {exc}", EXIT_INPUT)
    engine = _open(config)
    pages_before, memos_before = len(engine.store), len(engine.memory)
    try:
        for session in sessions:
            engine.ingest(session)
    except OutOfOrderSession as exc:
        _fail(f"OutOfOrderSession: {exc}", EXIT_INPUT)
    except (BackendError, EmptyCompletion) as exc:
        _fail(f"backend failure: {exc}", EXIT_BACKEND)
    engine.persist()
    click.echo(f"{len(sessions)} sessions, {len(engine.store) - pages_before} pages, "
               f"{len(engine.memory) - memos_before} memos")


@main.command("research")
@click.argument("request")
@click.option("--store", "store_path", default=None)
@click.option("--format", "output_format", type=click.Choice([f.value for f in OutputFormat]), default=None)
@click.option("--max-depth", type=int, default=None)
@click.option("--top-k", type=int, default=None)
@click.option("--tools", default=None, help="Comma-separated subset of bm25,embedding,page_id.")
@click.option("--trace", "trace_file", type=click.Path(dir_okay=False), default=None,
              help="Where to write the trace (default: <store>.trace.json).")
@backend_options
@click.pass_context
def research_cmd(ctx, request, store_path, output_format, max_depth, top_k, tools, trace_file,
                 scripted_rules, base_url, model):
    """Research REQUEST against the store and print the resulting context."""
    config = _config(ctx, store_path=store_path, output_format=output_format, max_reflection_depth=max_depth,
                     top_k=top_k, enabled_tools=tools, scripted_rules=scripted_rules, base_url=base_url,
                     model=model)
    if not config.store_path or not (Path(config.store_path) / "manifest.json").exists():
        _fail("store does not exist; run `gam ingest` first", EXIT_INPUT)
    engine = _open(config)
    trace_path = Path(trace_file) if trace_file else trace_path_for(config.store_path)
    try:
        final = engine.research(request)
    except ResearchAborted as exc:
        trace_path.write_text(json.dumps(exc.trace.to_dict(), indent=2) + "\n", encoding="utf-8")
        click.echo(f"trace: {trace_path}", err=True)
        _fail(str(exc), EXIT_BACKEND)
    trace_path.write_text(json.dumps(final.trace.to_dict(), indent=2) + "\n", encoding="utf-8")
    click.echo(final.context)
    click.echo(f"trace: {trace_path}", err=True)


@main.command("eval")
@click.argument("dataset", type=click.Path(exists=True, dir_okay=False))
@click.option("--mode", type=click.Choice([m.value for m in Mode]), default=Mode.GAM.value)
@click.option("--report", "report_path", type=click.Path(dir_okay=False), default="report.json")
@click.option("--page-size", type=int, default=None)
@click.option("--max-depth", type=int, default=None)
@click.option("--top-k", type=int, default=None)
@click.option("--tools", default=None)
@click.option("--no-brevity-penalty", is_flag=True)
@backend_options
@click.pass_context
def eval_cmd(ctx, dataset, mode, report_path, page_size, max_depth, top_k, tools, no_brevity_penalty,
             scripted_rules, base_url, model):
    """Run a benchmark over a JSON Lines QA dataset."""
    config = _config(ctx, page_size=page_size, max_reflection_depth=max_depth, top_k=top_k,
                     enabled_tools=tools, scripted_rules=scripted_rules, base_url=base_url, model=model)
    try:
        examples = load_dataset(dataset)
    except (ValueError, KeyError, MalformedSession) as exc:
        _fail(f"malformed dataset: {exc}", EXIT_INPUT)
    if not examples:
        _fail("dataset is empty", EXIT_INPUT)
    bench = BenchmarkConfig(page_size=config.page_size, research=config.research,
                            brevity_penalty=not no_brevity_penalty)
    report = run_benchmark(examples, mode, make_backend(config), bench)
    report.write(report_path)
    click.echo(report.table())


@main.command()
@click.option("--store", "store_path", default=None)
@click.option("--host", default="127.0.0.1")
@click.option("--port", type=int, default=8080)
@backend_options
@click.pass_context
def serve(ctx, store_path, host, port, scripted_rules, base_url, model):
    """Serve the HTTP API over the store."""
    import uvicorn

    from .service import create_app

    config = _config(ctx, store_path=store_path, scripted_rules=scripted_rules, base_url=base_url, model=model)
    if not config.store_path:
        _fail("no store path (use --store or GAM_STORE)", EXIT_INPUT)
    engine = _open(config)
    uvicorn.run(create_app(engine, persist=True), host=host, port=port)


if __name__ == "__main__":
    main()
