"""Command line interface.

Exit codes: 0 on success, 1 on operational failure (unreadable inputs,
parse errors, failed evaluation preconditions), 2 on usage errors. The
mock-heuristic analyst is the default client so every command runs
offline; pass ``--client live`` with a base URL and model to use a real
endpoint, or ``--client mock-scripted`` with a script file for canned
replies.
"""

from __future__ import annotations

import json
import os
import sys
from datetime import datetime, timezone
from pathlib import Path

import click

from rulegenie.embedding import (
    RemoteEmbedderBackend,
    builtin_deterministic_embedder,
    embed_set,
    load_embedding_cache,
    save_embedding_cache,
)
from rulegenie.evaluation import (
    evaluate,
    export_projection,
    load_ground_truth,
    summarize,
    sweep_k,
    sweep_threshold,
    write_sweep_csv,
)
from rulegenie.llm import HttpChatClient, MockLlmClient
from rulegenie.model import RuleGenieError, rule_to_dict
from rulegenie.orchestrator import PromptMode
from rulegenie.parsers import ingest as ingest_manifest
from rulegenie.parsers import Severity, load_manifest
from rulegenie.pipeline import (
    PipelineConfig,
    read_batch,
    resume_keys,
    run_prospective,
    run_retrospective,
    write_batch,
)
from rulegenie import synthetic

# Frozen timestamp handed to records under --seed so reruns are
# byte-identical; wall time is the only nondeterminism left otherwise.
_EPOCH = datetime(2024, 1, 1, tzinfo=timezone.utc)

_CLIENT_KINDS = ["mock-heuristic", "mock-scripted", "live"]


def _fail(message: str) -> None:
    click.echo(f"error: {message}", err=True)
    sys.exit(1)


def _clock_for(seed: int | None):
    if seed is None:
        return None
    return lambda: _EPOCH


def _load_config(config_path: str | None, **overrides) -> PipelineConfig:
    path = config_path or os.environ.get("RULEGENIE_CONFIG")
    if "prompt_mode" in overrides and overrides["prompt_mode"] is not None:
        overrides["prompt_mode"] = PromptMode(overrides["prompt_mode"])
    if path:
        return PipelineConfig.from_file(path, **overrides)
    return PipelineConfig().replace(**overrides)


def _build_backend(backend: str, remote_url: str | None, remote_model: str | None, dim: int):
    if backend == "builtin":
        return builtin_deterministic_embedder()
    if not remote_url or not remote_model:
        raise click.UsageError("--backend remote requires --remote-url and --remote-model")
    return RemoteEmbedderBackend(base_url=remote_url, model=remote_model, dimension=dim)


def _load_script(script_path: str | None) -> dict:
    """Script file maps "idA|idB|stage" to a canned reply (object or string)."""
    if not script_path:
        raise click.UsageError("--client mock-scripted requires --script")
    with open(script_path, encoding="utf-8") as fh:
        raw = json.load(fh)
    scripted = {}
    for key, reply in raw.items():
        id_a, id_b, stage = key.rsplit("|", 2)
        scripted[(tuple(sorted((id_a, id_b))), stage)] = reply
    return scripted


def _build_client(kind: str, config: PipelineConfig, base_url: str | None,
                  model: str | None, script_path: str | None = None):
    if kind == "mock-heuristic":
        return MockLlmClient(gate_threshold=config.threshold)
    if kind == "mock-scripted":
        return MockLlmClient(
            gate_threshold=config.threshold, scripted=_load_script(script_path)
        )
    if not base_url or not model:
        raise click.UsageError("--client live requires --base-url and --model")
    return HttpChatClient(base_url=base_url, model=model)


def _ingest(manifest_path: str, include_metadata: bool):
    manifest = load_manifest(manifest_path)
    rule_set, diagnostics = ingest_manifest(manifest, include_metadata=include_metadata)
    for diag in diagnostics:
        where = f"{diag.path}:{diag.line}" if diag.line else diag.path
        click.echo(f"{diag.severity.value}: {where}: {diag.message}", err=True)
    return rule_set, diagnostics


@click.group()
def main() -> None:
    """Detection rule redundancy analysis."""


@main.command("ingest")
@click.argument("manifest", type=click.Path(exists=True, dir_okay=False))
@click.option("--out", type=click.Path(dir_okay=False), help="Write parsed rules as JSON lines.")
@click.option("--include-metadata", is_flag=True, help="Fold title and description into canonical text.")
def ingest_cmd(manifest: str, out: str | None, include_metadata: bool) -> None:
    """Parse the rule files listed in MANIFEST."""
    try:
        rule_set, diagnostics = _ingest(manifest, include_metadata)
    except (RuleGenieError, OSError, json.JSONDecodeError, ValueError) as exc:
        _fail(str(exc))
    if out:
        with open(out, "w", encoding="utf-8") as fh:
            for rule in sorted(rule_set, key=lambda r: r.id):
                fh.write(json.dumps(rule_to_dict(rule), sort_keys=True) + "\n")
    errors = sum(1 for d in diagnostics if d.severity is Severity.ERROR)
    click.echo(f"parsed {len(rule_set)} rules, {errors} errors, "
               f"{len(diagnostics) - errors} warnings")
    if errors:
        sys.exit(1)


@main.command("embed")
@click.argument("manifest", type=click.Path(exists=True, dir_okay=False))
@click.option("--cache", "cache_path", required=True, type=click.Path(dir_okay=False),
              help="Embedding cache file to write.")
@click.option("--backend", type=click.Choice(["builtin", "remote"]), default="builtin",
              show_default=True)
@click.option("--remote-url", default=None)
@click.option("--remote-model", default=None)
@click.option("--dim", default=256, show_default=True)
@click.option("--config", "config_path", type=click.Path(exists=True, dir_okay=False))
def embed_cmd(manifest: str, cache_path: str, backend: str, remote_url: str | None,
              remote_model: str | None, dim: int, config_path: str | None) -> None:
    """Embed every rule in MANIFEST and write the cache."""
    try:
        config = _load_config(config_path)
        rule_set, _ = _ingest(manifest, include_metadata=False)
        embedder = _build_backend(backend, remote_url, remote_model, dim)
        embeddings, failures = embed_set(rule_set, embedder, config=config.embed_config())
        save_embedding_cache(cache_path, embeddings, rule_set)
    except (RuleGenieError, OSError, ValueError) as exc:
        _fail(str(exc))
    overflow = sorted(r for r, e in embeddings.items() if e.overflow)
    click.echo(f"embedded {len(embeddings)} rules "
               f"({len(overflow)} overflow-flagged, {len(failures)} failures)")
    for failure in failures:
        click.echo(f"error: {failure.rule_id}: {failure.error}", err=True)
    if failures:
        sys.exit(1)


def _analysis_inputs(manifest, config_path, k, threshold, prompt_mode, parallelism,
                     client_kind, base_url, model, script, cache, backend,
                     remote_url, remote_model, dim):
    config = _load_config(
        config_path, k=k, threshold=threshold,
        prompt_mode=prompt_mode, parallelism=parallelism,
    )
    rule_set, diagnostics = _ingest(manifest, include_metadata=False)
    if any(d.severity is Severity.ERROR for d in diagnostics):
        raise RuleGenieError("manifest contains unparseable rules; fix them first")
    embedder = _build_backend(backend, remote_url, remote_model, dim)
    client = _build_client(client_kind, config, base_url, model, script)
    embeddings = None
    if cache and Path(cache).exists():
        embeddings = load_embedding_cache(cache, rule_set, embedder.backend_id)
    return config, rule_set, embedder, client, embeddings


_SHARED_ANALYZE_OPTIONS = [
    click.option("--config", "config_path", type=click.Path(exists=True, dir_okay=False),
                 help="Pipeline config JSON; RULEGENIE_CONFIG is the fallback."),
    click.option("--k", type=click.IntRange(min=1), default=None,
                 help="Neighbors per target; default 5."),
    click.option("--threshold", type=click.IntRange(0, 100), default=None,
                 help="Semantic gate threshold; default 75."),
    click.option("--prompt-mode", type=click.Choice([m.value for m in PromptMode]),
                 default=None, help="Staging strategy; default chain_of_thought."),
    click.option("--parallelism", type=click.IntRange(min=1), default=None,
                 help="Concurrent pair analyses; default 4."),
    click.option("--client", "client_kind", type=click.Choice(_CLIENT_KINDS),
                 default="mock-heuristic", show_default=True),
    click.option("--base-url", default=None, help="Chat endpoint for --client live."),
    click.option("--model", default=None, help="Model name for --client live."),
    click.option("--script", type=click.Path(exists=True, dir_okay=False),
                 default=None, help="Replies file for --client mock-scripted."),
    click.option("--cache", type=click.Path(dir_okay=False), help="Embedding cache to reuse."),
    click.option("--backend", type=click.Choice(["builtin", "remote"]), default="builtin",
                 show_default=True, help="Embedder; builtin segments at 512/4096 tokens."),
    click.option("--remote-url", default=None),
    click.option("--remote-model", default=None),
    click.option("--dim", default=256, show_default=True),
    click.option("--seed", type=int, default=None,
                 help="Freeze timestamps so reruns are byte-identical."),
]


def _with_shared_options(command):
    for option in reversed(_SHARED_ANALYZE_OPTIONS):
        command = option(command)
    return command


@main.command("analyze")
@click.argument("manifest", type=click.Path(exists=True, dir_okay=False))
@click.option("--mode", type=click.Choice(["prospective", "retrospective"]),
              default="prospective", show_default=True)
@click.option("--out", required=True, type=click.Path(dir_okay=False),
              help="Batch records file (JSON lines).")
@click.option("--resume", is_flag=True, help="Skip pairs already present in --out.")
@_with_shared_options
def analyze_cmd(manifest: str, mode: str, out: str, resume: bool, config_path, k, threshold,
                prompt_mode, parallelism, client_kind, base_url, model, script, cache,
                backend, remote_url, remote_model, dim, seed) -> None:
    """Run the embed, retrieve, analyze pipeline over MANIFEST."""
    try:
        config, rule_set, embedder, client, embeddings = _analysis_inputs(
            manifest, config_path, k, threshold, prompt_mode, parallelism,
            client_kind, base_url, model, script, cache, backend,
            remote_url, remote_model, dim,
        )
        old_records: list = []
        skip: set = set()
        if resume:
            old_records, skip = resume_keys(out)
        runner = run_prospective if mode == "prospective" else run_retrospective
        result = runner(
            rule_set, embedder, client, config=config,
            clock=_clock_for(seed), skip_keys=skip, embeddings=embeddings,
        )
        write_batch(old_records + result.records, out)
        for failure in result.embed_failures:
            click.echo(f"error: embedding {failure.rule_id}: {failure.error}", err=True)
        budget_topk = result.stats["budget_with_retrieval"]
        budget_full = result.stats["budget_exhaustive"]
        speedup = budget_full / budget_topk if budget_topk else float("inf")
        click.echo(
            f"llm_call_count={result.llm_call_count} "
            f"gate_passed={result.stats['gate_passed']} "
            f"speedup={speedup:.1f}x ({budget_topk} vs {budget_full} stage-1 analyses)"
        )
        click.echo(json.dumps(result.stats, sort_keys=True))
    except (RuleGenieError, OSError, ValueError) as exc:
        _fail(str(exc))


@main.command("evaluate")
@click.option("--batch", "records_path", required=True,
              type=click.Path(exists=True, dir_okay=False),
              help="Batch records file from analyze.")
@click.option("--truth", "truth_path", required=True,
              type=click.Path(exists=True, dir_okay=False))
def evaluate_cmd(records_path: str, truth_path: str) -> None:
    """Score a batch records file against ground truth."""
    try:
        records = read_batch(records_path)
        truth = load_ground_truth(truth_path)
        report = evaluate(records, truth)
    except (RuleGenieError, OSError, ValueError, json.JSONDecodeError) as exc:
        _fail(str(exc))
    click.echo(json.dumps(report.to_dict(), sort_keys=True))


@main.command("sweep-k")
@click.argument("manifest", type=click.Path(exists=True, dir_okay=False))
@click.option("--truth", "truth_path", required=True,
              type=click.Path(exists=True, dir_okay=False))
@click.option("--ks", default="1,2,3,4,5,6,7,8,9,10", show_default=True,
              help="Comma-separated k values.")
@click.option("--out", type=click.Path(dir_okay=False),
              help="Write a (k, precision, recall) CSV table.")
@_with_shared_options
def sweep_k_cmd(manifest: str, truth_path: str, ks: str, out: str | None, config_path, k,
                threshold, prompt_mode, parallelism, client_kind, base_url, model, script,
                cache, backend, remote_url, remote_model, dim, seed) -> None:
    """Re-run the retrospective pipeline for each k and score it."""
    try:
        config, rule_set, embedder, _, embeddings = _analysis_inputs(
            manifest, config_path, k, threshold, prompt_mode, parallelism,
            client_kind, base_url, model, script, cache, backend,
            remote_url, remote_model, dim,
        )
        if embeddings is None:
            embeddings, _ = embed_set(rule_set, embedder, config=config.embed_config())
        truth = load_ground_truth(truth_path)
        k_values = [int(v) for v in ks.split(",") if v.strip()]

        def client_factory():
            return _build_client(client_kind, config, base_url, model, script)

        rows = sweep_k(rule_set, embedder, client_factory, k_values, truth,
                       config=config, clock=_clock_for(seed), embeddings=embeddings)
    except (RuleGenieError, OSError, ValueError) as exc:
        _fail(str(exc))
    if out:
        write_sweep_csv(rows, out, key="k")
    for row in rows:
        slim = {key: value for key, value in row.items() if key != "flagged_pairs"}
        click.echo(json.dumps(slim, sort_keys=True))


@main.command("sweep-threshold")
@click.argument("manifest", type=click.Path(exists=True, dir_okay=False))
@click.option("--truth", "truth_path", required=True,
              type=click.Path(exists=True, dir_okay=False))
@click.option("--thresholds", default="65,75,85", show_default=True,
              help="Comma-separated gate thresholds.")
@click.option("--out", type=click.Path(dir_okay=False),
              help="Write a (threshold, precision, recall) CSV table.")
@_with_shared_options
def sweep_threshold_cmd(manifest: str, truth_path: str, thresholds: str, out: str | None,
                        config_path, k, threshold, prompt_mode, parallelism, client_kind,
                        base_url, model, script, cache, backend, remote_url, remote_model,
                        dim, seed) -> None:
    """One pipeline run at the lowest threshold, re-gated at each value."""
    try:
        config, rule_set, embedder, _, embeddings = _analysis_inputs(
            manifest, config_path, k, threshold, prompt_mode, parallelism,
            client_kind, base_url, model, script, cache, backend,
            remote_url, remote_model, dim,
        )
        if embeddings is None:
            embeddings, _ = embed_set(rule_set, embedder, config=config.embed_config())
        truth = load_ground_truth(truth_path)
        values = [int(v) for v in thresholds.split(",") if v.strip()]

        def client_factory(floor: int):
            if client_kind == "mock-heuristic":
                return MockLlmClient(gate_threshold=floor)
            return _build_client(client_kind, config, base_url, model, script)

        rows = sweep_threshold(rule_set, embedder, client_factory, values, truth,
                               config=config, clock=_clock_for(seed), embeddings=embeddings)
    except (RuleGenieError, OSError, ValueError) as exc:
        _fail(str(exc))
    if out:
        write_sweep_csv(rows, out, key="threshold")
    for row in rows:
        click.echo(json.dumps(row, sort_keys=True))


@main.command("export-projection")
@click.option("--cache", "cache_path", required=True,
              type=click.Path(exists=True, dir_okay=False),
              help="Embedding cache produced by the embed command.")
@click.option("--manifest", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--out", required=True, type=click.Path(dir_okay=False))
@click.option("--target", default=None, help="Rule id to mark in the is_target column.")
@click.option("--backend-id", default="builtin-trigram-256/v1", show_default=True)
def export_projection_cmd(cache_path: str, manifest: str, out: str,
                          target: str | None, backend_id: str) -> None:
    """Project cached embeddings to 2-D coordinates."""
    try:
        rule_set, _ = _ingest(manifest, include_metadata=False)
        embeddings = load_embedding_cache(cache_path, rule_set, backend_id)
        result = export_projection(embeddings, target=target, path=out)
    except (RuleGenieError, OSError, ValueError) as exc:
        _fail(str(exc))
    click.echo(json.dumps(
        {"points": len(result.coords), "captured_variance": round(result.captured_variance, 6)},
        sort_keys=True,
    ))


@main.command("report")
@click.option("--batch", "records_path", required=True,
              type=click.Path(dir_okay=False),
              help="Batch records file from analyze.")
@click.option("--truth", "truth_path", type=click.Path(dir_okay=False))
@click.option("--manifest", type=click.Path(dir_okay=False),
              help="Widen rule-id resolution beyond the batch file.")
def report_cmd(records_path: str, truth_path: str | None, manifest: str | None) -> None:
    """Summarize a batch records file, optionally scored against truth."""
    try:
        records = read_batch(records_path)
        summary = summarize(records)
        table = [
            ("records", summary["records"]),
            ("gate_passed", summary["gate_passed"]),
            ("failures", summary["failures"]),
        ]
        if truth_path:
            truth = load_ground_truth(truth_path)
            known = {rid for r in records for rid in (r.target_id, r.candidate_id)}
            if manifest:
                rule_set, _ = _ingest(manifest, include_metadata=False)
                known |= set(rule_set.ids())
            unresolved = sorted(
                {rid for key in truth.expected for rid in key} - known
            )
            if unresolved:
                raise RuleGenieError(f"truth references unknown rule ids: {unresolved}")
            report = evaluate(records, truth)
            summary["evaluation"] = report.to_dict()
            table += [
                ("recall", summary["evaluation"]["recall"]),
                ("precision", summary["evaluation"]["precision"]),
            ]
    except (RuleGenieError, OSError, ValueError, json.JSONDecodeError) as exc:
        _fail(str(exc))
    click.echo(json.dumps(summary, indent=2, sort_keys=True))
    width = max(len(name) for name, _ in table)
    for name, value in table:
        click.echo(f"{name:<{width}}  {value}")


@main.command("synth")
@click.option("--out", "out_dir", required=True, type=click.Path(file_okay=False))
@click.option("--seed", type=int, default=synthetic.DEFAULT_SEED, show_default=True)
@click.option("--rules", type=int, default=synthetic.DEFAULT_RULES, show_default=True)
@click.option("--plants", type=int, default=synthetic.DEFAULT_PLANTS, show_default=True)
def synth_cmd(out_dir: str, seed: int, rules: int, plants: int) -> None:
    """Generate a synthetic corpus with planted redundant pairs."""
    try:
        manifest_path, truth_path = synthetic.write_corpus(
            out_dir, seed=seed, n_rules=rules, n_plants=plants
        )
    except (RuleGenieError, OSError, ValueError) as exc:
        _fail(str(exc))
    click.echo(f"wrote {manifest_path} and {truth_path}")


@main.command("serve")
@click.option("--store", "store_dir", required=True, type=click.Path(file_okay=False))
@click.option("--host", default="127.0.0.1", show_default=True)
@click.option("--port", type=int, default=8321, show_default=True)
@click.option("--ui-dir", type=click.Path(file_okay=False), default=None)
@click.option("--config", "config_path", type=click.Path(exists=True, dir_okay=False))
@click.option("--threshold", type=click.IntRange(0, 100), default=None,
              help="Semantic gate threshold; default 75.")
@click.option("--k", type=click.IntRange(min=1), default=None,
              help="Neighbors per target; default 5.")
@click.option("--client", "client_kind", type=click.Choice(_CLIENT_KINDS),
              default="mock-heuristic", show_default=True)
@click.option("--base-url", default=None)
@click.option("--model", default=None)
@click.option("--script", type=click.Path(exists=True, dir_okay=False), default=None)
@click.option("--export-openapi", "openapi_path", type=click.Path(dir_okay=False),
              help="Write the API description to this file and exit.")
def serve_cmd(store_dir: str, host: str, port: int, ui_dir: str | None,
              config_path: str | None, threshold: int | None, k: int | None,
              client_kind: str, base_url: str | None, model: str | None,
              script: str | None, openapi_path: str | None) -> None:
    """Serve the HTTP API over an event store directory."""
    from rulegenie.service import create_app, export_openapi
    from rulegenie.store import Store

    try:
        config = _load_config(config_path, k=k, threshold=threshold)
        store = Store.open(store_dir)
        client = _build_client(client_kind, config, base_url, model, script)
        app = create_app(store, config=config, client=client, ui_dir=ui_dir)
    except (RuleGenieError, OSError, ValueError) as exc:
        _fail(str(exc))
    if openapi_path:
        export_openapi(app, openapi_path)
        click.echo(f"wrote {openapi_path}")
        return
    import uvicorn

    uvicorn.run(app, host=host, port=port, log_level="warning")


if __name__ == "__main__":
    main()
