"""HTTP service exposing the rule library, recommendations, and batch jobs.

The API is the only integration surface for user interfaces: list and
ingest rules, review pending recommendations, submit decisions, note manual
review of flagged rules, and launch batch analysis jobs. All jobs run on a
single background worker so every run sees a frozen index; batch jobs are
additionally single-flight, so launching one while another is queued or
running is refused rather than stacked.

Set RULEGENIE_API_TOKEN to require a bearer token on /api routes. Mutating
posts honor an Idempotency-Key header: replaying the same key and body
returns the original response instead of a conflict.
"""

from __future__ import annotations

import hashlib
import json
import queue
import threading
from dataclasses import dataclass, field
from pathlib import Path

from fastapi import Depends, FastAPI, Request
from fastapi.responses import JSONResponse
from fastapi.staticfiles import StaticFiles

from rulegenie.embedding import EmbedderBackend, builtin_deterministic_embedder
from rulegenie.llm import LlmClient, MockLlmClient
from rulegenie.model import (
    DuplicateId,
    NotFound,
    RuleFormat,
    RuleOrigin,
    RuleStatus,
    rule_to_dict,
)
from rulegenie.orchestrator import AnalysisRecord, PromptMode, record_to_dict
from rulegenie.parsers import ParseError, parse_document
from rulegenie.pipeline import (
    PipelineConfig,
    run_prospective,
    run_retrospective,
    run_targeted,
)
from rulegenie.store import AlreadyDecided, DECISION_KINDS, Store, decision_to_dict

OVERFLOW_FLAG_REASON = "token count exceeds overflow limit"

_CONFIG_OVERRIDE_KEYS = ("k", "threshold", "prompt_mode", "parallelism")


class ApiError(Exception):
    def __init__(self, status_code: int, code: str, message: str) -> None:
        super().__init__(message)
        self.status_code = status_code
        self.code = code
        self.message = message


@dataclass
class Job:
    id: str
    kind: str
    mode: str
    state: str = "queued"
    pairs_done: int = 0
    pairs_planned: int = 0
    counts: dict | None = None
    error: str | None = None
    target_id: str | None = None
    config: PipelineConfig | None = None

    def to_dict(self) -> dict:
        return {
            "id": self.id,
            "kind": self.kind,
            "mode": self.mode,
            "state": self.state,
            "progress": {
                "pairs_done": self.pairs_done,
                "pairs_planned": self.pairs_planned,
            },
            "counts": self.counts,
            "error": self.error,
            "target_id": self.target_id,
        }


@dataclass
class ServiceContext:
    store: Store
    config: PipelineConfig
    client: LlmClient
    backend: EmbedderBackend
    api_token: str = ""
    lock: threading.RLock = field(default_factory=threading.RLock)
    jobs_lock: threading.RLock = field(default_factory=threading.RLock)
    jobs: dict[str, Job] = field(default_factory=dict)
    job_queue: queue.Queue = field(default_factory=queue.Queue)
    worker: threading.Thread | None = None
    job_counter: int = 0
    idempotency: dict[str, tuple[str, int, dict]] = field(default_factory=dict)

    def batch_active(self) -> bool:
        with self.jobs_lock:
            return any(
                j.kind == "batch" and j.state in ("queued", "running")
                for j in self.jobs.values()
            )

    def enqueue(self, job: Job) -> None:
        with self.jobs_lock:
            self.jobs[job.id] = job
            self.job_queue.put(job)
            if self.worker is None or not self.worker.is_alive():
                self.worker = threading.Thread(
                    target=_worker_loop, args=(self,), daemon=True
                )
                self.worker.start()


def _worker_loop(ctx: ServiceContext) -> None:
    while True:
        job = ctx.job_queue.get()
        if job is None:
            return
        _run_job(ctx, job)


def _run_job(ctx: ServiceContext, job: Job) -> None:
    job.state = "running"

    def progress(done: int, planned: int) -> None:
        job.pairs_done = done
        job.pairs_planned = planned

    try:
        with ctx.lock:
            flagged_before = {r.id for r in ctx.store.flagged_rules()}
            config = job.config or ctx.config
            if job.kind == "rule":
                result = run_targeted(
                    ctx.store.state.rule_set, [job.target_id], ctx.backend,
                    ctx.client, config=config, progress=progress,
                )
            else:
                runner = (
                    run_prospective if job.mode == "prospective" else run_retrospective
                )
                result = runner(
                    ctx.store.state.rule_set, ctx.backend, ctx.client,
                    config=config, progress=progress,
                )
            for record in result.records:
                ctx.store.record_analysis(record)
            ctx.store.reconcile_flags(flagged_before, reason=OVERFLOW_FLAG_REASON)
            ctx.store.save_snapshot()
        job.counts = result.stats
        job.state = "done"
    except Exception as exc:  # job errors surface via the jobs endpoint
        job.error = f"{type(exc).__name__}: {exc}"
        job.state = "failed"


def _record_summary(ctx: ServiceContext, record: AnalysisRecord) -> dict:
    data = record_to_dict(record, include_exchanges=False)
    data["analysis_id"] = record.id
    decision = ctx.store.state.decisions.get(record.id)
    data["decision"] = decision_to_dict(decision) if decision else None
    for side in ("target", "candidate"):
        rule_id = data[f"{side}_id"]
        try:
            rule = ctx.store.state.rule_set.get(rule_id)
            data[side] = {
                "id": rule.id,
                "title": rule.title,
                "format": rule.format.value,
                "platform": rule.platform,
                "status": rule.status.value,
                "canonical_text": rule.canonical_text,
            }
        except NotFound:
            data[side] = None
    return data


def _config_with_overrides(base: PipelineConfig, overrides: dict) -> PipelineConfig:
    unknown = set(overrides) - set(_CONFIG_OVERRIDE_KEYS)
    if unknown:
        raise ApiError(400, "bad_config", f"unknown config keys {sorted(unknown)}")
    kwargs = dict(overrides)
    if "prompt_mode" in kwargs:
        try:
            kwargs["prompt_mode"] = PromptMode(kwargs["prompt_mode"])
        except ValueError:
            raise ApiError(400, "bad_config", f"unknown prompt_mode {kwargs['prompt_mode']!r}")
    try:
        return base.replace(**kwargs)
    except (TypeError, ValueError) as exc:
        raise ApiError(400, "bad_config", str(exc))


def create_app(
    store: Store,
    config: PipelineConfig | None = None,
    client: LlmClient | None = None,
    backend: EmbedderBackend | None = None,
    api_token: str | None = None,
    ui_dir: str | Path | None = None,
) -> FastAPI:
    """Build the FastAPI app around an open store."""
    import os

    config = config or PipelineConfig()
    ctx = ServiceContext(
        store=store,
        config=config,
        client=client or MockLlmClient(gate_threshold=config.threshold),
        backend=backend or builtin_deterministic_embedder(),
        api_token=api_token if api_token is not None else os.environ.get("RULEGENIE_API_TOKEN", ""),
    )
    app = FastAPI(title="rulegenie", version="0.1.0", docs_url=None, redoc_url=None)
    app.state.ctx = ctx

    @app.exception_handler(ApiError)
    async def _api_error(_request: Request, exc: ApiError) -> JSONResponse:
        return JSONResponse(
            status_code=exc.status_code,
            content={"code": exc.code, "message": exc.message},
        )

    async def require_token(request: Request) -> None:
        if not ctx.api_token:
            return
        header = request.headers.get("authorization", "")
        if header != f"Bearer {ctx.api_token}":
            raise ApiError(401, "unauthorized", "missing or invalid bearer token")

    guarded = [Depends(require_token)]

    def _next_job(kind: str, mode: str, **extra) -> Job:
        with ctx.jobs_lock:
            ctx.job_counter += 1
            return Job(id=f"job-{ctx.job_counter:04d}", kind=kind, mode=mode, **extra)

    @app.get("/api/health")
    async def health() -> dict:
        return {"status": "ok", "rules": len(ctx.store.state.rule_set)}

    @app.get("/api/rules", dependencies=guarded)
    async def list_rules(
        status: str | None = None,
        format: str | None = None,
        origin: str | None = None,
        page_size: int = 100,
        page_token: str | None = None,
    ) -> dict:
        if page_size < 1:
            raise ApiError(400, "bad_filter", "page_size must be positive")
        with ctx.lock:
            rules = sorted(ctx.store.state.rule_set, key=lambda r: r.id)
            if status is not None:
                try:
                    wanted = RuleStatus(status)
                except ValueError:
                    raise ApiError(400, "bad_filter", f"unknown status {status!r}")
                rules = [r for r in rules if r.status is wanted]
            if format is not None:
                try:
                    wanted_format = RuleFormat(format)
                except ValueError:
                    raise ApiError(400, "bad_filter", f"unknown format {format!r}")
                rules = [r for r in rules if r.format is wanted_format]
            if origin is not None:
                try:
                    wanted_origin = RuleOrigin(origin)
                except ValueError:
                    raise ApiError(400, "bad_filter", f"unknown origin {origin!r}")
                rules = [r for r in rules if r.origin is wanted_origin]
            # cursor pagination: the token is the last id of the previous page
            if page_token is not None:
                rules = [r for r in rules if r.id > page_token]
            page = rules[:page_size]
            next_token = page[-1].id if len(rules) > page_size else None
            payload = [rule_to_dict(r) for r in page]
            for item in payload:
                item["manual_review_notes"] = list(
                    ctx.store.state.manual_reviews.get(item["id"], [])
                )
            return {
                "rules": payload,
                "revision": ctx.store.state.rule_set.revision,
                "next_page_token": next_token,
            }

    @app.get("/api/rules/{rule_id}", dependencies=guarded)
    async def get_rule(rule_id: str) -> dict:
        with ctx.lock:
            try:
                rule = ctx.store.state.rule_set.get(rule_id)
            except NotFound as exc:
                raise ApiError(404, "not_found", str(exc))
            data = rule_to_dict(rule)
            data["manual_review_notes"] = list(ctx.store.state.manual_reviews.get(rule_id, []))
            return data

    @app.post("/api/rules", dependencies=guarded, status_code=201)
    async def ingest_rule(body: dict, request: Request) -> JSONResponse:
        document = body.get("source")
        fmt_raw = body.get("format")
        if not isinstance(document, str) or not document.strip():
            raise ApiError(400, "bad_request", "body requires a non-empty 'source'")
        try:
            fmt = RuleFormat(fmt_raw)
        except ValueError:
            raise ApiError(400, "bad_request", f"unknown format {fmt_raw!r}")
        try:
            origin = RuleOrigin(body.get("origin", RuleOrigin.NEW.value))
        except ValueError:
            raise ApiError(400, "bad_request", f"unknown origin {body.get('origin')!r}")
        idem_key = request.headers.get("idempotency-key")
        body_hash = _body_hash("ingest", body)
        with ctx.lock:
            replay = _idempotent_replay(ctx, idem_key, body_hash)
            if replay is not None:
                return replay
            try:
                rule = parse_document(document, fmt, origin=origin)
            except ParseError as exc:
                raise ApiError(422, "parse_error", f"{type(exc).__name__}: {exc}")
            try:
                ctx.store.ingest_rule(rule)
            except DuplicateId as exc:
                raise ApiError(409, "duplicate", str(exc))
            job = _next_job("rule", "prospective", target_id=rule.id)
            ctx.enqueue(job)
            payload = {"rule_id": rule.id, "job_id": job.id, "rule": rule_to_dict(rule)}
            if idem_key is not None:
                ctx.idempotency[idem_key] = (body_hash, 201, payload)
        return JSONResponse(status_code=201, content=payload)

    @app.post("/api/rules/{rule_id}/review", dependencies=guarded)
    async def review_rule(rule_id: str, body: dict | None = None) -> dict:
        note = str((body or {}).get("note", ""))
        with ctx.lock:
            try:
                ctx.store.note_manual_review(rule_id, note)
            except NotFound as exc:
                raise ApiError(404, "not_found", str(exc))
            return {
                "rule_id": rule_id,
                "manual_review_notes": list(ctx.store.state.manual_reviews[rule_id]),
            }

    @app.get("/api/recommendations", dependencies=guarded)
    async def list_recommendations(undecided: bool = False) -> dict:
        with ctx.lock:
            records = [
                record
                for record in ctx.store.state.analyses.values()
                if record.gate_passed
            ]
            if undecided:
                records = [r for r in records if r.id not in ctx.store.state.decisions]
            records.sort(key=lambda r: (-r.verdict.score, r.pair_key, r.id))
            return {"recommendations": [_record_summary(ctx, r) for r in records]}

    @app.post("/api/recommendations/{analysis_id}/decision", dependencies=guarded)
    async def decide(analysis_id: str, body: dict, request: Request) -> JSONResponse:
        decision = body.get("decision")
        analyst = str(body.get("analyst", ""))
        note = str(body.get("note", ""))
        edited_action = body.get("edited_action")
        if decision not in DECISION_KINDS:
            raise ApiError(
                400, "bad_request", f"decision must be one of {list(DECISION_KINDS)}"
            )
        idem_key = request.headers.get("idempotency-key")
        body_hash = _body_hash(analysis_id, body)
        with ctx.lock:
            replay = _idempotent_replay(ctx, idem_key, body_hash)
            if replay is not None:
                return replay
            record = ctx.store.state.analyses.get(analysis_id)
            retire_id = None
            if record is not None and record.recommendation is not None:
                retire_id = record.recommendation.retire_id
            retired_before = _is_retired(ctx, retire_id)
            try:
                decided = ctx.store.decide(
                    analysis_id, decision,
                    analyst=analyst, note=note, edited_action=edited_action,
                )
            except NotFound as exc:
                raise ApiError(404, "not_found", str(exc))
            except AlreadyDecided as exc:
                raise ApiError(409, "already_decided", str(exc))
            except ValueError as exc:
                raise ApiError(400, "bad_request", str(exc))
            ctx.store.save_snapshot()
            payload = decision_to_dict(decided)
            payload["revision"] = ctx.store.state.rule_set.revision
            payload["retired_rule_id"] = (
                retire_id
                if retire_id is not None
                and not retired_before
                and _is_retired(ctx, retire_id)
                else None
            )
            if idem_key is not None:
                ctx.idempotency[idem_key] = (body_hash, 200, payload)
            return JSONResponse(status_code=200, content=payload)

    @app.post("/api/batches", dependencies=guarded, status_code=202)
    async def start_batch(body: dict | None = None) -> dict:
        body = body or {}
        mode = body.get("mode", "prospective")
        if mode not in ("prospective", "retrospective"):
            raise ApiError(400, "bad_request", f"unknown mode {mode!r}")
        overrides = body.get("config") or {}
        if not isinstance(overrides, dict):
            raise ApiError(400, "bad_config", "config must be an object")
        job_config = _config_with_overrides(ctx.config, overrides)
        # Only job bookkeeping here; taking ctx.lock would block behind a
        # running batch and the single-flight 409 would never be seen.
        with ctx.jobs_lock:
            if ctx.batch_active():
                raise ApiError(
                    409, "busy", "a batch job is already queued or running"
                )
            job = _next_job("batch", mode, config=job_config)
            ctx.enqueue(job)
        return {"job_id": job.id, "state": job.state}

    @app.get("/api/jobs/{job_id}", dependencies=guarded)
    async def get_job(job_id: str) -> dict:
        job = ctx.jobs.get(job_id)
        if job is None:
            raise ApiError(404, "not_found", f"no job {job_id!r}")
        return job.to_dict()

    if ui_dir is not None and Path(ui_dir).is_dir():
        app.mount("/ui", StaticFiles(directory=str(ui_dir), html=True), name="ui")

    return app


def _body_hash(scope: str, body: dict) -> str:
    return hashlib.sha256(
        json.dumps({"scope": scope, "body": body}, sort_keys=True).encode("utf-8")
    ).hexdigest()


def _idempotent_replay(
    ctx: ServiceContext, idem_key: str | None, body_hash: str
) -> JSONResponse | None:
    if idem_key is None or idem_key not in ctx.idempotency:
        return None
    stored_hash, status_code, payload = ctx.idempotency[idem_key]
    if stored_hash != body_hash:
        raise ApiError(
            409, "idempotency_conflict",
            "Idempotency-Key was already used with a different request",
        )
    return JSONResponse(status_code=status_code, content=payload)


def _is_retired(ctx: ServiceContext, rule_id: str | None) -> bool:
    if rule_id is None:
        return False
    try:
        return ctx.store.state.rule_set.get(rule_id).status is RuleStatus.RETIRED
    except NotFound:
        return False


def export_openapi(app: FastAPI, path: str | Path) -> None:
    Path(path).write_text(json.dumps(app.openapi(), indent=2, sort_keys=True) + "\n")
