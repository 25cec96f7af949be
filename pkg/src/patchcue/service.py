"""Stateless HTTP reward service.

Malformed trace text is a scoring outcome (``r_format = 0``), never an HTTP
error; only malformed request bodies (400), invalid cues or grids (422) and
oversized batches (413) are rejected.
"""

from __future__ import annotations

import itertools
import json
import logging

from fastapi import FastAPI, Request
from fastapi.concurrency import run_in_threadpool
from fastapi.responses import Response

from patchcue import __version__
from patchcue.config import Settings
from patchcue.grpo import group_advantages
from patchcue.records import RecordError, dumps, error_record, score_record

logger = logging.getLogger(__name__)


def _json(obj, status: int = 200) -> Response:
    return Response(dumps(obj), status_code=status, media_type="application/json")


def _error(status: int, detail: str) -> Response:
    return _json({"error": {"status": status, "detail": detail}}, status)


async def _body(request: Request):
    raw = await request.body()
    try:
        return json.loads(raw)
    except (json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise RecordError(400, f"malformed JSON body: {exc}") from None


def _score_batch(items: list, settings: Settings) -> list[dict]:
    out = []
    for item in items:
        try:
            out.append(score_record(item, settings))
        except RecordError as exc:
            rid = item.get("id") if isinstance(item, dict) else None
            out.append(error_record(rid, exc))
    return out


def create_app(settings: Settings | None = None) -> FastAPI:
    settings = settings or Settings.resolve()
    app = FastAPI(title="patchcue reward service", version=__version__)
    counter = itertools.count(1)
    app.state.settings = settings
    app.state.requests = 0

    @app.middleware("http")
    async def count_requests(request: Request, call_next):
        app.state.requests = next(counter)
        return await call_next(request)

    @app.get("/v1/health")
    async def health() -> Response:
        return _json({"status": "ok", "version": __version__, "requests": app.state.requests})

    @app.get("/v1/config")
    async def config() -> Response:
        return _json(settings.public())

    @app.post("/v1/score")
    async def score(request: Request) -> Response:
        try:
            body = await _body(request)
            result = await run_in_threadpool(score_record, body, settings)
        except RecordError as exc:
            return _error(exc.status, str(exc))
        return _json(result)

    @app.post("/v1/score/batch")
    async def score_batch(request: Request) -> Response:
        try:
            body = await _body(request)
        except RecordError as exc:
            return _error(exc.status, str(exc))
        if not isinstance(body, list):
            return _error(400, "batch body must be a JSON array")
        if len(body) > settings.max_batch:
            return _error(413, f"batch of {len(body)} exceeds limit {settings.max_batch}")
        return _json(await run_in_threadpool(_score_batch, body, settings))

    @app.post("/v1/grpo/advantages")
    async def advantages(request: Request) -> Response:
        try:
            body = await _body(request)
        except RecordError as exc:
            return _error(exc.status, str(exc))
        if not isinstance(body, dict):
            return _error(400, "body must be a JSON object")
        rewards = body.get("rewards")
        floor = body.get("std_floor", settings.std_floor)
        if (
            not isinstance(rewards, list) or not rewards
            or not all(isinstance(r, (int, float)) and not isinstance(r, bool) for r in rewards)
        ):
            return _error(400, "rewards must be a non-empty list of numbers")
        if not isinstance(floor, (int, float)) or floor <= 0:
            return _error(400, "std_floor must be a positive number")
        adv = group_advantages([float(r) for r in rewards], float(floor))
        return _json({"advantages": [round(a, 6) for a in adv]})

    return app
