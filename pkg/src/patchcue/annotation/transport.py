"""Request transports and the extraction -> grounding driver.

A transport turns a :class:`PromptRequest` into the raw model text. The HTTP
transport speaks the common chat-completions wire format; the mock transport
serves canned responses keyed by request digest and never touches the network.
"""

from __future__ import annotations

import json
import logging
import os
import time
from abc import ABC, abstractmethod
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import Callable, Iterable, Mapping

import httpx

from patchcue.annotation.prompts import (
    AnnotationResponseError,
    PromptRequest,
    build_extraction_prompt,
    build_grounding_prompt,
    parse_bbox_response,
    parse_label_response,
)

logger = logging.getLogger(__name__)

DEFAULT_MAX_IN_FLIGHT = 4


class TransportError(RuntimeError):
    pass


class Transport(ABC):
    max_in_flight: int = DEFAULT_MAX_IN_FLIGHT

    @abstractmethod
    def send(self, request: PromptRequest) -> str:
        ...


class MockTransport(Transport):
    """Deterministic transport backed by a digest -> response mapping.

    ``responder`` (optional) is called for requests without a fixture, which
    lets tests synthesize responses from the request itself.
    """

    def __init__(
        self,
        fixtures: Mapping[str, str] | None = None,
        responder: Callable[[PromptRequest], str] | None = None,
        max_in_flight: int = DEFAULT_MAX_IN_FLIGHT,
    ):
        self.fixtures = dict(fixtures or {})
        self.responder = responder
        self.max_in_flight = max_in_flight
        self.calls: list[str] = []

    @classmethod
    def from_file(cls, path: str | os.PathLike) -> MockTransport:
        """Load fixtures from a JSON object or JSONL of {"digest", "response"}."""
        text = Path(path).read_text(encoding="utf-8")
        try:
            data = json.loads(text)
        except json.JSONDecodeError:
            data = None
        # A one-line JSONL file also parses as a single object.
        if isinstance(data, dict) and set(data) != {"digest", "response"}:
            return cls(data)
        fixtures = {}
        for line in text.splitlines():
            if line.strip():
                row = json.loads(line)
                fixtures[row["digest"]] = row["response"]
        return cls(fixtures)

    def send(self, request: PromptRequest) -> str:
        digest = request.digest()
        self.calls.append(digest)
        if digest in self.fixtures:
            return self.fixtures[digest]
        if self.responder is not None:
            return self.responder(request)
        raise TransportError(f"no fixture for {request.template_id} request {digest[:12]}")


class HttpTransport(Transport):
    """Chat-completions style endpoint with timeout and exponential-backoff retries."""

    RETRY_STATUS = {408, 429, 500, 502, 503, 504}

    def __init__(
        self,
        endpoint: str,
        model: str,
        api_key: str | None = None,
        timeout: float = 60.0,
        retries: int = 3,
        backoff: float = 0.5,
        max_in_flight: int = DEFAULT_MAX_IN_FLIGHT,
        client: httpx.Client | None = None,
    ):
        self.endpoint = endpoint
        self.model = model
        self.api_key = api_key
        self.timeout = timeout
        self.retries = retries
        self.backoff = backoff
        self.max_in_flight = max_in_flight
        self._client = client or httpx.Client(timeout=timeout)
        self._sleep = time.sleep

    @classmethod
    def from_env(cls, env: Mapping[str, str] | None = None, **kwargs) -> HttpTransport:
        env = os.environ if env is None else env
        try:
            endpoint = env["ANNOTATOR_ENDPOINT"]
        except KeyError:
            raise TransportError("ANNOTATOR_ENDPOINT is not set") from None
        return cls(
            endpoint=endpoint,
            model=env.get("ANNOTATOR_MODEL", "default"),
            api_key=env.get("ANNOTATOR_API_KEY"),
            timeout=float(env.get("ANNOTATOR_TIMEOUT_SECS", "60")),
            **kwargs,
        )

    def _payload(self, request: PromptRequest) -> dict:
        content: list[dict] = [{"type": "text", "text": request.rendered_text}]
        if request.image_ref:
            content.append({"type": "image_url", "image_url": {"url": request.image_ref}})
        return {"model": self.model, "messages": [{"role": "user", "content": content}]}

    def send(self, request: PromptRequest) -> str:
        headers = {"Authorization": f"Bearer {self.api_key}"} if self.api_key else {}
        payload = self._payload(request)
        last_error: Exception | None = None
        for attempt in range(self.retries + 1):
            if attempt:
                self._sleep(self.backoff * 2 ** (attempt - 1))
            try:
                resp = self._client.post(self.endpoint, json=payload, headers=headers,
                                         timeout=self.timeout)
            except httpx.TransportError as exc:
                last_error = exc
                logger.warning("annotator request failed (attempt %d): %s", attempt + 1, exc)
                continue
            if resp.status_code in self.RETRY_STATUS:
                last_error = TransportError(f"HTTP {resp.status_code}")
                logger.warning("annotator returned %d (attempt %d)", resp.status_code, attempt + 1)
                continue
            if resp.status_code >= 400:
                raise TransportError(f"HTTP {resp.status_code}: {resp.text[:200]}")
            try:
                return resp.json()["choices"][0]["message"]["content"]
            except (ValueError, KeyError, IndexError, TypeError) as exc:
                raise TransportError(f"unexpected response shape: {exc}") from None
        raise TransportError(f"giving up after {self.retries + 1} attempts: {last_error}")


def ground_sample(
    sample: dict,
    extractor: Transport,
    grounders: Mapping[str, Transport],
) -> dict:
    """Extract cue labels for one sample and ground them with every grounder.

    ``sample`` carries ``sample_id``, ``question``, ``answer``, ``image``
    ({"height", "width"}) and optionally ``image_ref``. The result follows the
    cue-candidate JSONL schema; failures land in ``"errors"``.
    """
    out = {"sample_id": sample["sample_id"], "image": sample["image"], "cues": [], "errors": []}
    image_ref = sample.get("image_ref")
    try:
        labels_raw = extractor.send(
            build_extraction_prompt(sample["question"], sample["answer"], image_ref)
        )
    except (TransportError, ValueError) as exc:
        out["errors"].append({"stage": "extraction", "detail": str(exc)})
        return out
    parsed = parse_label_response(labels_raw)
    if parsed.diagnostics:
        out["diagnostics"] = parsed.diagnostics
    if not parsed.labels:
        out["errors"].append({"stage": "extraction", "detail": "no labels"})
        return out

    request = build_grounding_prompt(parsed.labels, image_ref)
    per_label: list[list[dict]] = [[] for _ in parsed.labels]
    for name, transport in grounders.items():
        try:
            boxes = parse_bbox_response(transport.send(request), len(parsed.labels))
        except AnnotationResponseError as exc:
            out["errors"].append({"stage": "grounding", "source": name, "kind": exc.kind,
                                  "detail": str(exc)})
            continue
        except TransportError as exc:
            out["errors"].append({"stage": "grounding", "source": name, "detail": str(exc)})
            continue
        for slot, box in zip(per_label, boxes):
            slot.append({"source": name, "bbox": box.as_list(), "normalized": True})
    out["cues"] = [
        {"label": label, "candidates": cands} for label, cands in zip(parsed.labels, per_label)
    ]
    return out


def run_annotation(
    samples: Iterable[dict],
    extractor: Transport,
    grounders: Mapping[str, Transport],
) -> list[dict]:
    """Annotate samples concurrently within every transport's in-flight limit.

    Output order matches input order.
    """
    limit = min([extractor.max_in_flight, *(t.max_in_flight for t in grounders.values())])
    with ThreadPoolExecutor(max_workers=max(1, limit)) as pool:
        return list(pool.map(lambda s: ground_sample(s, extractor, grounders), samples))
