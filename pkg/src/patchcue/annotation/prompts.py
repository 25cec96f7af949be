"""Prompt builders and response parsers for cue extraction, grounding and
reasoning construction.

Templates live in ``templates/*.txt`` and are checked against pinned SHA-256
digests when loaded. Substitution is a single regex pass over ``{question}``,
``{answer}`` and ``{cues}``, so user text containing those tokens is never
expanded twice. Label text is passed verbatim except ``&``, ``<`` and ``>``,
which are entity-escaped so a label cannot close its own tag.
"""

from __future__ import annotations

import hashlib
import html
import math
import re
from dataclasses import dataclass, field
from functools import lru_cache
from importlib import resources
from typing import Sequence

from patchcue.geometry import PixelBBox

TEMPLATE_VERSION = "1"
TEMPLATE_SHA256 = {
    "extraction": "58210cd07ca05fed1be5f72f74705f7e689c3ea6db6f7c8c36bc8b792bdef36b",
    "grounding": "16d2b3b16f5e10b4a5bca3c7b3b4fd3b47c5b29401454713d8b0897a58994954",
    "reasoning": "825ca8c6eccb5708df1cd91bec07c1b07763a476341bd8b9c4506459dab0457a",
}
MAX_CUES = 5

_PLACEHOLDER = re.compile(r"\{(question|answer|cues)\}")
_LABEL_RE = re.compile(r"<label>(.*?)</label>", re.DOTALL)
_BBOX_RE = re.compile(r"<bbox>(.*?)</bbox>", re.DOTALL)


class TemplateIntegrityError(RuntimeError):
    pass


class AnnotationResponseError(ValueError):
    """A model response that cannot be used; ``kind`` names the failure."""

    def __init__(self, kind: str, message: str):
        super().__init__(message)
        self.kind = kind


@dataclass(frozen=True)
class PromptRequest:
    template_id: str
    rendered_text: str
    image_ref: str | None = None

    def digest(self) -> str:
        h = hashlib.sha256()
        for part in (self.template_id, self.rendered_text, self.image_ref or ""):
            h.update(part.encode("utf-8"))
            h.update(b"\0")
        return h.hexdigest()


@dataclass
class LabelParse:
    labels: list[str] = field(default_factory=list)
    diagnostics: list[str] = field(default_factory=list)


@lru_cache(maxsize=None)
def load_template(template_id: str) -> str:
    if template_id not in TEMPLATE_SHA256:
        raise KeyError(f"unknown template {template_id!r}")
    raw = resources.files("patchcue.annotation").joinpath(f"templates/{template_id}.txt").read_bytes()
    digest = hashlib.sha256(raw).hexdigest()
    if digest != TEMPLATE_SHA256[template_id]:
        raise TemplateIntegrityError(f"template {template_id!r} checksum mismatch: {digest}")
    return raw.decode("utf-8")


def _render(template_id: str, image_ref: str | None, **values: str) -> PromptRequest:
    text = _PLACEHOLDER.sub(lambda m: values[m.group(1)], load_template(template_id))
    return PromptRequest(template_id, text.rstrip("\n"), image_ref)


def _require_text(name: str, value: str) -> str:
    if not isinstance(value, str) or not value.strip():
        raise ValueError(f"{name} must be a non-empty string")
    return value.strip()


def escape_label(label: str) -> str:
    return html.escape(label, quote=False)


def format_bbox(b: PixelBBox) -> str:
    return f"<bbox>[{b.x1:.3f}, {b.y1:.3f}, {b.x2:.3f}, {b.y2:.3f}]</bbox>"


def build_extraction_prompt(question: str, answer: str, image_ref: str | None = None) -> PromptRequest:
    return _render(
        "extraction", image_ref,
        question=_require_text("question", question),
        answer=_require_text("answer", answer),
        cues="",
    )


def _check_labels(labels: Sequence[str]) -> list[str]:
    if not labels:
        raise ValueError("at least one cue label is required")
    if len(labels) > MAX_CUES:
        raise ValueError(f"at most {MAX_CUES} cues are allowed, got {len(labels)}")
    return [_require_text("label", label) for label in labels]


def build_grounding_prompt(labels: Sequence[str], image_ref: str | None = None) -> PromptRequest:
    cues = "\n".join(f"<label>{escape_label(label)}</label>" for label in _check_labels(labels))
    return _render("grounding", image_ref, cues=cues, question="", answer="")


def build_reasoning_prompt(
    question: str,
    answer: str,
    cues: Sequence[tuple[str, PixelBBox]],
    image_ref: str | None = None,
) -> PromptRequest:
    labels = _check_labels([label for label, _ in cues])
    lines = []
    for label, (_, box) in zip(labels, cues):
        if not box.normalized:
            raise ValueError("reasoning prompts take normalized boxes")
        lines.append(f"<label>{escape_label(label)}</label> {format_bbox(box)}")
    return _render(
        "reasoning", image_ref,
        question=_require_text("question", question),
        answer=_require_text("answer", answer),
        cues="\n".join(lines),
    )


def parse_label_response(raw: str) -> LabelParse:
    result = LabelParse()
    labels = [html.unescape(m.strip()) for m in _LABEL_RE.findall(raw or "")]
    labels = [label for label in labels if label]
    if not labels:
        result.diagnostics.append("no <label> tags found")
    if len(labels) > MAX_CUES:
        result.diagnostics.append(f"{len(labels)} labels returned; kept the first {MAX_CUES}")
        labels = labels[:MAX_CUES]
    result.labels = labels
    return result


def parse_bbox_response(raw: str, expected: int) -> list[PixelBBox]:
    """Parse exactly ``expected`` normalized boxes, clamping values to [0, 1]."""
    if expected < 1:
        raise ValueError("expected must be >= 1")
    payloads = _BBOX_RE.findall(raw or "")
    if len(payloads) != expected:
        raise AnnotationResponseError(
            "count_mismatch", f"expected {expected} bbox tags, found {len(payloads)}"
        )
    boxes = []
    for payload in payloads:
        body = payload.strip()
        if not (body.startswith("[") and body.endswith("]")):
            raise AnnotationResponseError("malformed_number", f"bbox payload {payload!r} is not a list")
        try:
            values = [float(v) for v in body[1:-1].split(",")]
        except ValueError:
            raise AnnotationResponseError("malformed_number", f"bad number in {payload!r}") from None
        if len(values) != 4 or not all(math.isfinite(v) for v in values):
            raise AnnotationResponseError("malformed_number", f"bbox {payload!r} needs 4 finite numbers")
        x1, y1, x2, y2 = (min(max(v, 0.0), 1.0) for v in values)
        if x1 > x2 or y1 > y2:
            raise AnnotationResponseError("inverted_box", f"bbox {payload!r} has min > max")
        boxes.append(PixelBBox(x1, y1, x2, y2, normalized=True))
    return boxes
